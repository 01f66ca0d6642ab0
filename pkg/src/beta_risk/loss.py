"""
Training objectives for Beta-distribution regression.

The distribution head is supervised by a closed-form surrogate of the
squared Wasserstein-2 distance, (mu_p - mu_t)^2 + (sigma_p - sigma_t)^2.
The classification head is supervised by class-weighted binary
cross-entropy on the logit. ``w2_true`` integrates the squared difference
of quantile functions and is used to measure the surrogate's error.
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .betadist import BetaParams, beta_quantiles, mean, std_dev
from .config import LossWeights
from .errors import DomainError

DEFAULT_NODES = 1024
MIN_NODES = 64


@dataclass(frozen=True)
class CompoundGradient:
    """Partial derivatives of the compound loss."""

    d_alpha: float
    d_beta: float
    d_logit: float


def moments_with_grad(
    alpha: np.ndarray, beta: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Mean and std of Beta(alpha, beta) with their partials in alpha and beta.

    Returns (mu, sigma, dmu_da, dmu_db, dsigma_da, dsigma_db); works
    elementwise on arrays.
    """
    s = alpha + beta
    mu = alpha / s
    var = alpha * beta / (s * s * (s + 1.0))
    sigma = np.sqrt(var)
    dmu_da = beta / (s * s)
    dmu_db = -alpha / (s * s)
    common = 2.0 / s + 1.0 / (s + 1.0)
    # d var / d a = var * (1/a - 2/s - 1/(s+1)); d sigma = d var / (2 sigma)
    dsigma_da = 0.5 * sigma * (1.0 / alpha - common)
    dsigma_db = 0.5 * sigma * (1.0 / beta - common)
    return mu, sigma, dmu_da, dmu_db, dsigma_da, dsigma_db


def w2_surrogate(pred: BetaParams, target: BetaParams) -> float:
    """(mu_p - mu_t)^2 + (sigma_p - sigma_t)^2."""
    return (mean(pred) - mean(target)) ** 2 + (std_dev(pred) - std_dev(target)) ** 2


def w2_true_batch(
    alphas: np.ndarray,
    betas: np.ndarray,
    target: BetaParams,
    nodes: int = DEFAULT_NODES,
) -> np.ndarray:
    """Squared W2 from each Beta(alphas[i], betas[i]) to `target`.

    Midpoint quadrature of the squared quantile difference on `nodes`
    uniform levels.
    """
    if nodes < MIN_NODES:
        raise DomainError(f"w2_true needs at least {MIN_NODES} nodes, got {nodes}")
    u = (np.arange(nodes) + 0.5) / nodes
    q_target = beta_quantiles(target.alpha, target.beta, u)
    a = np.asarray(alphas, dtype=float).reshape(-1, 1)
    b = np.asarray(betas, dtype=float).reshape(-1, 1)
    q_pred = beta_quantiles(a, b, u[np.newaxis, :])
    return np.mean((q_pred - q_target[np.newaxis, :]) ** 2, axis=1)


def w2_true(pred: BetaParams, target: BetaParams, nodes: int = DEFAULT_NODES) -> float:
    """Squared Wasserstein-2 distance by quantile-function quadrature."""
    values = w2_true_batch(np.array([pred.alpha]), np.array([pred.beta]), target, nodes)
    return float(values[0])


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Logistic function without overflow for large |z|."""
    z = np.asarray(z, dtype=float)
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def bce_array(logits: np.ndarray, labels: np.ndarray, w: LossWeights) -> np.ndarray:
    """Per-sample weighted BCE from logits, in log-sum-exp form."""
    z = np.asarray(logits, dtype=float)
    y = np.asarray(labels, dtype=float)
    weights = np.where(y > 0.5, w.class_weights[1], w.class_weights[0])
    # -[y log p + (1-y) log(1-p)] = max(z, 0) - z*y + log(1 + exp(-|z|))
    return weights * (np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z))))


def _check_label(label: int) -> None:
    if label not in (0, 1):
        raise DomainError(f"label must be 0 or 1, got {label!r}")


def bce(logit: float, label: int, w: LossWeights) -> float:
    """Class-weighted binary cross-entropy of one logit."""
    _check_label(label)
    if not math.isfinite(logit):
        raise DomainError(f"logit must be finite, got {logit}")
    return float(bce_array(np.array([logit]), np.array([label]), w)[0])


def compound(
    pred: BetaParams, target: BetaParams, logit: float, label: int, w: LossWeights
) -> float:
    """lambda1 * BCE + lambda2 * W2 surrogate."""
    return w.lambda1 * bce(logit, label, w) + w.lambda2 * w2_surrogate(pred, target)


def compound_batch_grad(
    alpha: np.ndarray,
    beta: np.ndarray,
    logits: np.ndarray,
    target_alpha: np.ndarray,
    target_beta: np.ndarray,
    labels: np.ndarray,
    w: LossWeights,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-sample compound loss parts and gradients over a batch.

    Returns (bce, w2, d_alpha, d_beta, d_logit, total) where the
    gradients are of the per-sample total.
    """
    mu_p, sig_p, dmu_da, dmu_db, dsig_da, dsig_db = moments_with_grad(alpha, beta)
    mu_t, sig_t, *_ = moments_with_grad(target_alpha, target_beta)
    dmu = mu_p - mu_t
    dsig = sig_p - sig_t
    w2 = dmu * dmu + dsig * dsig
    d_alpha = w.lambda2 * 2.0 * (dmu * dmu_da + dsig * dsig_da)
    d_beta = w.lambda2 * 2.0 * (dmu * dmu_db + dsig * dsig_db)

    y = np.asarray(labels, dtype=float)
    weights = np.where(y > 0.5, w.class_weights[1], w.class_weights[0])
    ce = bce_array(logits, y, w)
    d_logit = w.lambda1 * weights * (sigmoid(logits) - y)
    total = w.lambda1 * ce + w.lambda2 * w2
    return ce, w2, d_alpha, d_beta, d_logit, total


def grad_compound(
    pred: BetaParams, target: BetaParams, logit: float, label: int, w: LossWeights
) -> CompoundGradient:
    """Analytic gradient of the compound loss in (alpha, beta, logit)."""
    _check_label(label)
    _, _, d_alpha, d_beta, d_logit, _ = compound_batch_grad(
        np.array([pred.alpha]),
        np.array([pred.beta]),
        np.array([logit], dtype=float),
        np.array([target.alpha]),
        np.array([target.beta]),
        np.array([label]),
        w,
    )
    return CompoundGradient(float(d_alpha[0]), float(d_beta[0]), float(d_logit[0]))
