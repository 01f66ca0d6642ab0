"""Tests for the W2 surrogate, quadrature W2, BCE and the compound loss."""

import math

import numpy as np
import pytest
from scipy import stats

from beta_risk.betadist import BetaParams
from beta_risk.config import LossWeights
from beta_risk.errors import DomainError
from beta_risk.loss import (
    bce,
    compound,
    grad_compound,
    w2_surrogate,
    w2_true,
    w2_true_batch,
)

UNIT = LossWeights(lambda1=1.0, lambda2=1.0, class_weights=(1.0, 1.0))


def logit_of(p):
    return math.log(p / (1 - p))


def test_surrogate_examples():
    assert w2_surrogate(BetaParams(2, 5), BetaParams(2, 5)) == 0.0
    assert w2_surrogate(BetaParams(2, 2), BetaParams(2, 5)) == pytest.approx(0.05, abs=1e-5)
    assert w2_surrogate(BetaParams(10, 10), BetaParams(2, 2)) == pytest.approx(0.013110, abs=1e-5)


def test_surrogate_is_symmetric():
    a, b = BetaParams(0.7, 3.0), BetaParams(4.0, 1.5)
    assert w2_surrogate(a, b) == pytest.approx(w2_surrogate(b, a))


def test_true_w2_identity_and_positive():
    assert w2_true(BetaParams(2, 5), BetaParams(2, 5)) <= 1e-10
    assert w2_true(BetaParams(1, 1), BetaParams(2, 2)) > 0


def test_true_w2_matches_scipy_quadrature():
    nodes = 1024
    u = (np.arange(nodes) + 0.5) / nodes
    pred, target = BetaParams(3.0, 1.5), BetaParams(2.0, 5.0)
    expected = np.mean((stats.beta.ppf(u, 3.0, 1.5) - stats.beta.ppf(u, 2.0, 5.0)) ** 2)
    assert w2_true(pred, target, nodes) == pytest.approx(expected, rel=1e-6)


def test_true_w2_node_doubling_converges():
    target = BetaParams(2, 5)
    alphas = np.array([2.5, 1.5, 3.0, 2.0])
    betas = np.array([5.5, 4.5, 6.0, 4.0])
    coarse = w2_true_batch(alphas, betas, target, 1024)
    fine = w2_true_batch(alphas, betas, target, 2048)
    assert np.max(np.abs(coarse - fine)) <= 1e-6


def test_true_w2_batch_matches_scalar():
    target = BetaParams(2, 5)
    alphas = np.array([0.5, 3.0])
    betas = np.array([9.0, 0.75])
    batch = w2_true_batch(alphas, betas, target, 256)
    for i in range(2):
        assert batch[i] == pytest.approx(w2_true(BetaParams(alphas[i], betas[i]), target, 256))


def test_true_w2_needs_enough_nodes():
    with pytest.raises(DomainError):
        w2_true(BetaParams(1, 1), BetaParams(2, 2), nodes=10)


def test_surrogate_lower_bounds_true_w2():
    # matching moments never exceeds the squared W2 distance
    target = BetaParams(2, 5)
    for a, b in [(0.5, 0.5), (1, 1), (3, 7), (9, 2)]:
        assert w2_surrogate(BetaParams(a, b), target) <= w2_true(BetaParams(a, b), target) + 1e-6


def test_bce_examples():
    assert bce(0.0, 1, UNIT) == pytest.approx(math.log(2))
    assert bce(40.0, 1, LossWeights()) == pytest.approx(0.0, abs=1e-12)
    assert bce(logit_of(0.8), 1, LossWeights()) == pytest.approx(1.08312, abs=1e-4)


def test_bce_extreme_logits_are_finite():
    assert math.isfinite(bce(-800.0, 1, UNIT))
    assert bce(-800.0, 1, UNIT) == pytest.approx(800.0)
    assert bce(800.0, 0, UNIT) == pytest.approx(800.0)


def test_bce_rejects_bad_input():
    with pytest.raises(DomainError):
        bce(0.0, 2, UNIT)
    with pytest.raises(DomainError):
        bce(math.nan, 1, UNIT)


def test_compound_examples():
    target = BetaParams(2, 5)
    assert compound(target, target, 60.0, 1, UNIT) == pytest.approx(0.0, abs=1e-12)
    only_w2 = LossWeights(lambda1=0.0, lambda2=2.0)
    pred = BetaParams(2, 2)
    assert compound(pred, target, 1.3, 0, only_w2) == 2.0 * w2_surrogate(pred, target)
    value = compound(pred, target, logit_of(0.8), 1, LossWeights())
    assert value == pytest.approx(5.46560, abs=1e-3)


def test_grad_at_minimum_is_zero():
    target = BetaParams(2, 5)
    g = grad_compound(target, target, 0.0, 1, LossWeights(lambda1=0.0))
    assert g.d_alpha == 0.0 and g.d_beta == 0.0 and g.d_logit == 0.0


def test_grad_logit_half():
    g = grad_compound(BetaParams(2, 2), BetaParams(2, 2), 0.0, 1, UNIT)
    assert g.d_logit == pytest.approx(-0.5)


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_grad_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0.5, 8, 2)
    ta, tb = rng.uniform(0.5, 8, 2)
    z = rng.uniform(-3, 3)
    label = int(rng.integers(0, 2))
    w = LossWeights()
    target = BetaParams(ta, tb)
    g = grad_compound(BetaParams(a, b), target, z, label, w)
    h = 1e-5

    def f(a_, b_, z_):
        return compound(BetaParams(a_, b_), target, z_, label, w)

    numeric = (
        (f(a + h, b, z) - f(a - h, b, z)) / (2 * h),
        (f(a, b + h, z) - f(a, b - h, z)) / (2 * h),
        (f(a, b, z + h) - f(a, b, z - h)) / (2 * h),
    )
    for analytic, approx in zip((g.d_alpha, g.d_beta, g.d_logit), numeric):
        assert abs(analytic - approx) <= 1e-4 * max(abs(analytic), abs(approx)) + 1e-8
