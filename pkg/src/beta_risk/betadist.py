"""
Exact Beta-distribution mathematics.

Moments, density, CDF via the regularized incomplete beta function
(modified Lentz continued fraction) and the quantile via bracketing
bisection polished with Newton steps. The scalar API works on
:class:`BetaParams`; the array helpers broadcast over shapes so that grid
sweeps can evaluate many distributions at once.
"""

import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy.special import betaln

from .errors import DomainError, NumericError

ArrayLike = Union[float, np.ndarray]

CF_MAX_ITER = 300
CF_TOL = 1e-14
_TINY = 1e-300

BISECTION_WIDTH = 1e-6
NEWTON_STEPS = 8
NEWTON_DONE = 1e-13
QUANTILE_TOL = 1e-10


@dataclass(frozen=True)
class BetaParams:
    """Shape parameters (alpha, beta) of a Beta distribution."""

    alpha: float
    beta: float

    def __post_init__(self) -> None:
        for name in ("alpha", "beta"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise DomainError(f"Beta {name} must be finite and > 0, got {value}")
        # normalise numpy scalars so equality and json output are plain floats
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))

    def as_tuple(self) -> Tuple[float, float]:
        return (self.alpha, self.beta)


def mean(p: BetaParams) -> float:
    """Mean alpha / (alpha + beta)."""
    return p.alpha / (p.alpha + p.beta)


def variance(p: BetaParams) -> float:
    """Variance alpha*beta / ((alpha+beta)^2 (alpha+beta+1))."""
    s = p.alpha + p.beta
    return p.alpha * p.beta / (s * s * (s + 1.0))


def std_dev(p: BetaParams) -> float:
    return math.sqrt(variance(p))


def _continued_fraction(a: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate the incomplete-beta continued fraction by modified Lentz."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _TINY, _TINY, d)
    d = 1.0 / d
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)

    for m in range(1, CF_MAX_ITER + 1):
        m2 = 2 * m
        # even step
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        h = np.where(active, h * d * c, h)
        # odd step
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(active, h * delta, h)
        active &= np.abs(delta - 1.0) >= CF_TOL
        if not active.any():
            return h

    raise NumericError(
        f"incomplete beta continued fraction did not converge in {CF_MAX_ITER} "
        f"iterations for {int(active.sum())} point(s)"
    )


def regularized_incomplete_beta(a: ArrayLike, b: ArrayLike, x: ArrayLike) -> np.ndarray:
    """I_x(a, b) for broadcastable arrays; x must lie in [0, 1]."""
    a, b, x = np.broadcast_arrays(
        np.asarray(a, dtype=float), np.asarray(b, dtype=float), np.asarray(x, dtype=float)
    )
    if np.any((x < 0.0) | (x > 1.0)) or np.any(np.isnan(x)):
        raise DomainError("incomplete beta argument x must lie in [0, 1]")

    result = np.where(x >= 1.0, 1.0, 0.0)
    interior = (x > 0.0) & (x < 1.0)
    if not interior.any():
        return result

    ai, bi, xi = a[interior], b[interior], x[interior]
    log_front = ai * np.log(xi) + bi * np.log1p(-xi) - betaln(ai, bi)
    # the fraction converges fast below (a+1)/(a+b+2); use the symmetry above it
    swap = xi > (ai + 1.0) / (ai + bi + 2.0)
    aa = np.where(swap, bi, ai)
    bb = np.where(swap, ai, bi)
    xx = np.where(swap, 1.0 - xi, xi)
    frac = _continued_fraction(aa, bb, xx)
    tail = np.exp(log_front) * frac / aa
    result[interior] = np.where(swap, 1.0 - tail, tail)
    return result


def log_pdf_array(a: ArrayLike, b: ArrayLike, x: ArrayLike) -> np.ndarray:
    """Log density for broadcastable arrays with x strictly inside (0, 1)."""
    a, b, x = (np.asarray(v, dtype=float) for v in (a, b, x))
    return (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - betaln(a, b)


def cdf(p: BetaParams, x: ArrayLike) -> ArrayLike:
    """Regularized incomplete beta I_x(alpha, beta)."""
    values = regularized_incomplete_beta(p.alpha, p.beta, x)
    return float(values) if np.ndim(x) == 0 else values


def pdf(p: BetaParams, x: ArrayLike) -> ArrayLike:
    """Density x^(a-1) (1-x)^(b-1) / B(a, b), computed in log space."""
    xs = np.asarray(x, dtype=float)
    if np.any((xs < 0.0) | (xs > 1.0)) or np.any(np.isnan(xs)):
        raise DomainError("density argument must lie in [0, 1]")
    at_zero = xs == 0.0
    at_one = xs == 1.0
    if (at_zero.any() and p.alpha < 1.0) or (at_one.any() and p.beta < 1.0):
        raise DomainError(
            f"density of Beta({p.alpha}, {p.beta}) is unbounded at the endpoint"
        )

    out = np.zeros_like(xs)
    inner = ~(at_zero | at_one)
    out[inner] = np.exp(log_pdf_array(p.alpha, p.beta, xs[inner]))
    # finite endpoint densities: shape exactly 1 gives 1/B, larger shapes give 0
    if at_zero.any() and p.alpha == 1.0:
        out[at_zero] = math.exp(-betaln(p.alpha, p.beta))
    if at_one.any() and p.beta == 1.0:
        out[at_one] = math.exp(-betaln(p.alpha, p.beta))
    return float(out) if xs.ndim == 0 else out


def beta_quantiles(a: ArrayLike, b: ArrayLike, u: ArrayLike) -> np.ndarray:
    """Inverse CDF for broadcastable arrays, u strictly inside (0, 1).

    Bisection narrows every bracket to BISECTION_WIDTH, then up to
    NEWTON_STEPS safeguarded Newton steps polish the root. Points whose
    residual stays above QUANTILE_TOL raise NumericError.
    """
    a, b, u = np.broadcast_arrays(
        np.asarray(a, dtype=float), np.asarray(b, dtype=float), np.asarray(u, dtype=float)
    )
    if np.any(~((u > 0.0) & (u < 1.0))):
        raise DomainError("quantile level must lie strictly inside (0, 1)")

    lo = np.zeros(u.shape)
    hi = np.ones(u.shape)
    while np.max(hi - lo) > BISECTION_WIDTH:
        mid = 0.5 * (lo + hi)
        below = regularized_incomplete_beta(a, b, mid) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)

    x = 0.5 * (lo + hi)
    # roots inside the first or last bracket: start from the tail power law
    # I_x ~ x^a / (a B(a, b)), which is accurate where the midpoint is not
    log_b = betaln(a, b)
    with np.errstate(over="ignore", under="ignore"):
        low_guess = np.exp((np.log(u) + np.log(a) + log_b) / a)
        high_guess = 1.0 - np.exp((np.log1p(-u) + np.log(b) + log_b) / b)
    use_low = (lo == 0.0) & (low_guess > 0.0) & (low_guess < hi)
    use_high = (hi == 1.0) & (high_guess > lo) & (high_guess < 1.0)
    x = np.where(use_low, low_guess, np.where(use_high, high_guess, x))
    residual = regularized_incomplete_beta(a, b, x) - u
    for _ in range(NEWTON_STEPS):
        # converged points stay put while the rest of the batch iterates
        done = np.abs(residual) <= NEWTON_DONE
        if done.all():
            break
        lo = np.where(~done & (residual < 0.0), x, lo)
        hi = np.where(~done & (residual > 0.0), x, hi)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            density = np.exp(log_pdf_array(a, b, x))
            step = x - residual / density
        # a step that rounds onto a bracket end is still a valid Newton step
        inside = np.isfinite(step) & (step >= lo) & (step <= hi)
        x = np.where(done, x, np.where(inside, step, 0.5 * (lo + hi)))
        residual = np.where(done, residual, regularized_incomplete_beta(a, b, x) - u)

    # roots that round to 0 or 1 in double precision map to the nearest
    # representable interior point
    top = np.nextafter(1.0, 0.0)
    bottom = np.finfo(float).tiny
    at_top = (hi == 1.0) & (regularized_incomplete_beta(a, b, np.full(u.shape, top)) < u)
    at_bottom = (lo == 0.0) & (regularized_incomplete_beta(a, b, np.full(u.shape, bottom)) > u)
    x = np.where(at_top, top, np.where(at_bottom, bottom, x))

    # a bracket collapsed to float resolution is as converged as it can get
    collapsed = (hi - lo) <= 4.0 * np.spacing(np.maximum(x, _TINY))
    failed = (np.abs(residual) > QUANTILE_TOL) & ~collapsed & ~at_top & ~at_bottom
    if failed.any():
        raise NumericError(
            f"Beta quantile did not converge for {int(failed.sum())} point(s); "
            f"worst residual {float(np.max(np.abs(residual[failed]))):.3e}"
        )
    return x


def quantile(p: BetaParams, u: ArrayLike) -> ArrayLike:
    """Inverse CDF: x with cdf(p, x) = u."""
    values = beta_quantiles(p.alpha, p.beta, u)
    return float(values) if np.ndim(u) == 0 else values


def credible_interval(p: BetaParams, level: float = 0.95) -> Tuple[float, float]:
    """Equal-tailed interval holding `level` of the probability mass."""
    if not 0.0 < level < 1.0:
        raise DomainError(f"credible level must lie in (0, 1), got {level}")
    tail = 0.5 * (1.0 - level)
    lo, hi = beta_quantiles(p.alpha, p.beta, np.array([tail, 1.0 - tail]))
    return float(lo), float(hi)
