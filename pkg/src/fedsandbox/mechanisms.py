"""Noise mechanisms and sensitivity bounds for bounded means and variances.

All mechanisms take an explicit ``numpy.random.Generator`` and an optional
``size`` so a harness can draw many independent releases of the same
statistic in one call. The neighbouring relation is replace-one, so dataset
sizes are public.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .errors import DomainError, ParameterError

_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float = 0.0
    sensitivity: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 <= self.delta < 1:
            raise ParameterError(f"delta must lie in [0, 1), got {self.delta}")
        if not self.sensitivity >= 0:
            raise ParameterError(f"sensitivity must be nonnegative, got {self.sensitivity}")

    def split(self, parts: int) -> PrivacyParams:
        """Equal share of (epsilon, delta) for one of ``parts`` composed releases."""
        return PrivacyParams(self.epsilon / parts, self.delta / parts, self.sensitivity)

    def with_sensitivity(self, sensitivity: float) -> PrivacyParams:
        return PrivacyParams(self.epsilon, self.delta, sensitivity)


@dataclass(frozen=True)
class NoiseSample:
    value: float
    mechanism: str
    params: PrivacyParams
    seed: int


def laplace(x, p: PrivacyParams, rng: np.random.Generator, size=None):
    """``x`` plus Laplace noise of scale sensitivity / epsilon."""
    scale = p.sensitivity / p.epsilon
    if scale == 0:
        return np.broadcast_to(np.asarray(x, dtype=float), size).copy() if size is not None else x
    return x + rng.laplace(0.0, scale, size)


def _gaussian_delta(s: float, eps: float) -> float:
    """Exact delta of the Gaussian mechanism with noise std ``s`` per unit sensitivity."""
    a = 1.0 / (2.0 * s)
    b = eps * s
    return special.ndtr(a - b) - math.exp(eps + special.log_ndtr(-a - b))


def analytic_gaussian_sigma(eps: float, delta: float) -> float:
    """Smallest noise std per unit sensitivity meeting the exact (eps, delta) condition."""
    f = lambda log_s: _gaussian_delta(math.exp(log_s), eps) - delta
    log_s = optimize.brentq(f, math.log(1e-8), math.log(1e8), xtol=1e-14, rtol=1e-12, maxiter=500)
    s = math.exp(log_s)
    # brentq may land just below the root; step up until the condition holds
    while _gaussian_delta(s, eps) > delta:
        s *= 1 + 1e-12
    return s


def gaussian_sigma(p: PrivacyParams) -> float:
    """Noise standard deviation of the Gaussian mechanism.

    Uses the classic ``sqrt(2 ln(1.25/delta)) / eps`` calibration for eps <= 1
    and the analytic calibration above that, where the classic bound is not
    valid.
    """
    if p.delta <= 0:
        raise ParameterError("the Gaussian mechanism needs delta > 0")
    if p.sensitivity == 0 or math.isinf(p.epsilon):
        return 0.0
    if p.epsilon <= 1:
        return p.sensitivity * math.sqrt(2.0 * math.log(1.25 / p.delta)) / p.epsilon
    return p.sensitivity * analytic_gaussian_sigma(p.epsilon, p.delta)


def gaussian(x, p: PrivacyParams, rng: np.random.Generator, size=None):
    sigma = gaussian_sigma(p)
    if sigma == 0:
        return np.broadcast_to(np.asarray(x, dtype=float), size).copy() if size is not None else x
    return x + rng.normal(0.0, sigma, size)


def lognormal_variance(v, p: PrivacyParams, rng: np.random.Generator, size=None):
    """Release a variance multiplicatively: ``v * exp(g)`` with g ~ N(-sigma^2/2, sigma^2).

    ``p.sensitivity`` is the sensitivity of ``log(v)``. The mean shift makes
    the release unbiased. Releases that underflow are held at the smallest
    positive double so the output stays strictly positive.
    """
    v_arr = np.asarray(v, dtype=float)
    if np.any(~(v_arr > 0)):
        raise DomainError("variance must be strictly positive")
    sigma = gaussian_sigma(p)
    if sigma == 0:
        return np.broadcast_to(v_arr, size).copy() if size is not None else v
    g = rng.normal(-0.5 * sigma**2, sigma, size)
    out = np.maximum(np.exp(np.log(v_arr) + g), _TINY)
    return out if size is not None or np.ndim(out) else float(out)


def mean_sensitivity(bounds: tuple[float, float], n: int) -> float:
    if n < 1:
        raise DomainError("mean sensitivity needs n >= 1")
    lo, hi = bounds
    return (hi - lo) / n


def variance_sensitivity(bounds: tuple[float, float], n: int) -> float:
    """Replace-one sensitivity of the population variance of n values in [lo, hi]."""
    if n < 2:
        raise DomainError("variance sensitivity needs n >= 2")
    lo, hi = bounds
    return (hi - lo) ** 2 * (n - 1) / n**2


def logvar_sensitivity(bounds: tuple[float, float], n: int, v_floor: float) -> float:
    """Sensitivity of log(variance) when the variance is floored at ``v_floor``.

    Uses |log v' - log v| <= |v' - v| / v_floor for v, v' >= v_floor.
    """
    if n < 2:
        raise DomainError("log-variance sensitivity needs n >= 2")
    if not v_floor > 0:
        raise DomainError("v_floor must be positive")
    lo, hi = bounds
    return min((hi - lo) ** 2 / n, variance_sensitivity(bounds, n)) / v_floor


def default_v_floor(bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    return 1e-4 * (hi - lo) ** 2


MECHANISMS = {"laplace": laplace, "gaussian": gaussian, "lognormal": lognormal_variance}


def release(x: float, mechanism: str, p: PrivacyParams, seed: int) -> NoiseSample:
    """One reproducible release of ``x``; identical arguments give identical values."""
    value = MECHANISMS[mechanism](x, p, np.random.default_rng(seed))
    return NoiseSample(float(value), mechanism, p, seed)
