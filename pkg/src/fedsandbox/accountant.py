"""Renyi-DP accounting for the Poisson-subsampled Gaussian mechanism."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import CalibrationError, DomainError, ParameterError

# orders past 256 are needed for eps near 0.01: log(1/delta) / (a - 1) bounds eps from below
DEFAULT_ORDERS = tuple(range(2, 65)) + (128, 256, 512, 1024, 2048, 4096)
SIGMA_RANGE = (0.3, 1e4)


def rdp_subsampled_gaussian(q: float, sigma: float, alpha: int) -> float:
    """RDP at integer order ``alpha`` of one Poisson-subsampled Gaussian step.

    For integer orders the Renyi divergence between the subsampled mixture and
    the base Gaussian has the closed binomial expansion

        A = sum_i C(alpha, i) q^i (1-q)^(alpha-i) exp((i^2 - i) / (2 sigma^2))

    and the RDP value is log(A) / (alpha - 1). Evaluated in log space.
    """
    if not 0 < q <= 1:
        raise ParameterError(f"sampling rate must lie in (0, 1], got {q}")
    if not sigma > 0:
        raise ParameterError(f"noise multiplier must be positive, got {sigma}")
    if alpha != int(alpha) or alpha <= 1:
        raise ParameterError(f"order must be an integer > 1, got {alpha}")
    alpha = int(alpha)
    if q == 1:
        return alpha / (2 * sigma**2)
    i = np.arange(alpha + 1, dtype=float)
    log_terms = (
        special.gammaln(alpha + 1)
        - special.gammaln(i + 1)
        - special.gammaln(alpha - i + 1)
        + i * math.log(q)
        + (alpha - i) * math.log1p(-q)
        + (i * i - i) / (2 * sigma**2)
    )
    return float(max(special.logsumexp(log_terms), 0.0) / (alpha - 1))


@dataclass(frozen=True)
class RdpCurve:
    orders: tuple[int, ...]
    values: np.ndarray
    steps: int
    q: float
    sigma: float

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


def rdp_curve(q: float, sigma: float, orders=DEFAULT_ORDERS) -> RdpCurve:
    """Single-step RDP curve over ``orders``."""
    values = [rdp_subsampled_gaussian(q, sigma, a) for a in orders]
    return RdpCurve(tuple(orders), np.array(values), 1, q, sigma)


def compose(curve: RdpCurve, steps: int) -> RdpCurve:
    """Repeat ``curve`` ``steps`` times; RDP adds linearly."""
    if steps < 0:
        raise ParameterError("steps must be nonnegative")
    return RdpCurve(curve.orders, curve.values * steps, curve.steps * steps, curve.q, curve.sigma)


def to_eps_delta(curve: RdpCurve, delta: float) -> float:
    """Convert to (eps, delta)-DP: eps = min_a [ rdp(a) + log(1/delta) / (a - 1) ]."""
    if not curve.orders:
        raise DomainError("empty RDP curve")
    if not 0 < delta < 1:
        raise ParameterError("delta must lie in (0, 1)")
    orders = np.asarray(curve.orders, dtype=float)
    return float(np.min(curve.values + math.log(1 / delta) / (orders - 1)))


def dpsgd_epsilon(sigma: float, q: float, steps: int, delta: float, orders=DEFAULT_ORDERS) -> float:
    if sigma == 0:
        return math.inf
    return to_eps_delta(compose(rdp_curve(q, sigma, orders), steps), delta)


@functools.lru_cache(maxsize=4096)
def calibrate_sigma(
    target_eps: float,
    delta: float,
    q: float,
    steps: int,
    orders: tuple[int, ...] = DEFAULT_ORDERS,
    rtol: float = 1e-6,
) -> float:
    """Smallest noise multiplier in [0.3, 1e4] whose DP-SGD run stays within ``target_eps``.

    Bisection in log sigma down to relative width ``rtol``; the returned sigma
    is the upper end of the final bracket, so the achieved epsilon never
    exceeds the target. If even the smallest multiplier meets the target, the
    range floor is returned. An infinite target means no noise (sigma = 0).
    """
    if not target_eps > 0:
        raise ParameterError("target epsilon must be positive")
    if math.isinf(target_eps):
        return 0.0
    lo, hi = SIGMA_RANGE
    eps = lambda s: dpsgd_epsilon(s, q, steps, delta, orders)
    if eps(hi) > target_eps:
        raise CalibrationError(f"epsilon {target_eps} unreachable with sigma <= {hi}")
    if eps(lo) <= target_eps:
        return lo
    while hi / lo > 1 + rtol:
        mid = math.sqrt(lo * hi)
        if eps(mid) <= target_eps:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class RdpAccountant:
    """Running RDP ledger for heterogeneous compositions (e.g. local vs global noise)."""

    orders: tuple[int, ...] = DEFAULT_ORDERS
    total: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.total is None:
            self.total = np.zeros(len(self.orders))

    def step(self, q: float, sigma: float, count: int = 1) -> None:
        self.total = self.total + compose(rdp_curve(q, sigma, self.orders), count).values

    def epsilon(self, delta: float) -> float:
        return to_eps_delta(RdpCurve(self.orders, self.total, 1, float("nan"), float("nan")), delta)
