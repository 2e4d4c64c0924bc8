"""Federated two-sample Welch t-test under the three privacy scenarios.

Every scenario releases four statistics: the mean and the variance of the
selected column in each target class. Means go through the Gaussian
mechanism, variances through the log-normal mechanism, each with a quarter
of the (epsilon, delta) budget. The t statistic is then recomputed from the
released values, which is pure post-processing.

Scenario functions accept ``trials``; with it set, every field of the
returned TTestResult is an array holding that many independent releases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import mechanisms as mech
from .data import Shards, Table
from .errors import DegenerateDataError, DomainError, ConfigurationError
from .federation import Scenario
from .mechanisms import PrivacyParams
from .secure_agg import FixedPointCodec, codec_for, secure_sum


@dataclass(frozen=True)
class PartialStat:
    n: int = 0
    sum: float = 0.0
    sumsq: float = 0.0

    def __post_init__(self):
        if self.n < 0:
            raise DomainError("negative count")
        if self.n > 0 and self.sumsq < self.sum**2 / self.n - 1e-9 * max(1.0, abs(self.sumsq)):
            raise DomainError("sum of squares below sum^2 / n")

    def __add__(self, other: PartialStat) -> PartialStat:
        return PartialStat(self.n + other.n, self.sum + other.sum, self.sumsq + other.sumsq)

    @property
    def mean(self) -> float:
        return self.sum / self.n

    @property
    def pop_var(self) -> float:
        return max(self.sumsq / self.n - self.mean**2, 0.0)

    @property
    def var(self) -> float:
        """Sample variance (n - 1 denominator)."""
        return self.pop_var * self.n / (self.n - 1)

    def as_vector(self) -> np.ndarray:
        return np.array([self.n, self.sum, self.sumsq], dtype=float)


def merge(partials) -> PartialStat:
    total = PartialStat()
    for p in partials:
        total = total + p
    return total


@dataclass(frozen=True)
class Moments:
    """Released group summary: public count, mean and sample variance."""

    n: int
    mean: float | np.ndarray
    var: float | np.ndarray


@dataclass(frozen=True)
class TTestResult:
    t: float | np.ndarray
    df: float | np.ndarray
    mean_a: float | np.ndarray
    mean_b: float | np.ndarray
    var_a: float | np.ndarray
    var_b: float | np.ndarray
    n_a: int
    n_b: int
    scenario: Scenario | None = None
    epsilon: float = math.inf
    events: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class StatsConfig:
    """Knobs of the t-test release.

    ``v_floor_frac`` sets the variance floor as a fraction of the squared
    column range. ``direct_laplace`` switches scenarios 1 and 3 to releasing
    the clipped t statistic itself with Laplace noise, clip range
    [-tstat_range, tstat_range].
    """

    budget_parts: int = 4
    v_floor_frac: float = 1e-4
    direct_laplace: bool = False
    tstat_range: float = 20.0
    frac_bits: int = 16

    def v_floor(self, bounds) -> float:
        lo, hi = bounds
        return self.v_floor_frac * (hi - lo) ** 2


def local_partials(shard: Table, column: str, by: str | None = None) -> tuple[PartialStat, PartialStat]:
    """Exact (n, sum, sum of squares) of ``column`` for target class 0 and class 1."""
    by = by or shard.target
    x = shard.column(column)
    y = shard.column(by).astype(int)
    out = []
    for cls in (0, 1):
        v = x[y == cls]
        out.append(PartialStat(int(v.size), float(v.sum()), float(np.dot(v, v))))
    return out[0], out[1]


def welch_t(a, b, scenario: Scenario | None = None, epsilon: float = math.inf) -> TTestResult:
    """Welch two-sample t statistic and Welch-Satterthwaite degrees of freedom.

    ``a`` and ``b`` are anything with ``n``, ``mean`` and ``var`` (sample
    variance) attributes; mean and var may be arrays of releases.
    """
    if a.n < 2 or b.n < 2:
        raise DomainError("each group needs at least two rows")
    va, vb = np.asarray(a.var, dtype=float), np.asarray(b.var, dtype=float)
    if np.any((va == 0) & (vb == 0)):
        raise DegenerateDataError("both groups have zero variance")
    sa, sb = va / a.n, vb / b.n
    se2 = sa + sb
    # released variances can underflow; df is then nan for that draw
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t = (np.asarray(a.mean) - np.asarray(b.mean)) / np.sqrt(se2)
        df = se2**2 / (sa**2 / (a.n - 1) + sb**2 / (b.n - 1))
    scalar = np.ndim(t) == 0
    conv = float if scalar else np.asarray
    return TTestResult(
        t=conv(t), df=conv(df), mean_a=conv(a.mean), mean_b=conv(b.mean), var_a=conv(va), var_b=conv(vb),
        n_a=int(a.n), n_b=int(b.n), scenario=scenario, epsilon=epsilon,
    )


def _check_not_degenerate(a: PartialStat, b: PartialStat) -> None:
    if a.n >= 2 and b.n >= 2 and a.pop_var == 0 and b.pop_var == 0:
        raise DegenerateDataError("selected column is constant within both classes")


def _protect_group(
    s: PartialStat, bounds, p: PrivacyParams, cfg: StatsConfig, rng, size
) -> tuple[np.ndarray | float, np.ndarray | float, bool]:
    """Release (mean, sample variance) of one group under its share of the budget.

    Returns the released mean, the released sample variance (or None if the
    group is too small to release one) and whether the true variance was
    raised to the floor before release.
    """
    share = p.split(cfg.budget_parts)
    mean = mech.gaussian(s.mean, share.with_sensitivity(mech.mean_sensitivity(bounds, s.n)), rng, size)
    if s.n < 2:
        return mean, None, False
    v_floor = cfg.v_floor(bounds)
    floored = s.pop_var < v_floor
    sens = mech.logvar_sensitivity(bounds, s.n, v_floor)
    pop = mech.lognormal_variance(max(s.pop_var, v_floor), share.with_sensitivity(sens), rng, size)
    return mean, pop * s.n / (s.n - 1), floored


def _release_global(
    a: PartialStat, b: PartialStat, bounds, p: PrivacyParams, cfg: StatsConfig, rng, trials, scenario
) -> TTestResult:
    _check_not_degenerate(a, b)
    if cfg.direct_laplace:
        return _release_tstat_laplace(a, b, p, cfg, rng, trials, scenario)
    ma, va, fa = _protect_group(a, bounds, p, cfg, rng, trials)
    mb, vb, fb = _protect_group(b, bounds, p, cfg, rng, trials)
    res = welch_t(Moments(a.n, ma, va), Moments(b.n, mb, vb), scenario, p.epsilon)
    res.events.update(variance_floored=int(fa) + int(fb))
    return res


def _release_tstat_laplace(a, b, p: PrivacyParams, cfg: StatsConfig, rng, trials, scenario) -> TTestResult:
    plain = welch_t(a, b)
    clipped = float(np.clip(plain.t, -cfg.tstat_range, cfg.tstat_range))
    t = mech.laplace(clipped, PrivacyParams(p.epsilon, 0.0, 2 * cfg.tstat_range), rng, trials)
    full = lambda v: np.full(trials, v) if trials is not None else v
    return TTestResult(
        t=t, df=full(plain.df), mean_a=full(plain.mean_a), mean_b=full(plain.mean_b),
        var_a=full(plain.var_a), var_b=full(plain.var_b), n_a=a.n, n_b=b.n,
        scenario=scenario, epsilon=p.epsilon, events={"direct_laplace": 1},
    )


def plaintext_t(t: Table, col: str) -> TTestResult:
    a, b = local_partials(t, col)
    return welch_t(a, b)


def run_scenario1(
    t: Table, col: str, p: PrivacyParams, rng: np.random.Generator, trials: int | None = None,
    cfg: StatsConfig = StatsConfig(),
) -> TTestResult:
    """Centralised data, global-n calibration, noise on the four final statistics."""
    a, b = local_partials(t, col)
    return _release_global(a, b, t.spec(col).bounds, p, cfg, rng, trials, Scenario.CENTRAL)


def run_scenario2(
    shards: Shards, col: str, p: PrivacyParams, rng: np.random.Generator, trials: int | None = None,
    cfg: StatsConfig = StatsConfig(),
) -> TTestResult:
    """Every node releases its own per-class mean and variance; the server pools them.

    Nodes with fewer than two rows in a class release only the mean there.
    Pooled population variance is the count-weighted within-node variance
    (over nodes that released one) plus the spread of the released node
    means around the pooled mean.
    """
    bounds = shards.origin.spec(col).bounds
    v_floor = cfg.v_floor(bounds)
    partials = [local_partials(s, col) for s in shards]
    _check_not_degenerate(*(merge(p_[c] for p_ in partials) for c in (0, 1)))
    groups, events = [], {"variance_omitted": 0, "variance_floored": 0, "pooled_floored": 0}
    for cls in (0, 1):
        counts, means, pops = [], [], []
        for node in partials:
            s = node[cls]
            if s.n == 0:
                continue
            m, v, floored = _protect_group(s, bounds, p, cfg, rng, trials)
            counts.append(s.n)
            means.append(m)
            pops.append(None if v is None else v * (s.n - 1) / s.n)
            events["variance_omitted"] += v is None
            events["variance_floored"] += floored
        n = np.array(counts, dtype=float)
        N = int(n.sum())
        M = np.array(means, dtype=float).reshape(len(counts), -1)
        mean = (n[:, None] * M).sum(axis=0) / N
        has_var = [i for i, v in enumerate(pops) if v is not None]
        if has_var:
            V = np.array([pops[i] for i in has_var], dtype=float).reshape(len(has_var), -1)
            w = n[has_var, None]
            within = (w * V).sum(axis=0) / w.sum()
        else:
            within = np.zeros_like(mean)
        # one node has no between-node spread; computing it leaves rounding residue
        between = (n[:, None] * (M - mean) ** 2).sum(axis=0) / N if len(counts) > 1 else 0.0
        pooled = within + between
        low = ~(pooled > 0)
        events["pooled_floored"] += int(np.count_nonzero(low))
        pooled = np.where(low, v_floor, pooled) * N / (N - 1)
        if trials is None:
            mean, pooled = float(mean[0]), float(pooled[0])
        groups.append(Moments(N, mean, pooled))
    res = welch_t(groups[0], groups[1], Scenario.LOCAL, p.epsilon)
    res.events.update(events)
    return res


def aggregate_partials_securely(
    shards: Shards, col: str, codec: FixedPointCodec | None = None, round_id: int = 0, frac_bits: int = 16,
) -> tuple[PartialStat, PartialStat]:
    """Sum per-node (n, sum, sumsq) for both classes through one secure aggregation round."""
    partials = [local_partials(s, col) for s in shards]
    vectors = [np.concatenate([a.as_vector(), b.as_vector()]) for a, b in partials]
    if codec is None:
        lo, hi = shards.origin.spec(col).bounds
        biggest = max(len(s) for s in shards) * max(lo * lo, hi * hi, 1.0)
        codec = codec_for(len(shards), biggest, frac_bits)
    total = secure_sum(vectors, codec, round_id=round_id)
    out = []
    for off in (0, 3):
        n = int(round(total[off]))
        out.append(PartialStat(n, float(total[off + 1]), max(float(total[off + 2]), total[off + 1] ** 2 / max(n, 1))))
    return out[0], out[1]


def run_scenario3(
    shards: Shards, col: str, p: PrivacyParams, codec: FixedPointCodec | None, rng: np.random.Generator,
    trials: int | None = None, cfg: StatsConfig = StatsConfig(),
) -> TTestResult:
    """Exact partials through secure aggregation, then the scenario-1 release on the totals.

    The aggregate is deterministic given the data, so one aggregation round
    serves all ``trials`` noise draws.
    """
    a, b = aggregate_partials_securely(shards, col, codec, frac_bits=cfg.frac_bits)
    res = _release_global(a, b, shards.origin.spec(col).bounds, p, cfg, rng, trials, Scenario.SECURE)
    return res


def run_scenario(
    scenario: Scenario, table: Table, shards: Shards, col: str, p: PrivacyParams, rng, trials=None,
    cfg: StatsConfig = StatsConfig(),
) -> TTestResult:
    scenario = Scenario.parse(scenario)
    if scenario is Scenario.CENTRAL:
        return run_scenario1(table, col, p, rng, trials, cfg)
    if scenario is Scenario.LOCAL:
        if cfg.direct_laplace:
            raise ConfigurationError("direct t-stat release needs the full data; not available in the local scenario")
        return run_scenario2(shards, col, p, rng, trials, cfg)
    return run_scenario3(shards, col, p, None, rng, trials, cfg)
