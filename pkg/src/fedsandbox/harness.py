"""Epsilon sweeps, confidence bands, critical-epsilon estimation and table output.

A sweep evaluates every (epsilon, K, scenario) cell. Each cell draws its own
random stream from ``SeedSequence([master_seed, purpose, scenario, K,
eps_index])`` so results do not depend on execution order or on how many
worker processes share the work.

Sweep results are written as long-format CSV summaries (one row per cell and
quantity) plus a ``key = value`` metadata sidecar. Critical epsilons are
computed from those summaries, so ``tables`` can run on saved sweeps.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import data as data_mod
from .data import DATASETS, balanced_split, encode, load_dataset, selected_column, shard
from .errors import FedSandboxError
from .fed_learn import TrainConfig, TrainReport, evaluate, train, train_nonprivate
from .fed_stats import StatsConfig, plaintext_t, run_scenario
from .federation import KS_DEFAULT, Scenario
from .mechanisms import PrivacyParams
from .stats import t_critical, welch_pvalue

log = logging.getLogger(__name__)

STATS_QUANTITIES = ("t", "mean_a", "mean_b", "var_a", "var_b")
_PURPOSE = {"split": 1, "shard": 2, "stats": 3, "train": 4, "baseline": 5, "subsample": 6}


def log_grid(lo: float, hi: float, n: int) -> tuple[float, ...]:
    return tuple(float(v) for v in np.logspace(math.log10(lo), math.log10(hi), n))


def seed_for(master: int, purpose: str, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master, _PURPOSE[purpose], *key])


def int_seed(master: int, purpose: str, *key: int) -> int:
    return int(seed_for(master, purpose, *key).generate_state(1)[0])


@dataclass(frozen=True)
class SweepConfig:
    dataset: str = "heart"
    eps_grid: tuple[float, ...] = log_grid(0.01, 100, 25)
    ks: tuple[int, ...] = KS_DEFAULT
    trials: int = 10000
    scenarios: tuple[Scenario, ...] = (Scenario.CENTRAL, Scenario.LOCAL, Scenario.SECURE)
    master_seed: int = 0
    column: str | None = None
    delta: float | None = None
    stats: StatsConfig = StatsConfig()
    epochs: int = 20
    clip_norm: float = 1.0
    lr: float = 0.01
    max_batch: int = 242
    baseline_clip: bool = True
    mask_rounds: bool = True
    subsample: int | None = None
    workers: int = 1

    def __post_init__(self):
        grid = tuple(float(e) for e in self.eps_grid)
        if any(b <= a for a, b in zip(grid, grid[1:])) or not grid:
            raise ValueError("epsilon grid must be strictly increasing and nonempty")
        if self.trials < 50:
            raise ValueError("at least 50 trials per cell")
        object.__setattr__(self, "eps_grid", grid)
        object.__setattr__(self, "scenarios", tuple(Scenario.parse(s) for s in self.scenarios))
        object.__setattr__(self, "ks", tuple(sorted(set(int(k) for k in self.ks))))

    @classmethod
    def desk(cls, kind: str = "stats", **overrides) -> SweepConfig:
        """Reduced preset: 9 grid points, K in {1, 4, 16, 64}, 2000 t-stat or 50 training trials."""
        base = dict(eps_grid=log_grid(0.01, 100, 9), ks=(1, 4, 16, 64), trials=2000 if kind == "stats" else 50)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def paper(cls, kind: str = "stats", **overrides) -> SweepConfig:
        base = dict(trials=10000 if kind == "stats" else 50)
        base.update(overrides)
        return cls(**base)

    def cells(self) -> list[tuple[Scenario, int, int]]:
        """(scenario, K, eps index) for every cell; the central scenario only has K = 1."""
        out = []
        for scen in self.scenarios:
            for k in (1,) if scen is Scenario.CENTRAL else self.ks:
                out.extend((scen, k, i) for i in range(len(self.eps_grid)))
        return out


@dataclass
class CellSummary:
    scenario: str
    k: int
    eps: float
    quantity: str
    truth: float
    lo: float
    median: float
    hi: float
    mean: float
    var: float
    n: int
    failure: str = ""


@dataclass
class SweepResult:
    kind: str
    dataset: str
    column: str
    eps_grid: tuple[float, ...]
    rows: list[CellSummary]
    meta: dict[str, str] = field(default_factory=dict)
    samples: dict = field(default_factory=dict, repr=False)

    def lookup(self, scenario: str, k: int, quantity: str) -> list[CellSummary]:
        """Rows of one (scenario, K, quantity) series ordered by epsilon."""
        sel = [r for r in self.rows if r.scenario == scenario and r.k == k and r.quantity == quantity]
        return sorted(sel, key=lambda r: r.eps)

    def series(self) -> list[tuple[str, int]]:
        return sorted({(r.scenario, r.k) for r in self.rows if r.scenario != "baseline"},
                      key=lambda s: (Scenario(s[0]).number, s[1]))


def band(samples: np.ndarray) -> tuple[float, float]:
    """Empirical 95% band: the 2.5% and 97.5% sample percentiles."""
    lo, hi = np.percentile(samples, [2.5, 97.5])
    return float(lo), float(hi)


def summarize(samples, truth: float, **key) -> CellSummary:
    x = np.asarray(samples, dtype=float)
    lo, hi = band(x)
    with np.errstate(over="ignore", invalid="ignore"):
        mean = float(np.mean(x))
        var = float(np.var(x, ddof=1)) if x.size > 1 else 0.0
    return CellSummary(truth=float(truth), lo=lo, median=float(np.median(x)), hi=hi, mean=mean, var=var,
                       n=int(x.size), **key)


def _failed(truth: float, failure: str, **key) -> CellSummary:
    nan = float("nan")
    return CellSummary(truth=truth, lo=nan, median=nan, hi=nan, mean=nan, var=nan, n=0, failure=failure, **key)


# ---------------------------------------------------------------- t-test sweep


@dataclass
class _StatsJob:
    cfg: SweepConfig
    table: data_mod.Table
    column: str
    delta: float
    scenario: Scenario
    k: int
    eps_index: int
    truths: dict


def _run_stats_cell(job: _StatsJob) -> tuple[list[CellSummary], np.ndarray | None]:
    cfg, scen, k = job.cfg, job.scenario, job.k
    eps = cfg.eps_grid[job.eps_index]
    key = dict(scenario=scen.value, k=k, eps=eps)
    try:
        shards = shard(job.table, k, int_seed(cfg.master_seed, "shard", k))
        rng = np.random.default_rng(seed_for(cfg.master_seed, "stats", scen.number, k, job.eps_index))
        res = run_scenario(scen, job.table, shards, job.column, PrivacyParams(eps, job.delta), rng, cfg.trials, cfg.stats)
    except FedSandboxError as exc:
        return [_failed(job.truths[q], f"{type(exc).__name__}: {exc}", quantity=q, **key) for q in STATS_QUANTITIES], None
    rows = [summarize(getattr(res, q), job.truths[q], quantity=q, **key) for q in STATS_QUANTITIES]
    return rows, np.asarray(res.t)


def _map(fn, jobs: Sequence, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=1))


def _load(cfg: SweepConfig):
    table, schema = load_dataset(cfg.dataset, subsample=cfg.subsample,
                                 seed=int_seed(cfg.master_seed, "subsample"))
    delta = cfg.delta if cfg.delta is not None else schema.delta
    return table, schema, delta


@dataclass
class _NanTruth:
    t: float = math.nan
    df: float = math.nan
    mean_a: float = math.nan
    mean_b: float = math.nan
    var_a: float = math.nan
    var_b: float = math.nan


def stats_meta(cfg: SweepConfig, column: str, delta: float, truth) -> dict[str, str]:
    return {
        "dataset": cfg.dataset,
        "column": column,
        "delta": repr(delta),
        "plaintext_t": repr(float(truth.t)),
        "plaintext_df": repr(float(truth.df)),
        "t_critical": repr(t_critical(float(truth.df)) if math.isfinite(truth.df) else math.nan),
        "alpha": "0.05",
        "trials": str(cfg.trials),
        "eps_grid": " ".join(repr(e) for e in cfg.eps_grid),
        "ks": " ".join(str(k) for k in cfg.ks),
        "master_seed": str(cfg.master_seed),
        "release": "laplace on clipped t" if cfg.stats.direct_laplace else "gaussian mean + lognormal variance",
        "budget_split": f"eps/{cfg.stats.budget_parts} and delta/{cfg.stats.budget_parts} per released statistic",
        "v_floor": f"{cfg.stats.v_floor_frac!r} * (hi - lo)^2",
        "tstat_range": repr(cfg.stats.tstat_range),
        "gaussian_calibration": "classic for eps <= 1, analytic above",
        "neighbouring": "replace-one",
        "band": "empirical 2.5% / 97.5% percentiles",
        "critical_rule": "band edge nearest zero beyond the two-sided critical t at the plaintext Welch df; log-eps interpolation",
        "frac_bits": str(cfg.stats.frac_bits),
    }


def sweep_tstat(cfg: SweepConfig, keep_samples: bool = False) -> SweepResult:
    """Draw ``cfg.trials`` disclosed t statistics in every (epsilon, K, scenario) cell."""
    table, schema, delta = _load(cfg)
    column = cfg.column or selected_column(schema, table)
    try:
        truth = plaintext_t(table, column)
    except FedSandboxError as exc:
        # every cell will record the same failure; keep the sweep shape
        log.warning("plaintext t-test undefined for %s/%s: %s", cfg.dataset, column, exc)
        truth = _NanTruth()
    truths = {q: float(getattr(truth, q)) for q in STATS_QUANTITIES}
    jobs = [_StatsJob(cfg, table, column, delta, s, k, i, truths) for s, k, i in cfg.cells()]
    rows, samples = [], {}
    for job, (cell_rows, t) in zip(jobs, _map(_run_stats_cell, jobs, cfg.workers)):
        rows.extend(cell_rows)
        if keep_samples and t is not None:
            samples[(job.scenario.value, job.k, job.eps_index)] = t
    return SweepResult("stats", cfg.dataset, column, cfg.eps_grid, rows, stats_meta(cfg, column, delta, truth), samples)


# ---------------------------------------------------------------- training sweep


@dataclass
class _TrainJob:
    cfg: SweepConfig
    split: data_mod.SplitSpec
    delta: float
    scenario: Scenario | None
    k: int
    eps_index: int


def _train_cfg(cfg: SweepConfig, delta: float, eps: float, scenario: Scenario, k: int) -> TrainConfig:
    return TrainConfig(lr=cfg.lr, max_batch=cfg.max_batch, epochs=cfg.epochs, clip_norm=cfg.clip_norm,
                       target_eps=eps, delta=delta, scenario=scenario, k=k, mask_rounds=cfg.mask_rounds)


def _run_train_cell(job: _TrainJob) -> list[CellSummary]:
    cfg = job.cfg
    test = encode(job.split.test)[:2]
    if job.scenario is None:
        tcfg = _train_cfg(cfg, job.delta, math.inf, Scenario.CENTRAL, 1)
        accs = [
            evaluate(train_nonprivate(job.split, tcfg, np.random.default_rng(seed_for(cfg.master_seed, "baseline", t)),
                                      keep_clipping=cfg.baseline_clip), test)
            for t in range(cfg.trials)
        ]
        return [summarize(accs, float("nan"), scenario="baseline", k=1, eps=math.inf, quantity="accuracy")]
    scen, k = job.scenario, job.k
    eps = cfg.eps_grid[job.eps_index]
    key = dict(scenario=scen.value, k=k, eps=eps)
    try:
        data = job.split if scen is Scenario.CENTRAL else shard(job.split.train, k, int_seed(cfg.master_seed, "shard", k))
        tcfg = _train_cfg(cfg, job.delta, eps, scen, k)
        accs, achieved, sigmas = [], [], []
        for t in range(cfg.trials):
            rng = np.random.default_rng(seed_for(cfg.master_seed, "train", scen.number, k, job.eps_index, t))
            rep = TrainReport(0.0, 0.0, 0, 0.0)
            model, eps_hat = train(data, tcfg, rng, rep)
            accs.append(evaluate(model, test))
            achieved.append(eps_hat)
            sigmas.append(rep.sigma)
    except FedSandboxError as exc:
        msg = f"{type(exc).__name__}: {exc}"
        return [_failed(float("nan"), msg, quantity=q, **key) for q in ("accuracy", "achieved_eps", "sigma")]
    return [
        summarize(accs, float("nan"), quantity="accuracy", **key),
        summarize(achieved, eps, quantity="achieved_eps", **key),
        summarize(sigmas, float("nan"), quantity="sigma", **key),
    ]


def train_meta(cfg: SweepConfig, delta: float, split) -> dict[str, str]:
    n = len(split.train)
    tc = _train_cfg(cfg, delta, 1.0, Scenario.CENTRAL, 1)
    return {
        "dataset": cfg.dataset,
        "delta": repr(delta),
        "train_rows": str(n),
        "test_rows": str(len(split.test)),
        "lr": repr(cfg.lr),
        "max_batch": str(cfg.max_batch),
        "epochs": str(cfg.epochs),
        "steps": str(tc.steps(n)),
        "sampling_rate": repr(tc.sampling_rate(n)),
        "clip_norm": repr(cfg.clip_norm),
        "trials": str(cfg.trials),
        "eps_grid": " ".join(repr(e) for e in cfg.eps_grid),
        "ks": " ".join(str(k) for k in cfg.ks),
        "master_seed": str(cfg.master_seed),
        "baseline": "clipped, noise-free DP-SGD" if cfg.baseline_clip else "plain SGD (no clipping, no noise)",
        "local_rule": "node sigma calibrated to the full eps budget at q_local = min(1, max_batch / (K n_local))",
        "secure_rule": "node noise N(0, sigma^2 C^2 / K), fixed-point masked sum",
        "accountant": "RDP of the Poisson-subsampled Gaussian, integer orders 2..64 and 128..4096",
        "critical_rule": "smallest grid eps from which every Welch test vs baseline keeps p >= 0.05",
        "features": "min-max by codebook bounds; one-hot with first category dropped",
    }


def sweep_training(cfg: SweepConfig) -> SweepResult:
    """DP-SGD accuracy over the grid, plus shared non-private baseline accuracies."""
    table, schema, delta = _load(cfg)
    split = balanced_split(table, int_seed(cfg.master_seed, "split"))
    jobs = [_TrainJob(cfg, split, delta, None, 1, -1)]
    jobs += [_TrainJob(cfg, split, delta, s, k, i) for s, k, i in cfg.cells()]
    rows = [r for cell in _map(_run_train_cell, jobs, cfg.workers) for r in cell]
    return SweepResult("train", cfg.dataset, schema.target, cfg.eps_grid, rows, train_meta(cfg, delta, split))


# ---------------------------------------------------------------- critical epsilon


@dataclass(frozen=True)
class CriticalEps:
    value: float | None
    verdict: str  # "ok", "above", "n/a"

    def __str__(self) -> str:
        if self.verdict == "above":
            return "> 100" if self.value is None else f"> {format_sig(self.value)}"
        if self.verdict != "ok":
            return "n/a"
        return format_sig(self.value)


def format_sig(v: float, digits: int = 2) -> str:
    return f"{float(f'{v:.{digits}g}'):g}"


def critical_eps_tstat(r: SweepResult, alpha: float = 0.05) -> dict[tuple[str, int], CriticalEps]:
    """Smallest epsilon whose whole t band sits beyond the critical value on the truth's side.

    Uses the band edge nearest zero: the lower edge for a positive plaintext
    t, the upper edge for a negative one. Between the last failing and first
    passing grid point the crossing is interpolated linearly in log epsilon.
    """
    truth_t = float(r.meta["plaintext_t"])
    df = float(r.meta["plaintext_df"])
    t_crit = t_critical(df, alpha) if math.isfinite(df) else math.nan
    out = {}
    for scen, k in r.series():
        cells = r.lookup(scen, k, "t")
        if not abs(truth_t) > t_crit:
            out[(scen, k)] = CriticalEps(None, "n/a")
            continue
        sign = 1.0 if truth_t > 0 else -1.0
        margins = [
            (c.eps, sign * (c.lo if sign > 0 else c.hi) - t_crit) if not c.failure else (c.eps, -math.inf)
            for c in cells
        ]
        out[(scen, k)] = _first_crossing(margins, r.eps_grid[-1])
    return out


def _first_crossing(margins: list[tuple[float, float]], top: float) -> CriticalEps:
    for i, (eps, m) in enumerate(margins):
        if m > 0:
            if i == 0:
                return CriticalEps(eps, "ok")
            e0, m0 = margins[i - 1]
            with np.errstate(all="ignore"):
                frac = -m0 / (m - m0)
            if not np.isfinite(frac):
                frac = 1.0
            return CriticalEps(float(math.exp(math.log(e0) + frac * (math.log(eps) - math.log(e0)))), "ok")
    return CriticalEps(None if top >= 100 else top, "above")


def critical_eps_training(r: SweepResult, alpha: float = 0.05) -> dict[tuple[str, int], CriticalEps]:
    """Smallest grid epsilon from which DP accuracy is never distinguishable from the baseline."""
    base = [c for c in r.rows if c.scenario == "baseline" and c.quantity == "accuracy"]
    out = {}
    for scen, k in r.series():
        cells = r.lookup(scen, k, "accuracy")
        if not base or base[0].n < 2:
            out[(scen, k)] = CriticalEps(None, "n/a")
            continue
        b = base[0]
        ok = [
            not c.failure and welch_pvalue(c.mean, c.var, c.n, b.mean, b.var, b.n) >= alpha
            for c in cells
        ]
        start = None
        for i in range(len(ok) - 1, -1, -1):
            if not ok[i]:
                break
            start = i
        out[(scen, k)] = CriticalEps(cells[start].eps, "ok") if start is not None else CriticalEps(
            None if r.eps_grid[-1] >= 100 else r.eps_grid[-1], "above")
    return out


def critical_eps(r: SweepResult) -> dict[tuple[str, int], CriticalEps]:
    return critical_eps_tstat(r) if r.kind == "stats" else critical_eps_training(r)


# ---------------------------------------------------------------- persistence

_FIELDS = [f for f in CellSummary.__dataclass_fields__]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_sweep(r: SweepResult, out_dir: str | os.PathLike) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"sweep_{r.kind}_{r.dataset}.csv"
    rows = sorted(r.rows, key=lambda c: (c.scenario != "baseline", c.scenario, c.k, c.eps, c.quantity))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_FIELDS)
        for c in rows:
            w.writerow([_fmt(getattr(c, f)) for f in _FIELDS])
    meta = dict(r.meta, kind=r.kind, column=r.column)
    write_meta(meta, path.with_suffix(".meta"))
    crit = critical_eps(r)
    with open(out / f"critical_{r.kind}_{r.dataset}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "scenario", "k", "critical_eps", "value"])
        for (scen, k), c in sorted(crit.items(), key=lambda kv: (Scenario(kv[0][0]).number, kv[0][1])):
            w.writerow([r.dataset, scen, k, str(c), "" if c.value is None else repr(c.value)])
    return path


def write_meta(meta: dict[str, str], path: Path) -> None:
    path.write_text("".join(f"{k} = {v}\n" for k, v in sorted(meta.items())))


def read_meta(path: Path) -> dict[str, str]:
    out = {}
    for line in path.read_text().splitlines():
        if "=" in line and not line.lstrip().startswith("#"):
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def read_sweep(path: str | os.PathLike) -> SweepResult:
    path = Path(path)
    meta = read_meta(path.with_suffix(".meta"))
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(CellSummary(
                scenario=rec["scenario"], k=int(rec["k"]), eps=float(rec["eps"]), quantity=rec["quantity"],
                truth=float(rec["truth"]), lo=float(rec["lo"]), median=float(rec["median"]), hi=float(rec["hi"]),
                mean=float(rec["mean"]), var=float(rec["var"]), n=int(rec["n"]), failure=rec["failure"],
            ))
    grid = tuple(float(e) for e in meta["eps_grid"].split())
    return SweepResult(meta["kind"], meta["dataset"], meta.get("column", ""), grid, rows, meta)


def read_sweeps(in_dir: str | os.PathLike) -> list[SweepResult]:
    return [read_sweep(p) for p in sorted(Path(in_dir).glob("sweep_*.csv"))]


# ---------------------------------------------------------------- tables


def _dataset_order(names: Iterable[str]) -> list[str]:
    names = set(names)
    return [d for d in DATASETS if d in names] + sorted(names - set(DATASETS))


def table_cells(results: Sequence[SweepResult], kind: str) -> tuple[list[str], list[list[str]]]:
    """Paper-shaped table: a baseline row, then one row per federation size K >= 2 (local scenario)."""
    sel = [r for r in results if r.kind == kind]
    datasets = _dataset_order(r.dataset for r in sel)
    crit = {r.dataset: critical_eps(r) for r in sel}
    ks = sorted({k for r in sel for (s, k) in crit[r.dataset] if s == Scenario.LOCAL.value and k >= 2})
    if not ks and sel:
        ks = [k for k in KS_DEFAULT if k >= 2]
    header = ["row"] + datasets
    body = []
    if datasets:
        body.append(["baseline"] + [str(crit[d].get((Scenario.CENTRAL.value, 1), CriticalEps(None, "n/a"))) for d in datasets])
        for k in ks:
            body.append([f"K={k}"] + [str(crit[d].get((Scenario.LOCAL.value, k), CriticalEps(None, "n/a"))) for d in datasets])
    return header, body


def emit_tables(results: Sequence[SweepResult], out_dir: str | os.PathLike) -> list[Path]:
    """Write dp_stats.csv and dp_train.csv, a long-form critical_eps.csv and a metadata sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for kind, name in (("stats", "dp_stats.csv"), ("train", "dp_train.csv")):
        header, body = table_cells(results, kind)
        with open(out / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(body)
        paths.append(out / name)
    with open(out / "critical_eps.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "dataset", "scenario", "k", "critical_eps"])
        for r in sorted(results, key=lambda r: (r.kind, r.dataset)):
            for (scen, k), c in sorted(critical_eps(r).items(), key=lambda kv: (Scenario(kv[0][0]).number, kv[0][1])):
                w.writerow([r.kind, r.dataset, scen, k, str(c)])
    paths.append(out / "critical_eps.csv")
    meta = {"note.baseline_row": "central scenario (K = 1); secure-scenario values per K are in critical_eps.csv",
            "note.k_rows": "local scenario (plaintext aggregation of noised partials)"}
    for r in results:
        for key, value in r.meta.items():
            meta[f"{r.kind}.{r.dataset}.{key}"] = value
    write_meta(meta, out / "tables.meta")
    paths.append(out / "tables.meta")
    return paths


# ---------------------------------------------------------------- PET grid


@dataclass
class PetCell:
    secure_agg: bool
    dp: bool
    eps: float
    accuracy_mean: float
    accuracy_sd: float
    critical_eps: str


def pet_grid(cfg: SweepConfig, eps: float = 1.0, k: int = 16) -> list[PetCell]:
    """Measured analogue of the secure-aggregation x DP grid for one dataset and federation size.

    Quadrants: secure aggregation on/off (secure vs local scenario when DP is
    on; masked vs plaintext sum when it is off) crossed with DP at ``eps`` or
    no DP. Critical epsilons come from a training sweep over ``cfg.eps_grid``.
    """
    table, schema, delta = _load(cfg)
    split = balanced_split(table, int_seed(cfg.master_seed, "split"))
    shards = shard(split.train, k, int_seed(cfg.master_seed, "shard", k))
    test = encode(split.test)[:2]
    sweep = sweep_training(replace(cfg, ks=(k,), scenarios=(Scenario.LOCAL, Scenario.SECURE)))
    crit = critical_eps_training(sweep)
    cells = []
    for secure in (True, False):
        for dp in (True, False):
            scen = Scenario.SECURE if secure else Scenario.LOCAL
            target = eps if dp else math.inf
            tcfg = _train_cfg(cfg, delta, target, scen, k)
            accs = []
            for t in range(cfg.trials):
                rng = np.random.default_rng(seed_for(cfg.master_seed, "train", 10 + scen.number, k, int(dp), t))
                accs.append(evaluate(train(shards, tcfg, rng)[0], test))
            c = str(crit[(scen.value, k)]) if dp else "n/a"
            cells.append(PetCell(secure, dp, target, float(np.mean(accs)), float(np.std(accs, ddof=1)), c))
    return cells


def write_pet_grid(cells: Sequence[PetCell], dataset: str, out_dir: str | os.PathLike) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"petgrid_{dataset}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["secure_agg", "dp", "eps", "accuracy_mean", "accuracy_sd", "critical_eps"])
        for c in cells:
            w.writerow([c.secure_agg, c.dp, repr(c.eps), repr(c.accuracy_mean), repr(c.accuracy_sd), c.critical_eps])
    return path


# ---------------------------------------------------------------- figures


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed ids so repeated runs write identical SVG
    matplotlib.rcParams["svg.hashsalt"] = "fedsandbox"
    return plt


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    fig.clf()
    return path


def _band_series(ax, r: SweepResult, scen: str, k: int, quantity: str, label: str):
    cells = [c for c in r.lookup(scen, k, quantity) if not c.failure]
    if not cells:
        return
    eps = [c.eps for c in cells]
    line = ax.plot(eps, [c.median for c in cells], marker=".", label=label)[0]
    ax.fill_between(eps, [c.lo for c in cells], [c.hi for c in cells], alpha=0.2, color=line.get_color())


def _stats_figures(plt, r: SweepResult, out: Path) -> list[Path]:
    paths = []
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, (qa, qb, title) in zip(axes, (("mean_a", "mean_b", "mean"), ("var_a", "var_b", "variance"))):
        for q, name in ((qa, "class 0"), (qb, "class 1")):
            _band_series(ax, r, Scenario.CENTRAL.value, 1, q, name)
            truth = r.lookup(Scenario.CENTRAL.value, 1, q)
            if truth:
                ax.axhline(truth[0].truth, color="k", lw=0.8)
        ax.set_xscale("log")
        if title == "variance":
            ax.set_yscale("log")
        ax.set_xlabel("epsilon")
        ax.set_title(f"{r.dataset} {r.column}: DP {title}, 95% band")
        ax.legend(fontsize=7)
    paths.append(_save(fig, out / f"fig_stats_{r.dataset}_moments.svg"))
    plt.close(fig)

    t_crit = float(r.meta["t_critical"])
    truth_t = float(r.meta["plaintext_t"])
    scens = [s for s in (Scenario.LOCAL.value, Scenario.SECURE.value) if any(x == s for x, _ in r.series())]
    fig, axes = plt.subplots(1, max(1, len(scens)), figsize=(6 * max(1, len(scens)), 4), squeeze=False)
    for ax, scen in zip(axes[0], scens or [Scenario.CENTRAL.value]):
        _band_series(ax, r, Scenario.CENTRAL.value, 1, "t", "central")
        for s, k in r.series():
            if s == scen and s != Scenario.CENTRAL.value:
                _band_series(ax, r, s, k, "t", f"K={k}")
        ax.axhline(truth_t, color="k", lw=0.8, label="plaintext t")
        for sign in (1, -1):
            ax.axhline(sign * t_crit, color="red", ls="-.", lw=1.0)
        ax.set_xscale("log")
        ax.set_yscale("symlog", linthresh=10)
        ax.set_xlabel("epsilon")
        ax.set_ylabel("t statistic")
        ax.set_title(f"{r.dataset}: {scen} scenario")
        ax.legend(fontsize=7)
    paths.append(_save(fig, out / f"fig_stats_{r.dataset}_tstat.svg"))
    plt.close(fig)
    return paths


def _train_figure(plt, r: SweepResult, out: Path) -> Path:
    scens = [s for s in (Scenario.LOCAL.value, Scenario.SECURE.value) if any(x == s for x, _ in r.series())]
    fig, axes = plt.subplots(1, max(1, len(scens)), figsize=(6 * max(1, len(scens)), 4), squeeze=False)
    base = [c for c in r.rows if c.scenario == "baseline" and c.quantity == "accuracy"]
    for ax, scen in zip(axes[0], scens or [Scenario.CENTRAL.value]):
        _band_series(ax, r, Scenario.CENTRAL.value, 1, "accuracy", "central")
        for s, k in r.series():
            if s == scen and s != Scenario.CENTRAL.value:
                _band_series(ax, r, s, k, "accuracy", f"K={k}")
        if base:
            ax.axhline(base[0].mean, color="k", lw=0.8, label="non-private")
        ax.set_xscale("log")
        ax.set_xlabel("epsilon")
        ax.set_ylabel("test accuracy")
        ax.set_title(f"{r.dataset}: {scen} scenario")
        ax.legend(fontsize=7)
    path = _save(fig, out / f"fig_train_{r.dataset}.svg")
    plt.close(fig)
    return path


def emit_figures(results: Sequence[SweepResult], out_dir: str | os.PathLike) -> list[Path]:
    """Band plots over log epsilon for every sweep; SVG files in ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plt = _pyplot()
    paths = []
    for r in results:
        if r.kind == "stats":
            paths += _stats_figures(plt, r, out)
        else:
            paths.append(_train_figure(plt, r, out))
    return paths
