"""Command line entry point: ``fedsandbox <command> ...``.

Commands
--------
prepare <dataset>     load, clean, split and report a dataset
sweep-stats           DP t-test sweep, writes sweep_stats_<dataset>.csv/.meta
sweep-train           DP-SGD sweep, writes sweep_train_<dataset>.csv/.meta
tables --in DIR       dp_stats.csv, dp_train.csv and critical_eps.csv from saved sweeps
figures --in DIR      SVG band plots from saved sweeps
petgrid --dataset D   secure-aggregation x DP accuracy grid
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .data import DATASETS, balanced_split, encode, load_dataset, rank_features, selected_column
from .errors import FedSandboxError
from .fed_stats import StatsConfig, plaintext_t
from .federation import Scenario
from .stats import t_critical

log = logging.getLogger("fedsandbox")


def parse_eps(spec: str) -> tuple[float, ...]:
    """``lo:hi:n`` for a log grid, or a comma list of values."""
    if ":" in spec:
        lo, hi, n = spec.split(":")
        return harness.log_grid(float(lo), float(hi), int(n))
    return tuple(float(v) for v in spec.split(","))


def parse_ints(spec: str) -> tuple[int, ...]:
    return tuple(int(v) for v in spec.split(","))


def parse_scenarios(spec: str) -> tuple[Scenario, ...]:
    if spec == "all":
        return tuple(Scenario)
    return tuple(Scenario.parse(v) for v in spec.split(","))


def _sweep_args(p: argparse.ArgumentParser, kind: str) -> None:
    p.add_argument("--dataset", default="heart")
    p.add_argument("--scenario", default="all", help="comma list of central,local,secure (or 1,2,3), or 'all'")
    p.add_argument("--k", type=parse_ints, default=None, help="comma list of federation sizes")
    p.add_argument("--eps", type=parse_eps, default=None, help="lo:hi:n log grid or comma list")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("results"))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--preset", choices=("paper", "desk"), default="paper")
    p.add_argument("--subsample", type=int, default=None)
    p.add_argument("--delta", type=float, default=None, help="override the dataset's delta")
    if kind == "stats":
        p.add_argument("--column", default=None)
        p.add_argument("--v-floor-frac", type=float, default=1e-4)
        p.add_argument("--tstat-direct-laplace", action="store_true")
        p.add_argument("--tstat-range", type=float, default=20.0)
        p.add_argument("--samples", action="store_true", help="also write raw t samples as .npz")
    else:
        p.add_argument("--epochs", type=int, default=20)
        p.add_argument("--clip-norm", type=float, default=1.0)
        p.add_argument("--lr", type=float, default=0.01)
        p.add_argument("--baseline-unclipped", action="store_true")
        p.add_argument("--no-masks", action="store_true", help="sum fixed-point encodings without masks (same totals)")


def config_from_args(a: argparse.Namespace, kind: str) -> harness.SweepConfig:
    make = harness.SweepConfig.desk if a.preset == "desk" else harness.SweepConfig.paper
    over = dict(dataset=a.dataset, master_seed=a.seed, workers=a.workers, scenarios=parse_scenarios(a.scenario),
                subsample=a.subsample, delta=a.delta)
    if a.k is not None:
        over["ks"] = a.k
    if a.eps is not None:
        over["eps_grid"] = a.eps
    if a.trials is not None:
        over["trials"] = a.trials
    if kind == "stats":
        over["column"] = a.column
        over["stats"] = StatsConfig(v_floor_frac=a.v_floor_frac, direct_laplace=a.tstat_direct_laplace,
                                    tstat_range=a.tstat_range)
    else:
        over.update(epochs=a.epochs, clip_norm=a.clip_norm, lr=a.lr, baseline_clip=not a.baseline_unclipped,
                    mask_rounds=not a.no_masks)
    return make(kind, **over)


def cmd_prepare(a) -> int:
    table, schema = load_dataset(a.dataset, subsample=a.subsample, seed=a.seed)
    split = balanced_split(table, harness.int_seed(a.seed, "split"))
    X, _, names = encode(split.train)
    col = selected_column(schema, table)
    truth = plaintext_t(table, col)
    print(f"dataset        {a.dataset}")
    print(f"rows           {table.raw_count} raw, {len(table)} clean")
    print(f"classes        {table.class_counts()}")
    print(f"train / test   {len(split.train)} / {len(split.test)}")
    print(f"features       {X.shape[1]} encoded")
    print(f"column         {col}")
    print(f"plaintext t    {truth.t:.4f} (df {truth.df:.2f}, critical {t_critical(truth.df):.4f})")
    print("ranking        " + ", ".join(f"{n} {d:.3g}" for n, d in rank_features(table)[: a.top]))
    if a.out:
        a.out.mkdir(parents=True, exist_ok=True)
        path = a.out / f"{a.dataset}_clean.csv"
        with open(path, "w") as fh:
            fh.write(",".join(table.names) + "\n")
            for row in table.rows:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        print(f"wrote          {path}")
    return 0


def cmd_sweep(a, kind: str) -> int:
    cfg = config_from_args(a, kind)
    if kind == "stats":
        result = harness.sweep_tstat(cfg, keep_samples=a.samples)
    else:
        result = harness.sweep_training(cfg)
    path = harness.write_sweep(result, a.out)
    if kind == "stats" and a.samples:
        import numpy as np

        np.savez_compressed(a.out / f"samples_stats_{cfg.dataset}.npz",
                            **{f"{s}_k{k}_e{i}": v for (s, k, i), v in sorted(result.samples.items())})
    failures = sum(1 for r in result.rows if r.failure)
    print(f"wrote {path} ({len(result.rows)} rows, {failures} failed)")
    for (scen, k), c in sorted(harness.critical_eps(result).items(), key=lambda kv: (Scenario(kv[0][0]).number, kv[0][1])):
        print(f"  {scen:8s} K={k:<3d} critical eps {c}")
    return 0


def cmd_tables(a) -> int:
    results = harness.read_sweeps(a.input)
    paths = harness.emit_tables(results, a.out or a.input)
    for p in paths:
        print(f"wrote {p}")
    for p in paths[:2]:
        print(p.read_text())
    return 0


def cmd_figures(a) -> int:
    results = harness.read_sweeps(a.input)
    for p in harness.emit_figures(results, a.out or a.input):
        print(f"wrote {p}")
    return 0


def cmd_petgrid(a) -> int:
    cfg = harness.SweepConfig.desk("train", dataset=a.dataset, master_seed=a.seed, workers=a.workers,
                                   trials=a.trials)
    if a.eps_grid is not None:
        cfg = replace(cfg, eps_grid=a.eps_grid)
    cells = harness.pet_grid(cfg, eps=a.eps, k=a.k)
    path = harness.write_pet_grid(cells, a.dataset, a.out)
    print(f"{'':14s} {'DP eps=' + format(a.eps, 'g'):>24s} {'no DP':>16s}")
    for secure in (True, False):
        row = [c for c in cells if c.secure_agg == secure]
        txt = []
        for c in sorted(row, key=lambda c: not c.dp):
            txt.append(f"{c.accuracy_mean:.3f}+-{c.accuracy_sd:.3f} ({c.critical_eps})")
        print(f"{'secure agg' if secure else 'plaintext':14s} {txt[0]:>24s} {txt[1]:>16s}")
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fedsandbox", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="load, clean and split a dataset")
    p.add_argument("dataset", choices=DATASETS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subsample", type=int, default=None)
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--out", type=Path, default=None, help="directory for the cleaned CSV")
    p.set_defaults(func=cmd_prepare)

    for kind in ("stats", "train"):
        p = sub.add_parser(f"sweep-{kind}", help=f"epsilon sweep for the {'t-test' if kind == 'stats' else 'DP-SGD'} experiment")
        _sweep_args(p, kind)
        p.set_defaults(func=lambda a, kind=kind: cmd_sweep(a, kind))

    for name, fn in (("tables", cmd_tables), ("figures", cmd_figures)):
        p = sub.add_parser(name, help=f"{name} from saved sweeps")
        p.add_argument("--in", dest="input", type=Path, required=True)
        p.add_argument("--out", type=Path, default=None)
        p.set_defaults(func=fn)

    p = sub.add_parser("petgrid", help="secure aggregation x DP accuracy grid")
    p.add_argument("--dataset", default="heart")
    p.add_argument("--eps", type=float, default=1.0)
    p.add_argument("--eps-grid", type=parse_eps, default=None)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("results"))
    p.set_defaults(func=cmd_petgrid)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.func(a)
    except (FedSandboxError, FileNotFoundError, ValueError) as exc:
        print(f"fedsandbox: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
