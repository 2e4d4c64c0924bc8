#!/usr/bin/env python3
"""Desk-scale reproduction of both experiments.

Runs the t-test and DP-SGD sweeps (9 epsilon points, K in {1, 4, 16, 64}) for
every dataset whose file can be found, then writes the tables and figures.

    python scripts/reproduce_desk.py --out results/desk --workers 8
"""

import argparse
import logging
import time
from pathlib import Path

from fedsandbox import harness
from fedsandbox.data import DATASETS, find_file, load_schema

log = logging.getLogger("reproduce")


def available(names):
    out = []
    for name in names:
        try:
            find_file(load_schema(name).file)
        except FileNotFoundError:
            log.warning("skipping %s: data file not found (set FEDSANDBOX_DATA_DIR)", name)
            continue
        out.append(name)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results/desk"))
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--datasets", default=",".join(DATASETS))
    ap.add_argument("--skip-train", action="store_true")
    a = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    results = []
    for name in available(a.datasets.split(",")):
        t0 = time.time()
        cfg = harness.SweepConfig.desk("stats", dataset=name, master_seed=a.seed, workers=a.workers)
        r = harness.sweep_tstat(cfg)
        harness.write_sweep(r, a.out)
        results.append(r)
        log.info("%s t-test sweep done in %.0fs", name, time.time() - t0)
        if a.skip_train:
            continue
        t0 = time.time()
        cfg = harness.SweepConfig.desk("train", dataset=name, master_seed=a.seed, workers=a.workers)
        r = harness.sweep_training(cfg)
        harness.write_sweep(r, a.out)
        results.append(r)
        log.info("%s training sweep done in %.0fs", name, time.time() - t0)

    for p in harness.emit_tables(results, a.out) + harness.emit_figures(results, a.out):
        log.info("wrote %s", p)
    for name in ("dp_stats.csv", "dp_train.csv"):
        print(f"== {name}")
        print((a.out / name).read_text())


if __name__ == "__main__":
    main()
