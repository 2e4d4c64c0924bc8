#!/usr/bin/env python3
"""How the variance floor drives the K=64 local/secure critical-epsilon ratio.

The log-normal variance release is calibrated to a sensitivity inversely
proportional to the floor, so the floor sets how fast disclosed variances
collapse at small epsilon.

    python scripts/vfloor_study.py --fracs 1e-4,1e-3,1e-2,0.015625
"""

import argparse

from fedsandbox import harness
from fedsandbox.fed_stats import StatsConfig
from fedsandbox.federation import Scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dataset", default="heart")
    ap.add_argument("--fracs", default="1e-4,1e-3,1e-2,0.015625")
    ap.add_argument("--trials", type=int, default=2000)
    ap.add_argument("--k", type=int, default=64)
    ap.add_argument("--workers", type=int, default=4)
    a = ap.parse_args()

    print(f"{'v_floor_frac':>12s} {'local':>8s} {'secure':>8s} {'ratio':>8s}")
    for frac in (float(f) for f in a.fracs.split(",")):
        cfg = harness.SweepConfig.desk(
            "stats", dataset=a.dataset, ks=(a.k,), trials=a.trials, workers=a.workers,
            scenarios=(Scenario.LOCAL, Scenario.SECURE), stats=StatsConfig(v_floor_frac=frac),
        )
        crit = harness.critical_eps_tstat(harness.sweep_tstat(cfg))
        loc, sec = crit[("local", a.k)], crit[("secure", a.k)]
        ratio = loc.value / sec.value if loc.value and sec.value else float("nan")
        print(f"{frac:12.3g} {str(loc):>8s} {str(sec):>8s} {ratio:8.2f}")


if __name__ == "__main__":
    main()
