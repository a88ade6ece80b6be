#!/usr/bin/env python3
"""Middle-regime rate sweep: median errors of the oracle ERM, the minimax
RERM and the LASSO against N, with log-log slopes and ratios to theory."""

import argparse

from minimaxreg.design import TargetSpec
from minimaxreg.harness import CellConfig, ExperimentConfig, rate_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--d", type=int, default=1024)
    ap.add_argument("--sigma", type=float, default=1.0)
    ap.add_argument("--s", type=int, default=4)
    ap.add_argument("--amplitude", type=float, default=0.2)
    ap.add_argument("--ns", type=int, nargs="+", default=[64, 128, 256, 512])
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    cells = [CellConfig(n, args.d, args.sigma,
                        TargetSpec.sparse(args.s, args.amplitude)) for n in args.ns]
    cfg = ExperimentConfig(cells=cells, estimators=["oracle_erm", "rerm", "lasso"],
                           trials=args.trials, seed=args.seed, sweep="N")
    rep = rate_experiment(cfg, threads=args.threads)
    print(f"{'N':>6} {'rate':>10} " + " ".join(f"{e:>12}" for e in cfg.estimators))
    for cell in rep.cells:
        meds = [cell["estimators"][e].get("median_l2", float("nan"))
                for e in cfg.estimators]
        print(f"{cell['N']:>6} {cell['minimax_rate']:>10.4f} "
              + " ".join(f"{m:>12.4f}" for m in meds)
              + f"   [{cell['branch']}]")
    for name, s in rep.slopes.items():
        print(f"slope {name}: {s['slope']:+.3f} +- {s['stderr']:.3f} "
              f"({s['cells_used']} cells, {s['branch']})")


if __name__ == "__main__":
    main()
