#!/usr/bin/env python3
"""Behavior of the minimax RERM around the adaptation threshold
sigma*sqrt(log(ed)/N): medians at targets 0 and rho*e_1 for tiny rho,
reported against rho^2 and the minimax rate.  No pass/fail: adaptation below
the threshold is impossible for any estimator, this just shows the shape."""

import argparse
import math

from minimaxreg.complexity import get_profile
from minimaxreg.harness import small_ball_demo


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=256)
    ap.add_argument("--d", type=int, default=512)
    ap.add_argument("--sigma", type=float, default=0.5)
    ap.add_argument("--trials", type=int, default=24)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--profile", default="calibrated")
    args = ap.parse_args()

    threshold = args.sigma * math.sqrt(math.log(math.e * args.d) / args.N)
    rhos = [threshold * f for f in (0.25, 0.5, 1.0, 2.0, 4.0)]
    out = small_ball_demo(args.N, args.d, args.sigma, rhos, args.trials,
                          args.seed, get_profile(args.profile))
    print(f"threshold rho ~ {threshold:.4f}  (sigma^2 log(ed)/N = {out['threshold']:.5f})")
    print(f"{'rho':>8} {'target':>7} {'median_l2':>10} {'rho^2':>9} {'rate':>9}")
    for row in out["rows"]:
        print(f"{row['rho']:>8.4f} {row['target']:>7} {row['median_l2']:>10.5f} "
              f"{row['rho_sq']:>9.5f} {row['minimax_rate']:>9.5f}")


if __name__ == "__main__":
    main()
