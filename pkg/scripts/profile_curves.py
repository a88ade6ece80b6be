#!/usr/bin/env python3
"""Tabulate the penalty curves: closed-form and Monte Carlo r_M, r_Q, psi on a
log grid of rho, for both constants profiles.  Output is plot-ready CSV."""

import argparse
import sys

import numpy as np

from minimaxreg.complexity import MC, CLOSED_FORM, complexity_profile, get_profile


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=128)
    ap.add_argument("--d", type=int, default=2048)
    ap.add_argument("--sigma", type=float, default=1.0)
    ap.add_argument("--rho-min", type=float, default=0.01)
    ap.add_argument("--rho-max", type=float, default=100.0)
    ap.add_argument("--points", type=int, default=40)
    ap.add_argument("--mc", action="store_true", help="add Monte Carlo columns")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    grid = np.geomspace(args.rho_min, args.rho_max, args.points)
    out = sys.stdout if args.out is None else open(args.out, "w")
    header = ["rho"]
    cols = []
    for name in ("paper-faithful", "calibrated"):
        prof = complexity_profile(args.N, args.d, args.sigma, grid,
                                  get_profile(name), CLOSED_FORM)
        cols += [prof.r_M, prof.r_Q, prof.psi]
        tag = name.replace("-", "_")
        header += [f"r_M_{tag}", f"r_Q_{tag}", f"psi_{tag}"]
        if args.mc:
            prof_mc = complexity_profile(args.N, args.d, args.sigma, grid,
                                         get_profile(name), MC, seed=args.seed)
            cols += [prof_mc.r_M, prof_mc.r_Q, prof_mc.psi]
            header += [f"r_M_{tag}_mc", f"r_Q_{tag}_mc", f"psi_{tag}_mc"]
    print(",".join(header), file=out)
    for i, rho in enumerate(grid):
        print(",".join(repr(float(v)) for v in [rho] + [c[i] for c in cols]), file=out)
    if out is not sys.stdout:
        out.close()


if __name__ == "__main__":
    main()
