#!/usr/bin/env python3
"""Refinement study of the stepper against the exact heat kernel.

Runs the linear model on a ladder of (n, h) pairs and prints the max-in-time
L1 error together with successive ratios; first-order behavior in h shows up
as ratios near one half once space error is subdominant.

Usage: python scripts/heat_convergence.py [--levels 4] [--csv out.csv]
"""

import argparse
import time

from nfpe import GridSpec, ResolventConfig, make_model, mild_solution
from nfpe.diagnostics import compare_l1, heat_oracle


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--levels", type=int, default=4)
    ap.add_argument("--sigma0", type=float, default=0.5)
    ap.add_argument("--T", type=float, default=0.1)
    ap.add_argument("--csv")
    args = ap.parse_args()

    cfg = ResolventConfig(lam=0.5)
    model = make_model("heat")
    rows = []
    prev = None
    for level in range(args.levels):
        n = 128 * 2**level
        h = 4e-3 / 2**level
        grid = GridSpec(1, 8.0, n)
        rho0 = heat_oracle({"sigma0": args.sigma0}, 0.0, grid)
        t0 = time.perf_counter()
        traj = mild_solution(rho0, model, args.T, h, cfg)
        curve = compare_l1(traj, lambda t: heat_oracle({"sigma0": args.sigma0}, t, grid))
        wall = time.perf_counter() - t0
        ratio = curve.max_error / prev if prev else float("nan")
        prev = curve.max_error
        rows.append((n, h, curve.max_error, ratio, wall))
        print(f"n={n:5d} h={h:.2e}  max L1 err {curve.max_error:.4e}  ratio {ratio:5.3f}  ({wall:.1f}s)")

    if args.csv:
        with open(args.csv, "w", newline="\n") as fh:
            fh.write("n,h,max_l1_error,ratio,seconds\n")
            for r in rows:
                fh.write(",".join(repr(float(v)) for v in r) + "\n")
        print(f"wrote {args.csv}")


if __name__ == "__main__":
    main()
