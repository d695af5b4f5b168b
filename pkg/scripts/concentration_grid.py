#!/usr/bin/env python3
"""Concentration grid: tied-model Gram error and lambda_0 scaling vs width.

Runs the two Monte Carlo experiments over a width grid and prints the
per-cell medians and the fraction of trials meeting the half-lambda*
threshold. Equivalent to `deqlab concentration` with the same settings.
"""

import argparse
import time
from pathlib import Path

import numpy as np

from deqlab.concentration import (
    lambda0_vs_width,
    tied_vs_population,
    write_report_csv,
    write_summary_csv,
)
from deqlab.data import gen_sphere_data


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=16)
    ap.add_argument("--d", type=int, default=16)
    ap.add_argument("--widths", type=int, nargs="+", default=[100, 400, 1600])
    ap.add_argument("--depth", type=int, default=6)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--sigma-w2", type=float, default=0.08)
    ap.add_argument("--data-seed", type=int, default=5)
    ap.add_argument("--base-seed", type=int, default=42)
    ap.add_argument("--out", type=Path, default=Path("out/concentration"))
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    ds = gen_sphere_data(args.n, args.d, args.data_seed)

    t0 = time.time()
    rep = tied_vs_population(ds.x, args.sigma_w2, args.widths, args.depth,
                             args.trials, args.base_seed)
    write_report_csv(args.out / "tied_vs_population.csv", rep)
    write_summary_csv(args.out / "tied_vs_population_summary.csv", rep)
    for m in args.widths:
        med = np.median(rep.errors_for(m=m))
        print(f"tied_vs_population m={m}: median ||G/m - K||_F = {med:.4g}")
    print(f"({time.time() - t0:.0f}s)")

    t0 = time.time()
    rep = lambda0_vs_width(ds.x, args.sigma_w2, args.widths, args.trials,
                           args.base_seed)
    write_report_csv(args.out / "lambda0_vs_width.csv", rep)
    write_summary_csv(args.out / "lambda0_vs_width_summary.csv", rep)
    print(f"lambda_star = {rep.extra['lambda_star']:.6g}")
    for m, frac in rep.extra["fraction_ge_half"].items():
        print(f"lambda0_vs_width m={m}: fraction >= m*lambda*/2: {frac:.3g}")
    print(f"({time.time() - t0:.0f}s)")


if __name__ == "__main__":
    main()
