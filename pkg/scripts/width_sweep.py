#!/usr/bin/env python3
"""Width sweep on synthetic sphere data, written as a library script.

Trains the same dataset at several widths with one shared step size (auto
at the largest width) and prints the per-run summary; equivalent to
`deqlab train -c configs/synthetic_desk.yaml` but handy for hacking on
the loop itself.
"""

import argparse
import time
from pathlib import Path

from deqlab.data import gen_sphere_data
from deqlab.model import SolverConfig, init_params, solve_equilibrium
from deqlab.reporting import line_plot_svg
from deqlab.train import TrainConfig, auto_eta, train, write_metrics_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--d", type=int, default=100)
    ap.add_argument("--widths", type=int, nargs="+", default=[100, 500, 2000])
    ap.add_argument("--sigma-w2", type=float, default=0.08)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--data-seed", type=int, default=7)
    ap.add_argument("--model-seed", type=int, default=11)
    ap.add_argument("--solver-tol", type=float, default=1e-8)
    ap.add_argument("--out", type=Path, default=Path("out/width_sweep"))
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    ds = gen_sphere_data(args.n, args.d, args.data_seed)
    solver = SolverConfig(tol=args.solver_tol)

    m_big = max(args.widths)
    p_big = init_params(m_big, args.d, args.sigma_w2, args.model_seed)
    sol_big = solve_equilibrium(p_big, ds.x, solver)
    eta = auto_eta(p_big, sol_big.z, ds.x, 0.5, solver)
    print(f"shared eta (auto at m={m_big}): {eta:.6g}")

    curves = {}
    for m in args.widths:
        p0 = init_params(m, args.d, args.sigma_w2, args.model_seed)
        cfg = TrainConfig(eta=eta, steps=args.steps, solver=solver)
        t0 = time.time()
        _, trace = train(p0, ds, cfg)
        write_metrics_csv(args.out / f"metrics_m{m}.csv", trace)
        steps = [r.step for r in trace.records]
        curves[f"m={m}"] = (steps, [r.loss for r in trace.records])
        print(f"m={m}: phi0={trace.phi_0:.4g} final={trace.records[-1].loss:.4g} "
              f"max||W||={max(r.w_spec_norm for r in trace.records):.4f} "
              f"({time.time() - t0:.0f}s)")

    line_plot_svg(args.out / "loss.svg", curves, "Training loss by width",
                  "step", "loss", logy=True)
    print(f"wrote {args.out}/loss.svg")


if __name__ == "__main__":
    main()
