#!/usr/bin/env python3
"""Synthetic convergence grid: Schulz vs DataInf vs LiSSA on M = sum s s^T + lambda I.

Writes traces.csv, run.json and one SVG per (d, N) cell.

    python3 scripts/convergence_figure.py --out results/convergence
    python3 scripts/convergence_figure.py --dims 512 1024 --samples 200 12800 --out results/fig1_small
"""
import argparse
from pathlib import Path

from hpinf.fileio import write_report
from hpinf.plots import render_plot
from hpinf.synthetic import SyntheticSpec, run_convergence_test


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--dims", type=int, nargs="+", default=[512, 1024, 2048, 4096])
    ap.add_argument("--samples", type=int, nargs="+", default=[200, 800, 6400, 12800])
    ap.add_argument("--iters", type=int, default=25)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results/convergence"))
    args = ap.parse_args()

    spec = SyntheticSpec(dims=tuple(args.dims), sample_counts=tuple(args.samples),
                         iters=args.iters, seed=args.seed)
    cells = run_convergence_test(spec)
    write_report(cells, args.out, {"spec": spec.__dict__})
    print(f"{'d':>5} {'N':>6} {'lambda_max':>10} {'schulz rel':>11} {'datainf':>10} {'lissa@10':>10}")
    for c in cells:
        s, di, li = c.traces["schulz"], c.traces["datainf"], c.traces["lissa"]
        print(f"{c.d:5d} {c.n:6d} {c.lambda_max:10.1f} {s.relative_error[-1]:11.2e} "
              f"{di.final_error:10.2e} {li.per_iteration_error[min(9, li.iters_used - 1)]:10.2e}")
        render_plot({"Schulz": s, "LiSSA": li, "DataInf (one-shot)": [di.final_error] * s.iters_used},
                    args.out / f"convergence_d{c.d}_N{c.n}.svg", log_y=True,
                    title=f"d={c.d}, N={c.n}", y_label="error")


if __name__ == "__main__":
    main()
