#!/usr/bin/env python3
"""Mislabeled-example detection and top-k data selection on the toy logistic task.

    python3 scripts/toy_attribution.py --out results/toy
    python3 scripts/toy_attribution.py --classes 4 --dim 40 --estimators hyperinf tracin --out results/toy_c4
"""
import argparse
from pathlib import Path

import numpy as np

from hpinf.estimators import ESTIMATORS
from hpinf.fileio import write_report
from hpinf.plots import render_plot
from hpinf.toy import ToyTask, run_detection, run_selection


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--estimators", nargs="+", choices=ESTIMATORS, default=list(ESTIMATORS))
    ap.add_argument("--n-train", type=int, default=500)
    ap.add_argument("--dim", type=int, default=20)
    ap.add_argument("--classes", type=int, default=2)
    ap.add_argument("--flip", type=float, default=0.2)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results/toy"))
    args = ap.parse_args()

    task = ToyTask(n_train=args.n_train, dim=args.dim, classes=args.classes,
                   flip_fraction=args.flip, seed=args.seed)
    det = run_detection(task, args.estimators, seeds=args.seeds)
    write_report(det, args.out / "detection")
    render_plot({**det.mean, "oracle": det.oracle, "random": det.random},
                args.out / "detection" / "recall.svg", log_y=False, x=det.p_grid,
                x_label="inspected p (%)", y_label="rt(p)")
    j = int(np.argmin(np.abs(np.array(det.p_grid) - det.flip_percent)))
    print(f"detection rt({det.p_grid[j]:g}), mean [95% CI] over {args.seeds} seeds")
    for e in args.estimators:
        print(f"  {e:9s} {det.mean[e][j]:.3f} [{det.ci_low[e][j]:.3f}, {det.ci_high[e][j]:.3f}]")
    print(f"  {'random':9s} {det.random[j]:.3f}")

    cells = run_selection(task, args.estimators, seeds=args.seeds)
    write_report(cells, args.out / "selection", {"task": task.__dict__})
    print("selection: held-out accuracy after retraining on the top-k% most helpful")
    for c in cells:
        print(f"  {c.method:9s} k={c.k_percent:5g}%  " +
              (c.skipped or f"{c.accuracy_mean:.4f}"))


if __name__ == "__main__":
    main()
