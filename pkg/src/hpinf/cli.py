"""Command-line entry point: ``hpinf <subcommand> ...`` (or ``python3 -m hpinf``).

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import difflib
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .estimators import ESTIMATORS, CapacityError, run_estimator
from .fileio import DumpError, gen_dump, read_dump, write_report
from .hyperpower import IterationConfig
from .linalg import NumericalBreakdown, ShapeError, SingularMatrixError
from .plots import render_plot
from .synthetic import SyntheticSpec, run_convergence_test, run_invert_bench
from .toy import DEFAULT_P_GRID, TOY_ITERATION, ToyTask, run_detection, run_selection

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    def __init__(self, message: str, parser: argparse.ArgumentParser):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, self)


def _list_of(kind):
    def parse(text: str):
        try:
            return [kind(t) for t in text.split(",") if t.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {kind.__name__} list {text!r}")
    parse.__name__ = f"{kind.__name__}-list"
    return parse


def _flat(values):
    if values is None:
        return None
    return [v for group in values for v in (group if isinstance(group, list) else [group])]


def _estimator_list(text: str):
    names = [t.strip() for t in text.split(",") if t.strip()]
    for name in names:
        if name not in ESTIMATORS:
            raise argparse.ArgumentTypeError(
                f"unknown estimator {name!r} (choose from {', '.join(ESTIMATORS)})")
    return names


def _positive(kind):
    def parse(text):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
        return value
    parse.__name__ = kind.__name__
    return parse


def _add_seed(p):
    p.add_argument("--seed", type=int, default=0, help="base RNG seed (default 0)")


def _add_iteration(p, iters, init_mode="scaled-identity"):
    p.add_argument("--iters", type=_positive(int), default=iters, help="Schulz iterations")
    p.add_argument("--init-scale", type=_positive(float), default=5e-4,
                   help="alpha in X0 = alpha I (scaled-identity start)")
    p.add_argument("--init-mode", choices=("scaled-identity", "transpose-scaled"), default=init_mode)


def _add_toy(p):
    p.add_argument("--n-train", type=_positive(int), default=500)
    p.add_argument("--n-val", type=_positive(int), default=200)
    p.add_argument("--n-test", type=_positive(int), default=1000)
    p.add_argument("--dim", type=_positive(int), default=20)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--separation", type=float, default=3.0, help="distance between class means")
    p.add_argument("--flip", type=float, default=0.2, help="fraction of training labels flipped")
    p.add_argument("--estimators", type=_estimator_list, default=["hyperinf"],
                   help=f"comma-separated subset of {','.join(ESTIMATORS)}")
    p.add_argument("--seeds", type=_positive(int), default=3)
    _add_seed(p)
    _add_iteration(p, TOY_ITERATION.max_iters, TOY_ITERATION.init_mode)
    p.add_argument("--out", type=Path, required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hpinf", allow_abbrev=False,
                     description="GFIM + Schulz influence estimation and its experiments.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("converge", allow_abbrev=False,
                       help="synthetic convergence of Schulz, DataInf and LiSSA")
    p.add_argument("--dims", type=_list_of(int), nargs="+", default=[[512, 1024, 2048, 4096]])
    p.add_argument("--samples", type=_list_of(int), nargs="+",
                   default=[[200, 800, 6400, 12800]])
    p.add_argument("--lambda", dest="lam", type=_positive(float), default=0.01)
    p.add_argument("--init-scale", type=_positive(float), default=5e-4)
    p.add_argument("--iters", type=_positive(int), default=25)
    p.add_argument("--sample-std", type=_positive(float), default=0.3,
                   help="std of the entries of each random sample s_i")
    _add_seed(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("invert-bench", allow_abbrev=False,
                       help="error and wall time of GE, CG, GMRES and Schulz")
    p.add_argument("--dims", type=_list_of(int), nargs="+", default=[[16, 64, 256, 1024]])
    p.add_argument("--seeds", type=_positive(int), default=3)
    p.add_argument("--samples", type=_positive(int), default=12800)
    p.add_argument("--iters", type=_positive(int), default=20)
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    p.add_argument("--max-columns", type=_positive(int), default=None,
                   help="solve only this many columns with CG/GMRES and extrapolate")
    _add_seed(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("score", allow_abbrev=False, help="influence scores for a gradient dump")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--estimators", type=_estimator_list, default=["hyperinf"],
                   help=f"comma-separated subset of {','.join(ESTIMATORS)}")
    p.add_argument("--damping", choices=("per-block", "fixed"), default="per-block",
                   help="per-block: 0.1 * mean squared gradient norm / d; fixed: --lambda")
    p.add_argument("--lambda", dest="lam", type=_positive(float), default=None)
    p.add_argument("--damping-coef", type=_positive(float), default=0.1)
    p.add_argument("--lissa-iters", type=_positive(int), default=10)
    _add_iteration(p, 25)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("detect", allow_abbrev=False, help="mislabeled-example detection on the toy task")
    _add_toy(p)
    p.add_argument("--p-grid", type=_list_of(float), nargs="+", default=[list(DEFAULT_P_GRID)])

    p = sub.add_parser("select", allow_abbrev=False, help="top-k%% data selection on the toy task")
    _add_toy(p)
    p.add_argument("--k-grid", type=_list_of(float), nargs="+", default=[[5, 20, 40]])

    p = sub.add_parser("gen-dump", allow_abbrev=False, help="write a random gradient dump")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n", type=_positive(int), default=32, help="number of training examples")
    p.add_argument("--blocks", nargs="+", default=["layer0:16:4", "layer1:8:2"],
                   help="blocks as name:d:r")
    _add_seed(p)
    return parser


def _iteration_config(args) -> IterationConfig:
    return IterationConfig(max_iters=args.iters, init_scale=args.init_scale, init_mode=args.init_mode)


def _toy_task(args) -> ToyTask:
    return ToyTask(n_train=args.n_train, n_val=args.n_val, n_test=args.n_test, dim=args.dim,
                   classes=args.classes, class_separation=args.separation,
                   flip_fraction=args.flip, seed=args.seed)


def _say(msg: str):
    print(msg, file=sys.stderr)


def cmd_converge(args, parser) -> int:
    spec = SyntheticSpec(dims=tuple(_flat(args.dims)), sample_counts=tuple(_flat(args.samples)),
                         lam=args.lam, init_scale=args.init_scale, iters=args.iters,
                         seed=args.seed, sample_std=args.sample_std)
    cells = run_convergence_test(spec)
    write_report(cells, args.out, {"spec": spec.__dict__})
    for c in cells:
        di = c.traces["datainf"]
        series = {"Schulz (|M^-1 - X_t|_F)": c.traces["schulz"],
                  "LiSSA (|Q - Q_t| / |v|)": c.traces["lissa"],
                  "DataInf one-shot": [di.final_error] * c.traces["schulz"].iters_used}
        render_plot(series, args.out / f"convergence_d{c.d}_N{c.n}.svg", log_y=True,
                    title=f"d={c.d}, N={c.n}", y_label="error")
        tr = c.traces["schulz"]
        _say(f"d={c.d} N={c.n}: schulz final {tr.final_error:.3e} "
             f"(rel {tr.relative_error[-1]:.3e}), datainf {di.final_error:.3e}, "
             f"lissa {'diverged' if c.traces['lissa'].diverged else 'final'} "
             f"{c.traces['lissa'].final_error:.3e}")
    return EXIT_OK


def cmd_invert_bench(args, parser) -> int:
    rows = run_invert_bench(dims=tuple(_flat(args.dims)), n=args.samples, seeds=args.seeds,
                            iters=args.iters, dtype=args.dtype, max_columns=args.max_columns,
                            base_seed=args.seed)
    write_report(rows, args.out, {"samples": args.samples, "seeds": args.seeds, "iters": args.iters,
                                  "dtype": args.dtype, "max_columns": args.max_columns,
                                  "base_seed": args.seed})
    for r in rows:
        _say(f"d={r.d:5d} {r.method:12s} err {r.error_mean:.3e}±{r.error_std:.1e} "
             f"time {r.time_mean:.3f}s{' (extrapolated)' if r.extrapolated else ''}")
    return EXIT_OK


def cmd_score(args, parser) -> int:
    if args.damping == "fixed" and args.lam is None:
        raise UsageError("--damping fixed requires --lambda", parser)
    if args.damping == "per-block" and args.lam is not None:
        raise UsageError("--lambda only applies with --damping fixed", parser)
    dump = read_dump(args.manifest)
    cfg = _iteration_config(args)
    several = len(args.estimators) > 1
    for name in args.estimators:
        report = run_estimator(name, dump, lam=args.lam, cfg=cfg, lissa_iters=args.lissa_iters,
                               damping_coef=args.damping_coef)
        out = args.out / name if several else args.out
        write_report(report, out, {"manifest": str(args.manifest), "blocks": dump.block_names})
        _say(f"{name}: wrote {out / 'scores.csv'}")
    return EXIT_OK


def cmd_detect(args, parser) -> int:
    p_grid = _flat(args.p_grid)
    if any(not 0 < p <= 100 for p in p_grid):
        raise UsageError("--p-grid values must lie in (0, 100]", parser)
    report = run_detection(_toy_task(args), args.estimators, p_grid, args.seeds,
                           _iteration_config(args))
    write_report(report, args.out)
    series = {e: report.mean[e] for e in report.mean}
    series["oracle"] = report.oracle
    series["random"] = report.random
    render_plot(series, args.out / "recall.svg", log_y=False, x=report.p_grid,
                x_label="inspected p (%)", y_label="detection rate rt(p)",
                title=f"{report.flip_percent:g}% flipped labels")
    for e in report.mean:
        j = int(np.argmin(np.abs(np.array(report.p_grid) - report.flip_percent)))
        _say(f"{e}: rt({report.p_grid[j]:g}) = {report.mean[e][j]:.3f} "
             f"[{report.ci_low[e][j]:.3f}, {report.ci_high[e][j]:.3f}]")
    return EXIT_OK


def cmd_select(args, parser) -> int:
    k_grid = _flat(args.k_grid)
    if any(not 0 < k <= 100 for k in k_grid):
        raise UsageError("--k-grid values must lie in (0, 100]", parser)
    task = _toy_task(args)
    cells = run_selection(task, args.estimators, k_grid, args.seeds, _iteration_config(args))
    write_report(cells, args.out, {"task": task.__dict__, "estimators": args.estimators,
                                   "seeds": args.seeds})
    for c in cells:
        _say(f"{c.method:10s} k={c.k_percent:5g}%: " +
             (c.skipped if c.skipped else f"accuracy {c.accuracy_mean:.4f}"))
    return EXIT_OK


def cmd_gen_dump(args, parser) -> int:
    blocks = []
    for spec in args.blocks:
        parts = spec.split(":")
        try:
            name, d, r = parts[0], int(parts[1]), int(parts[2])
        except (IndexError, ValueError):
            raise UsageError(f"bad block spec {spec!r}; expected name:d:r", parser)
        if len(parts) != 3 or d < 1 or r < 1:
            raise UsageError(f"bad block spec {spec!r}; expected name:d:r with d, r >= 1", parser)
        blocks.append((name, d, r))
    path = gen_dump(args.out, n=args.n, blocks=tuple(blocks), seed=args.seed)
    _say(f"wrote {path}")
    return EXIT_OK


COMMANDS = {"converge": cmd_converge, "invert-bench": cmd_invert_bench, "score": cmd_score,
            "detect": cmd_detect, "select": cmd_select, "gen-dump": cmd_gen_dump}


def _suggest(parser: argparse.ArgumentParser, message: str) -> str:
    if "unrecognized arguments" not in message:
        return ""
    options = [s for a in parser._actions for s in a.option_strings]
    hints = []
    for token in message.split(":", 1)[1].split():
        match = difflib.get_close_matches(token.split("=")[0], options, n=1)
        if match:
            hints.append(f"did you mean {match[0]} (not {token})?")
    return (" " + " ".join(hints)) if hints else ""


def _subparser(parser, argv):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for token in argv:
                if token in action.choices:
                    return action.choices[token]
    return parser


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        try:
            args, extras = parser.parse_known_args(argv)
        except SystemExit as exc:  # --help
            return int(exc.code or 0)
        if extras:
            raise UsageError(f"unrecognized arguments: {' '.join(extras)}", _subparser(parser, argv))
        return COMMANDS[args.command](args, _subparser(parser, argv))
    except UsageError as exc:
        exc.parser.print_usage(sys.stderr)
        print(f"{exc.parser.prog}: error: {exc}{_suggest(exc.parser, str(exc))}", file=sys.stderr)
        return EXIT_USAGE
    except (DumpError, ShapeError, SingularMatrixError, NumericalBreakdown, CapacityError,
            MemoryError, ValueError) as exc:
        print(f"hpinf: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"hpinf: I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(cli_main())
