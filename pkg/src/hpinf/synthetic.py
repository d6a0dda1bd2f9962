"""Synthetic matrix-inverse experiments.

``run_convergence_test`` builds M = sum_i s_i s_i^T + lambda I and tracks how
Schulz, DataInf and LiSSA approach M^{-1} (or M^{-1} v). ``run_invert_bench``
times exact and iterative inverses against the Gaussian-elimination result.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .estimators import datainf_inverse_dense
from .hyperpower import ConvergenceTrace, IterationConfig, lissa_iterate, schulz_inverse
from .linalg import cg_core, frobenius_norm, gaussian_inverse, gmres_core

MAX_DIM = 8192


@dataclass(frozen=True)
class SyntheticSpec:
    dims: tuple[int, ...] = (512, 1024, 2048, 4096)
    sample_counts: tuple[int, ...] = (200, 800, 6400, 12800)
    lam: float = 0.01
    init_scale: float = 5e-4
    iters: int = 25
    seed: int = 0
    # std of the entries of s_i; keeps 5e-4 * lambda_max(M) < 2 across the default grid
    sample_std: float = 0.3

    def __post_init__(self):
        if not self.dims or not self.sample_counts:
            raise ValueError("dims and sample_counts must be nonempty")
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")
        if max(self.dims) > MAX_DIM:
            raise MemoryError(f"d={max(self.dims)} exceeds the {MAX_DIM} cap")


def cell_rng(seed: int, d: int, n: int) -> np.random.Generator:
    return np.random.default_rng([seed, d, n])


def make_problem(d: int, n: int, lam: float, seed: int, sample_std: float = 0.3,
                 dtype=np.float64):
    """Return (samples (n x d), M, v) for one (d, N) cell."""
    rng = cell_rng(seed, d, n)
    s = sample_std * rng.standard_normal((n, d))
    v = rng.standard_normal(d)
    m = s.T @ s
    m = 0.5 * (m + m.T)
    m.flat[:: d + 1] += lam
    return s, m.astype(dtype), v.astype(dtype)


@dataclass
class CellResult:
    d: int
    n: int
    lambda_max: float
    traces: dict[str, ConvergenceTrace] = field(default_factory=dict)


def run_cell(d: int, n: int, spec: SyntheticSpec) -> CellResult:
    s, m, v = make_problem(d, n, spec.lam, spec.seed, spec.sample_std)
    exact = gaussian_inverse(m)
    cfg = IterationConfig(max_iters=spec.iters, init_scale=spec.init_scale)
    _, schulz = schulz_inverse(m, cfg, oracle=exact)

    # gradients scaled by sqrt(N) so that DataInf's averaged FIM + lambda I equals M
    approx = datainf_inverse_dense(np.sqrt(n) * s, spec.lam)
    err = frobenius_norm(exact - approx)
    datainf = ConvergenceTrace("datainf", [err], "frobenius_error_vs_oracle", False, 1,
                               relative_error=[err / frobenius_norm(exact)])

    with np.errstate(over="ignore", invalid="ignore"):
        _, lissa = lissa_iterate(lambda u: m @ u, v, spec.iters, oracle=exact @ v)
    lam_max = float(np.linalg.eigvalsh(m)[-1])
    return CellResult(d, n, lam_max, {"schulz": schulz, "datainf": datainf, "lissa": lissa})


def run_convergence_test(spec: SyntheticSpec = SyntheticSpec()) -> list[CellResult]:
    return [run_cell(d, n, spec) for d in spec.dims for n in spec.sample_counts]


BENCH_METHODS = ("GaussianElim", "CG", "GMRES", "Schulz")


@dataclass
class BenchRow:
    d: int
    method: str
    error_mean: float
    error_std: float
    time_mean: float
    time_std: float
    # columns actually solved by CG/GMRES; time is scaled up to all d columns
    columns_solved: int

    @property
    def extrapolated(self) -> bool:
        return self.columns_solved < self.d


def _column_subset(d: int, max_columns):
    if max_columns is None or max_columns >= d:
        return np.arange(d)
    return np.unique(np.linspace(0, d - 1, max_columns).round().astype(int))


def _columnwise_inverse(solver, m, cols, iters):
    d = m.shape[0]
    eye = np.eye(d, dtype=m.dtype)
    out = np.empty((d, len(cols)), dtype=m.dtype)
    for j, c in enumerate(cols):
        out[:, j] = solver(m, eye[c], iters)
    return out


def _cg(m, b, iters):
    return cg_core(m, b, iters, 0.0)[0]


def _gmres(m, b, iters):
    return gmres_core(m, b, iters, iters, 0.0)[0]


def run_invert_bench(dims=(16, 64, 256, 1024, 4096), n: int = 12800, seeds: int = 3,
                     iters: int = 20, dtype="float32", max_columns=None, init_scale: float = 5e-4,
                     sample_std: float = 0.3, base_seed: int = 0) -> list[BenchRow]:
    """Error and wall time of GE, CG, GMRES and Schulz for inverting M.

    Iterative methods run a fixed ``iters`` steps. CG and GMRES solve one
    identity column at a time; ``max_columns`` limits them to an evenly
    spaced subset, with error and time scaled to the full matrix (each column
    costs the same fixed work). The default float32 matches the single
    precision in which the reference error magnitudes arise.
    """
    dtype = np.dtype(dtype)
    rows = []
    for d in dims:
        cols = _column_subset(d, max_columns)
        scale = np.sqrt(d / len(cols))
        errs = {k: [] for k in BENCH_METHODS}
        times = {k: [] for k in BENCH_METHODS}
        for s in range(seeds):
            _, m, _ = make_problem(d, n, 0.01, base_seed + s, sample_std, dtype=dtype)
            t0 = time.perf_counter()
            truth = gaussian_inverse(m)
            times["GaussianElim"].append(time.perf_counter() - t0)
            errs["GaussianElim"].append(0.0)

            t0 = time.perf_counter()
            x, _ = schulz_inverse(m, IterationConfig(max_iters=iters, init_scale=init_scale))
            times["Schulz"].append(time.perf_counter() - t0)
            errs["Schulz"].append(frobenius_norm(truth - x))

            for name, solver in (("CG", _cg), ("GMRES", _gmres)):
                t0 = time.perf_counter()
                part = _columnwise_inverse(solver, m, cols, iters)
                times[name].append((time.perf_counter() - t0) * d / len(cols))
                errs[name].append(scale * frobenius_norm(truth[:, cols] - part))
        for name in BENCH_METHODS:
            solved = d if name in ("GaussianElim", "Schulz") else len(cols)
            rows.append(BenchRow(d, name, float(np.mean(errs[name])), float(np.std(errs[name])),
                                 float(np.mean(times[name])), float(np.std(times[name])), solved))
    return rows
