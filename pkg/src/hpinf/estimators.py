"""Influence estimators over a dump of per-example, per-block gradients.

Every estimator scores training example k as

    I(k) = - sum_l  v_l^T  H_l^{-1}  g_{k,l}

and differs only in how the inverse block curvature H_l^{-1} is approximated.
Negative scores are helpful (they lower validation loss), positive ones harmful.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fisher import (DAMPING_FLOOR, ConvergenceWarning, build_fim, build_gfim, damping_factor,
                     vec)
from .hyperpower import IterationConfig, lissa_iterate, schulz_inverse
from .linalg import ShapeError, cg_solve, gaussian_inverse, lu_factor, lu_solve

ESTIMATORS = ("hyperinf", "datainf", "lissa", "tracin", "exact")

# largest (rd)^2 entry count the exact estimator will materialize
EXACT_MAX_ENTRIES = 10**8


class CapacityError(MemoryError):
    pass


@dataclass
class GradientDump:
    """Training gradients ``train[name]`` of shape (n, d, r) and a validation block ``val[name]`` (d, r).

    Blocks with d < r are transposed on construction so that the long
    dimension comes first; ``transposed[name]`` records it.
    """
    block_names: list[str]
    train: dict[str, np.ndarray]
    val: dict[str, np.ndarray]
    example_ids: Optional[list[str]] = None
    transposed: dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        if not self.block_names:
            raise ShapeError("dump has no blocks")
        if len(set(self.block_names)) != len(self.block_names):
            raise ShapeError("block names must be unique")
        n = None
        for name in self.block_names:
            if name not in self.train:
                raise ShapeError(f"block {name!r} has no training gradients")
            if name not in self.val:
                raise ShapeError(f"block {name!r} has no validation gradient")
            g = np.asarray(self.train[name], dtype=np.float64)
            v = np.asarray(self.val[name], dtype=np.float64)
            if g.ndim != 3 or v.shape != g.shape[1:]:
                raise ShapeError(f"block {name!r}: train {g.shape} and val {v.shape} disagree")
            if n is None:
                n = g.shape[0]
            elif g.shape[0] != n:
                raise ShapeError(f"block {name!r} has {g.shape[0]} examples, expected {n}")
            if not (np.all(np.isfinite(g)) and np.all(np.isfinite(v))):
                raise ValueError(f"block {name!r} contains non-finite gradients")
            flip = self.transposed.get(name, False)
            if g.shape[1] < g.shape[2]:
                g = np.swapaxes(g, 1, 2)
                v = v.T
                flip = not flip
            self.train[name] = np.ascontiguousarray(g)
            self.val[name] = np.ascontiguousarray(v)
            self.transposed[name] = flip
        if n < 1:
            raise ShapeError("dump has no examples")
        if self.example_ids is None:
            self.example_ids = [str(i) for i in range(n)]
        if len(self.example_ids) != n:
            raise ShapeError(f"{len(self.example_ids)} example ids for {n} examples")

    @property
    def n_examples(self) -> int:
        return self.train[self.block_names[0]].shape[0]

    def shape(self, name: str) -> tuple[int, int]:
        _, d, r = self.train[name].shape
        return d, r

    def scaled_val(self, c: float) -> "GradientDump":
        return GradientDump(list(self.block_names), dict(self.train),
                            {k: c * v for k, v in self.val.items()}, list(self.example_ids))

    def subset(self, index) -> "GradientDump":
        index = np.asarray(index)
        return GradientDump(list(self.block_names), {k: g[index] for k, g in self.train.items()},
                            dict(self.val), [self.example_ids[i] for i in index])


@dataclass
class InfluenceReport:
    estimator: str
    scores: np.ndarray
    example_ids: list[str]
    per_block_scores: Optional[np.ndarray] = None
    config: dict = field(default_factory=dict)
    status: dict = field(default_factory=dict)

    @property
    def order(self) -> np.ndarray:
        """Example indices by ascending score, ties by index."""
        return np.argsort(self.scores, kind="stable")

    @property
    def ranking_ascending(self) -> list[str]:
        return [self.example_ids[i] for i in self.order]

    @property
    def ranks(self) -> np.ndarray:
        """1-based position of every example in the ascending ranking."""
        out = np.empty(len(self.scores), dtype=np.int64)
        out[self.order] = np.arange(1, len(self.scores) + 1)
        return out


def _resolve_damping(g: np.ndarray, lam: Optional[float], coefficient: float) -> float:
    if lam is not None:
        if not lam > 0:
            raise ValueError("a fixed damping must be > 0")
        return float(lam)
    return max(damping_factor(g, coefficient), DAMPING_FLOOR)


def _report(name, dump, per_block, config, status) -> InfluenceReport:
    per_block = np.column_stack(per_block)
    return InfluenceReport(name, per_block.sum(axis=1), list(dump.example_ids), per_block,
                           config, status)


def _damping_echo(lam, coefficient):
    if lam is None:
        return {"damping": "per-block", "damping_coefficient": coefficient}
    return {"damping": "fixed", "lambda": lam}


def score_tracin(dump: GradientDump) -> InfluenceReport:
    per_block = [-np.einsum("ndr,dr->n", dump.train[b], dump.val[b]) for b in dump.block_names]
    return _report("tracin", dump, per_block, {}, {})


def score_exact(dump: GradientDump, lam: Optional[float] = None, damping_coef: float = 0.1,
                solver: str = "lu") -> InfluenceReport:
    """Damped flattened-FIM influence, solved exactly per block.

    ``solver`` is "lu" (Gaussian elimination) or "cg" (conjugate gradient to 1e-14).
    """
    per_block, lambdas = [], {}
    for b in dump.block_names:
        g = dump.train[b]
        d, r = dump.shape(b)
        if (r * d) ** 2 > EXACT_MAX_ENTRIES:
            raise CapacityError(f"block {b!r}: exact curvature would need {(r * d) ** 2} entries "
                                f"(cap {EXACT_MAX_ENTRIES})")
        lam_b = _resolve_damping(g, lam, damping_coef)
        a = build_fim(g, lam_b, b).damped()
        rhs = vec(dump.val[b])
        if solver == "lu":
            u = lu_solve(lu_factor(a), rhs)
        elif solver == "cg":
            u, _ = cg_solve(a, rhs, max_iters=10 * a.shape[0], tol=1e-14)
        else:
            raise ValueError(f"unknown solver {solver!r}")
        per_block.append(-(vec(g) @ u))
        lambdas[b] = lam_b
    config = {**_damping_echo(lam, damping_coef), "solver": solver}
    return _report("exact", dump, per_block, config, {"lambda": lambdas})


def score_hyperinf(dump: GradientDump, cfg: IterationConfig = IterationConfig(),
                   lam: Optional[float] = None, damping_coef: float = 0.1,
                   inverter: str = "schulz", flatten: bool = False) -> InfluenceReport:
    """GFIM + Schulz influence.

    Per block the damped GFIM (d x d) is inverted once, h_l = v_l^T A_l^{-1}
    is cached, and each example scores -sum_l trace(h_l g_{k,l}). The trace
    is the scalar that matches the Kronecker-lifted vec form. With
    ``flatten=True`` the (rd) x (rd) FIM is inverted instead.
    """
    per_block = []
    status = {"lambda": {}, "residual": {}, "converged": {}, "curvature_bytes": 0}
    for b in dump.block_names:
        g = dump.train[b]
        lam_b = _resolve_damping(g, lam, damping_coef)
        curv = (build_fim if flatten else build_gfim)(g, lam_b, b)
        a = curv.damped()
        if inverter == "exact":
            x = gaussian_inverse(a)
            converged = True
        elif inverter == "schulz":
            x, trace = schulz_inverse(a, cfg)
            converged = trace.converged
        else:
            raise ValueError(f"unknown inverter {inverter!r}")
        resid = float(np.linalg.norm(np.eye(a.shape[0]) - a @ x))
        if not converged:
            warnings.warn(f"Schulz iteration did not converge on block {b!r} "
                          f"(residual {resid:.3e})", ConvergenceWarning, stacklevel=2)
        if flatten:
            h = vec(dump.val[b]) @ x
            per_block.append(-(vec(g) @ h))
        else:
            h = dump.val[b].T @ x  # r x d
            per_block.append(-np.einsum("rd,ndr->n", h, g))
        status["lambda"][b] = lam_b
        status["residual"][b] = resid
        status["converged"][b] = bool(converged)
        status["curvature_bytes"] = max(status["curvature_bytes"], curv.nbytes)
    config = {**_damping_echo(lam, damping_coef), "inverter": inverter,
              "curvature": "FIM" if flatten else "GFIM", **cfg.echo()}
    return _report("hyperinf", dump, per_block, config, status)


def score_datainf(dump: GradientDump, lam: Optional[float] = None,
                  damping_coef: float = 0.1) -> InfluenceReport:
    """Sherman-Morrison closed form, evaluated with inner products only.

    -v^T Hhat^{-1} g_k = -(1/lambda) (v.g_k - (1/n) sum_i c_i g_i.g_k),
    c_i = v.g_i / (lambda + |g_i|^2), so no (rd) x (rd) matrix is formed.
    """
    per_block, lambdas = [], {}
    for b in dump.block_names:
        g = vec(dump.train[b])
        v = vec(dump.val[b])
        lam_b = _resolve_damping(dump.train[b], lam, damping_coef)
        c = (g @ v) / (lam_b + np.einsum("ij,ij->i", g, g))
        w = c @ g
        per_block.append(-((g @ v) - (g @ w) / g.shape[0]) / lam_b)
        lambdas[b] = lam_b
    return _report("datainf", dump, per_block, _damping_echo(lam, damping_coef),
                   {"lambda": lambdas})


def datainf_inverse_dense(flat_grads: np.ndarray, lam: float) -> np.ndarray:
    """Materialized (1/(n lambda)) sum_i (I - g_i g_i^T / (lambda + g_i^T g_i)); reference path."""
    g = np.asarray(flat_grads, dtype=np.float64)
    n, p = g.shape
    weights = 1.0 / (lam + np.einsum("ij,ij->i", g, g))
    out = -(g.T * weights) @ g / (n * lam)
    out.flat[:: p + 1] += 1.0 / lam
    return out


def score_lissa(dump: GradientDump, iters: int = 10, lam: Optional[float] = None,
                damping_coef: float = 0.1) -> InfluenceReport:
    """LiSSA on the damped flattened FIM applied as an operator (never materialized)."""
    per_block = []
    status = {"lambda": {}, "diverged": {}, "final_residual": {}}
    for b in dump.block_names:
        g = vec(dump.train[b])
        v = vec(dump.val[b])
        lam_b = _resolve_damping(dump.train[b], lam, damping_coef)
        n = g.shape[0]

        def apply(u, g=g, lam_b=lam_b):
            return g.T @ (g @ u) / n + lam_b * u

        with np.errstate(over="ignore", invalid="ignore"):
            r, trace = lissa_iterate(apply, v, iters)
            scores = -(g @ r)
        per_block.append(scores)
        status["lambda"][b] = lam_b
        status["diverged"][b] = bool(trace.diverged)
        status["final_residual"][b] = trace.final_error
    config = {**_damping_echo(lam, damping_coef), "iters": iters}
    return _report("lissa", dump, per_block, config, status)


def run_estimator(name: str, dump: GradientDump, lam: Optional[float] = None,
                  cfg: IterationConfig = IterationConfig(), lissa_iters: int = 10,
                  damping_coef: float = 0.1) -> InfluenceReport:
    if name == "hyperinf":
        return score_hyperinf(dump, cfg, lam, damping_coef)
    if name == "datainf":
        return score_datainf(dump, lam, damping_coef)
    if name == "lissa":
        return score_lissa(dump, lissa_iters, lam, damping_coef)
    if name == "tracin":
        return score_tracin(dump)
    if name == "exact":
        return score_exact(dump, lam, damping_coef)
    raise ValueError(f"unknown estimator {name!r}; choose from {', '.join(ESTIMATORS)}")


def rank_examples(report: InfluenceReport, mode: str = "most-helpful",
                  k_percent: float = 10.0) -> list[str]:
    """Ids of the top k% examples: lowest scores first for "most-helpful",
    highest first for "most-harmful". Ties go to the lower example index."""
    if not 0 < k_percent <= 100:
        raise ValueError("k_percent must be in (0, 100]")
    n = len(report.scores)
    if n == 0:
        return []
    size = min(n, math.ceil(round(k_percent * n / 100.0, 9)))
    if mode == "most-helpful":
        order = np.argsort(report.scores, kind="stable")
    elif mode == "most-harmful":
        order = np.argsort(-report.scores, kind="stable")
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return [report.example_ids[i] for i in order[:size]]
