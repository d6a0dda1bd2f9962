"""Iterative inverse approximations: the order-p hyperpower family, its p=2
Schulz member, and the LiSSA inverse-vector recursion.

Divergence is reported through the returned trace rather than raised, so
callers can plot blow-ups.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .linalg import ShapeError, as_matrix, frobenius_norm, lu_factor, lu_solve

INIT_MODES = ("scaled-identity", "transpose-scaled", "custom")

# residual above which an un-toleranced run is reported as not converged
CONVERGED_RESIDUAL = 1e-3
# growth factor (relative to the first recorded error) treated as divergence
DIVERGENCE_GROWTH = 1e6


@dataclass(frozen=True)
class IterationConfig:
    max_iters: int = 25
    init_scale: float = 5e-4
    order_p: int = 2
    early_stop_tol: Optional[float] = None
    init_mode: str = "scaled-identity"
    init_matrix: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.init_scale > 0:
            raise ValueError("init_scale must be > 0")
        if self.order_p < 2:
            raise ValueError("order_p must be >= 2")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}, got {self.init_mode!r}")
        if self.init_mode == "custom" and self.init_matrix is None:
            raise ValueError("init_mode='custom' requires init_matrix")
        if self.early_stop_tol is not None and not self.early_stop_tol > 0:
            raise ValueError("early_stop_tol must be > 0")

    def echo(self) -> dict:
        return {
            "max_iters": self.max_iters,
            "init_scale": self.init_scale,
            "order_p": self.order_p,
            "early_stop_tol": self.early_stop_tol,
            "init_mode": self.init_mode,
        }


@dataclass
class ConvergenceTrace:
    method: str
    per_iteration_error: list[float]
    error_metric: str
    converged: bool
    iters_used: int
    diverged: bool = False
    # normalized companion metric; same length as per_iteration_error when present
    relative_error: Optional[list[float]] = None

    def __post_init__(self):
        if len(self.per_iteration_error) != self.iters_used:
            raise ValueError("per_iteration_error length must equal iters_used")

    @property
    def final_error(self) -> float:
        return self.per_iteration_error[-1] if self.per_iteration_error else float("nan")


def stabilized_init(a) -> np.ndarray:
    """X0 = A^T / (||A||_1 ||A||_inf), inside the Schulz convergence region for any nonsingular A."""
    a = as_matrix(a)
    scale = np.abs(a).sum(axis=0).max() * np.abs(a).sum(axis=1).max()
    if scale == 0.0:
        raise ValueError("stabilized_init is undefined for the zero matrix")
    return a.T / scale


def initial_guess(a: np.ndarray, cfg: IterationConfig) -> np.ndarray:
    if cfg.init_mode == "scaled-identity":
        return cfg.init_scale * np.eye(a.shape[0], dtype=a.dtype)
    if cfg.init_mode == "transpose-scaled":
        return stabilized_init(a)
    x0 = as_matrix(cfg.init_matrix, dtype=a.dtype)
    if x0.shape != a.shape:
        raise ShapeError(f"init_matrix shape {x0.shape} does not match {a.shape}")
    return x0


def _shifted_neg(ax: np.ndarray, shift: float) -> np.ndarray:
    # shift*I - AX without materializing the identity
    out = np.negative(ax)
    out.flat[:: out.shape[0] + 1] += shift
    return out


def _iterate(a, cfg: IterationConfig, oracle, method: str) -> tuple[np.ndarray, ConvergenceTrace]:
    a = as_matrix(a)
    n = a.shape[0]
    if a.shape[1] != n:
        raise ShapeError(f"cannot invert non-square matrix {a.shape}")
    if oracle is not None:
        oracle = as_matrix(oracle, dtype=a.dtype)
        if oracle.shape != a.shape:
            raise ShapeError(f"oracle shape {oracle.shape} does not match {a.shape}")
        oracle_norm = frobenius_norm(oracle)
    p = cfg.order_p
    x = initial_guess(a, cfg)
    ax = a @ x
    errors: list[float] = []
    rel: list[float] = []
    converged = diverged = False
    for _ in range(cfg.max_iters):
        s = _shifted_neg(ax, 2.0)  # I + T
        if p > 2:
            t = _shifted_neg(ax, 1.0)
            for _ in range(p - 2):
                s = t @ s
                s.flat[:: n + 1] += 1.0
        x_new = x @ s
        if not np.all(np.isfinite(x_new)):
            diverged = True
            break
        x = x_new
        ax = a @ x
        residual = frobenius_norm(_shifted_neg(ax, 1.0))
        if oracle is not None:
            err = frobenius_norm(oracle - x)
            errors.append(err)
            rel.append(err / oracle_norm if oracle_norm > 0 else err)
        else:
            errors.append(residual)
            rel.append(residual / np.sqrt(n))
        if not np.isfinite(residual) or residual > DIVERGENCE_GROWTH * max(np.sqrt(n), 1.0):
            diverged = True
            break
        if cfg.early_stop_tol is not None and residual <= cfg.early_stop_tol:
            converged = True
            break
    if not diverged and not converged:
        residual = frobenius_norm(_shifted_neg(ax, 1.0))
        converged = residual <= (cfg.early_stop_tol or CONVERGED_RESIDUAL)
    metric = "frobenius_error_vs_oracle" if oracle is not None else "residual_frobenius"
    trace = ConvergenceTrace(method, errors, metric, converged, len(errors), diverged, rel)
    return x, trace


def hyperpower_inverse(a, cfg: IterationConfig = IterationConfig(), oracle=None):
    """Order-p hyperpower iteration X <- X (I + T + ... + T^{p-1}), T = I - A X.

    The polynomial is evaluated by Horner's rule, so an iteration costs p
    matrix products. Returns ``(X, trace)``; the trace holds
    ``||oracle - X_t||_F`` when an oracle is given, else ``||I - A X_t||_F``.
    """
    return _iterate(a, cfg, oracle, method=f"hyperpower_p{cfg.order_p}")


def schulz_inverse(a, cfg: IterationConfig = IterationConfig(), oracle=None):
    """Schulz iteration X <- X (2I - A X); bit-identical to ``hyperpower_inverse`` at p=2."""
    if cfg.order_p != 2:
        cfg = IterationConfig(cfg.max_iters, cfg.init_scale, 2, cfg.early_stop_tol,
                              cfg.init_mode, cfg.init_matrix)
    return _iterate(a, cfg, oracle, method="schulz")


def lissa_iterate(apply: Callable[[np.ndarray], np.ndarray], v: np.ndarray, max_iters: int,
                  oracle: Optional[np.ndarray] = None, method: str = "lissa"):
    """Run v_j = v + (I - A) v_{j-1} with v_0 = v for an operator ``apply(u) = A u``.

    The error recorded per iteration is ``||oracle - v_j|| / ||v||`` when an
    oracle is supplied, else ``||A v_j - v|| / ||v||``. Iteration stops early
    only on a non-finite iterate; the last finite iterate is returned.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    vnorm = float(np.linalg.norm(v))
    vnorm = vnorm if vnorm > 0 else 1.0
    cur = v.copy()
    errors: list[float] = []
    diverged = False
    for _ in range(max_iters):
        nxt = v + cur - apply(cur)
        if not np.all(np.isfinite(nxt)):
            diverged = True
            break
        cur = nxt
        if oracle is not None:
            err = float(np.linalg.norm(oracle - cur)) / vnorm
        else:
            err = float(np.linalg.norm(apply(cur) - v)) / vnorm
        if not np.isfinite(err):
            diverged = True
            break
        errors.append(err)
    if errors and not diverged:
        diverged = errors[-1] > DIVERGENCE_GROWTH * max(errors[0], np.finfo(float).tiny) \
            or float(np.linalg.norm(cur)) > DIVERGENCE_GROWTH * vnorm
    converged = bool(errors) and not diverged and errors[-1] <= CONVERGED_RESIDUAL
    metric = "normalized_error_vs_oracle" if oracle is not None else "normalized_residual"
    return cur, ConvergenceTrace(method, errors, metric, converged, len(errors), diverged)


# an exact oracle is computed for LiSSA traces up to this size
LISSA_ORACLE_MAX_DIM = 4096


def lissa_hvp(a, v, max_iters: int = 10, oracle=None):
    """LiSSA estimate of A^{-1} v; no damping or scaling is applied to ``a``."""
    a = as_matrix(a)
    n = a.shape[0]
    if a.shape[1] != n:
        raise ShapeError(f"LiSSA needs a square matrix, got {a.shape}")
    v = np.asarray(v, dtype=a.dtype).reshape(-1)
    if v.shape[0] != n:
        raise ShapeError(f"vector length {v.shape[0]} does not match matrix size {n}")
    if oracle is None and n <= LISSA_ORACLE_MAX_DIM:
        try:
            oracle = lu_solve(lu_factor(a), v)
        except np.linalg.LinAlgError:
            oracle = None
    elif oracle is not None:
        oracle = np.asarray(oracle, dtype=a.dtype).reshape(-1)
    return lissa_iterate(lambda u: a @ u, v, max_iters, oracle)
