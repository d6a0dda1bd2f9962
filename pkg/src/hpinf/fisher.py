"""Curvature proxies built from per-example gradient blocks.

A gradient block is a d x r array (long dimension first). A set of n of them
for one parameter block is stacked as an (n, d, r) array. ``vec`` is
column-stacking throughout, so ``(I_r kron A) vec(V) = vec(A V)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .hyperpower import IterationConfig, schulz_inverse, CONVERGED_RESIDUAL
from .linalg import ShapeError, as_spd, frobenius_norm, gaussian_inverse

DAMPING_FLOOR = 1e-12

GradStack = Union[np.ndarray, Sequence[np.ndarray]]


class ConvergenceWarning(UserWarning):
    pass


def stack_grads(grads: GradStack) -> np.ndarray:
    """Coerce a list of d x r blocks (or an (n, d, r) array) to a validated float64 stack."""
    if isinstance(grads, np.ndarray) and grads.ndim == 3:
        stack = grads.astype(np.float64, copy=False)
    else:
        blocks = [np.asarray(g, dtype=np.float64) for g in grads]
        if not blocks:
            raise ShapeError("need at least one gradient")
        shape = blocks[0].shape
        for i, g in enumerate(blocks):
            if g.ndim != 2 or g.shape != shape:
                raise ShapeError(f"gradient {i} has shape {g.shape}, expected {shape}")
        stack = np.stack(blocks)
    if stack.shape[0] < 1 or stack.shape[1] < 1 or stack.shape[2] < 1:
        raise ShapeError(f"empty gradient stack {stack.shape}")
    bad = np.argwhere(~np.isfinite(stack))
    if bad.size:
        raise ValueError(f"non-finite gradient entry in example {bad[0][0]}")
    return stack


def vec(g: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization; works on a single block or a stack."""
    if g.ndim == 2:
        return g.T.reshape(-1)
    return np.swapaxes(g, 1, 2).reshape(g.shape[0], -1)


def unvec(x: np.ndarray, d: int, r: int) -> np.ndarray:
    return x.reshape(r, d).T


@dataclass
class CurvatureMatrix:
    kind: str  # "FIM" or "GFIM"
    matrix: np.ndarray
    damping: float
    block_name: str = ""
    sample_count: int = 0

    def damped(self) -> np.ndarray:
        out = self.matrix.copy()
        out.flat[:: out.shape[0] + 1] += self.damping
        return out

    @property
    def nbytes(self) -> int:
        return self.matrix.nbytes


def build_fim(grads: GradStack, damping: float = 0.0, block_name: str = "") -> CurvatureMatrix:
    """(1/n) sum_i vec(g_i) vec(g_i)^T, an (rd) x (rd) matrix."""
    g = stack_grads(grads)
    flat = vec(g)
    fim = as_spd(flat.T @ flat / g.shape[0])
    return CurvatureMatrix("FIM", fim, damping, block_name, g.shape[0])


def build_gfim(grads: GradStack, damping: float = 0.0, block_name: str = "") -> CurvatureMatrix:
    """(1/n) sum_i g_i g_i^T, a d x d matrix.

    The full-size curvature it stands for is ``I_r kron (G / r)``; that is never formed.
    """
    g = stack_grads(grads)
    gfim = np.tensordot(g, g, axes=([0, 2], [0, 2])) / g.shape[0]
    return CurvatureMatrix("GFIM", as_spd(gfim), damping, block_name, g.shape[0])


def damping_factor(grads: GradStack, coefficient: float = 0.1) -> float:
    """coefficient * (n d)^{-1} * sum_i ||g_i||_F^2 ; callers floor a zero result."""
    g = stack_grads(grads)
    n, d = g.shape[0], g.shape[1]
    return float(coefficient * np.sum(g * g) / (n * d))


def gfim_inverse_hvp(curv: CurvatureMatrix, v: np.ndarray, inverter: str = "schulz",
                     cfg: IterationConfig = IterationConfig()) -> np.ndarray:
    """(G + lambda I_d)^{-1} v for a d x r block ``v``.

    Under the Kronecker form this equals the full inverse-curvature product up
    to the dropped 1/r constant. With the Schulz inverter, a final residual
    above 1e-3 emits a :class:`ConvergenceWarning`; the result is returned anyway.
    """
    if curv.kind != "GFIM":
        raise ValueError(f"expected a GFIM curvature, got {curv.kind}")
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    d = curv.matrix.shape[0]
    if v.shape[0] != d:
        raise ShapeError(f"block has {v.shape[0]} rows, curvature has {d}")
    inv = invert_damped(curv, inverter, cfg)
    return inv @ v


def invert_damped(curv: CurvatureMatrix, inverter: str = "schulz",
                  cfg: IterationConfig = IterationConfig()) -> np.ndarray:
    a = curv.damped()
    if inverter == "exact":
        return gaussian_inverse(a)
    if inverter != "schulz":
        raise ValueError(f"unknown inverter {inverter!r}")
    x, trace = schulz_inverse(a, cfg)
    if not trace.converged:
        residual = frobenius_norm(np.eye(a.shape[0]) - a @ x)
        warnings.warn(f"Schulz iteration did not converge on block {curv.block_name!r}: "
                      f"residual {residual:.3e} > {CONVERGED_RESIDUAL}",
                      ConvergenceWarning, stacklevel=3)
    return x


def kron_identity(r: int, a: np.ndarray) -> np.ndarray:
    return np.kron(np.eye(r), a)


def lemma1_gap(d: int, r: int, samples: int, rng_seed: int = 0) -> float:
    """Monte-Carlo gap between E[vec(g) vec(g)^T] and I_r kron E[g g^T / r].

    Columns of each sampled g are i.i.d. standard normal, which is exactly
    the hypothesis under which the two sides agree in expectation.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(rng_seed)
    fim = np.zeros((r * d, r * d))
    gfim = np.zeros((d, d))
    chunk = 50_000
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        g = rng.standard_normal((m, d, r))
        flat = vec(g)
        fim += flat.T @ flat
        gfim += np.tensordot(g, g, axes=([0, 2], [0, 2]))
        done += m
    fim /= samples
    lifted = kron_identity(r, gfim / (samples * r))
    return frobenius_norm(fim - lifted) / frobenius_norm(lifted)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logistic_hessian(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Mean NLL Hessian of multiclass logistic regression at ``w`` (d x C), vec-ordered.

    With column stacking the per-input term is (diag(p) - p p^T) kron x x^T.
    """
    p = softmax(x @ w)
    d, c = w.shape
    h = np.zeros((c * d, c * d))
    for xi, pi in zip(x, p):
        h += np.kron(np.diag(pi) - np.outer(pi, pi), np.outer(xi, xi))
    return h / x.shape[0]


def bartlett_gap(d: int = 5, classes: int = 3, label_samples: int = 100_000, n_inputs: int = 10,
                 rng_seed: int = 0) -> float:
    """Relative Frobenius gap between the sampled-label Fisher and the analytic Hessian.

    Labels are drawn from the model's own predictive distribution, split
    evenly across ``n_inputs`` fixed inputs.
    """
    rng = np.random.default_rng(rng_seed)
    w = rng.standard_normal((d, classes))
    x = rng.standard_normal((n_inputs, d))
    p = softmax(x @ w)
    per_input = label_samples // n_inputs
    fim = np.zeros((classes * d, classes * d))
    eye = np.eye(classes)
    for xi, pi in zip(x, p):
        labels = rng.choice(classes, size=per_input, p=pi)
        resid = pi[None, :] - eye[labels]            # (s, C)
        grads = xi[None, :, None] * resid[:, None, :]  # (s, d, C)
        flat = vec(grads)
        fim += flat.T @ flat / per_input
    fim /= n_inputs
    hess = logistic_hessian(w, x)
    return frobenius_norm(fim - hess) / frobenius_norm(hess)
