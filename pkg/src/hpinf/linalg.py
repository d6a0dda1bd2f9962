"""Dense matrix arithmetic and the classical inverse/solve baselines.

Matrices are plain ``numpy.ndarray`` objects. Everything runs in the input's
floating dtype (float64 unless the caller hands in float32 on purpose, as the
inverse benchmark does).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    pass


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, pivot_index: int, pivot_value: float):
        super().__init__(f"matrix is singular to working precision at pivot {pivot_index} "
                         f"(|pivot| = {pivot_value:.3e})")
        self.pivot_index = pivot_index


class NumericalBreakdown(ArithmeticError):
    pass


def as_matrix(a, dtype=None) -> np.ndarray:
    """Validate ``a`` as a finite 2-D float array.

    float32/float64 inputs keep their dtype; anything else becomes float64.
    """
    arr = np.asarray(a)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix contains NaN or Inf entries")
    return arr


def as_spd(a) -> np.ndarray:
    """Square, symmetrized copy of ``a``: (A + A^T) / 2."""
    arr = as_matrix(a)
    if arr.shape[0] != arr.shape[1]:
        raise ShapeError(f"SPD matrix must be square, got {arr.shape}")
    return 0.5 * (arr + arr.T)


def _as_vector(b, n: int, dtype) -> np.ndarray:
    vec = np.asarray(b, dtype=dtype).reshape(-1)
    if vec.shape[0] != n:
        raise ShapeError(f"right-hand side has length {vec.shape[0]}, expected {n}")
    if not np.all(np.isfinite(vec)):
        raise ValueError("right-hand side contains NaN or Inf entries")
    return vec


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def frobenius_norm(a) -> float:
    arr = np.asarray(a)
    return float(np.sqrt(np.sum(np.square(arr, dtype=np.float64))))


def lu_factor(a) -> tuple[np.ndarray, np.ndarray]:
    """Right-looking Gaussian elimination with partial pivoting.

    Returns the packed factors (unit-lower L below the diagonal, U on and
    above it) and the row permutation ``perm`` such that ``A[perm] = L @ U``.
    """
    lu = as_matrix(a).copy()
    n, m = lu.shape
    if n != m:
        raise ShapeError(f"LU needs a square matrix, got {lu.shape}")
    perm = np.arange(n)
    tiny = np.finfo(lu.dtype).eps * max(np.abs(lu).max(), np.finfo(lu.dtype).tiny)
    for k in range(n):
        p = k + int(np.argmax(np.abs(lu[k:, k])))
        pivot = lu[p, k]
        if abs(pivot) <= tiny:
            raise SingularMatrixError(k, abs(pivot))
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        if k + 1 < n:
            lu[k + 1:, k] /= pivot
            lu[k + 1:, k + 1:] -= np.outer(lu[k + 1:, k], lu[k, k + 1:])
    return lu, perm


def lu_solve(factors: tuple[np.ndarray, np.ndarray], b) -> np.ndarray:
    """Solve with the output of :func:`lu_factor`; ``b`` may be a vector or a matrix."""
    lu, perm = factors
    n = lu.shape[0]
    rhs = np.asarray(b, dtype=lu.dtype)
    if rhs.shape[0] != n:
        raise ShapeError(f"right-hand side has {rhs.shape[0]} rows, expected {n}")
    y = rhs[perm].copy()
    # forward substitution, row by row
    for i in range(1, n):
        y[i] -= lu[i, :i] @ y[:i]
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            y[i] -= lu[i, i + 1:] @ y[i + 1:]
        y[i] /= lu[i, i]
    return y


def gaussian_inverse(a) -> np.ndarray:
    """A^{-1} by partial-pivot LU followed by substitution against the identity."""
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"cannot invert non-square matrix {a.shape}")
    factors = lu_factor(a)
    return lu_solve(factors, np.eye(a.shape[0], dtype=a.dtype))


@dataclass
class SolveInfo:
    residual: float
    iterations: int
    converged: bool
    history: list[float] = field(default_factory=list)


def cg_solve(a, b, max_iters: int = 1000, tol: float = 1e-10, x0=None) -> tuple[np.ndarray, SolveInfo]:
    """Conjugate gradient for SPD ``a``.

    Stops when ``||Ax - b|| / ||b|| <= tol`` or after ``max_iters`` iterations.
    ``info.history`` holds the relative residual after every iteration
    (entry 0 is the starting residual).
    """
    a = as_spd(a)
    n = a.shape[0]
    b = _as_vector(b, n, a.dtype)
    x0 = None if x0 is None else _as_vector(x0, n, a.dtype)
    return cg_core(a, b, max_iters, tol, x0)


def cg_core(a: np.ndarray, b: np.ndarray, max_iters: int, tol: float, x0=None):
    """Unvalidated CG kernel behind :func:`cg_solve`."""
    n = a.shape[0]
    bnorm = float(np.linalg.norm(b))
    x = np.zeros(n, dtype=a.dtype) if x0 is None else x0.copy()
    if bnorm == 0.0:
        return np.zeros(n, dtype=a.dtype), SolveInfo(0.0, 0, True, [0.0])
    floor = 100 * np.finfo(a.dtype).eps
    r = b - a @ x
    p = r.copy()
    rr = float(r @ r)
    history = [np.sqrt(rr) / bnorm]
    it = 0
    while it < max_iters and history[-1] > tol:
        ap = a @ p
        pap = float(p @ ap)
        if np.isfinite(pap) and pap <= 0.0 and history[-1] <= floor:
            break  # stagnated at the precision floor
        if not np.isfinite(pap) or pap <= 0.0:
            raise NumericalBreakdown(f"CG breakdown at iteration {it}: p^T A p = {pap}")
        alpha = rr / pap
        x += alpha * p
        r -= alpha * ap
        rr_new = float(r @ r)
        it += 1
        if not np.isfinite(rr_new):
            raise NumericalBreakdown(f"CG produced a non-finite residual at iteration {it}")
        history.append(np.sqrt(rr_new) / bnorm)
        if rr_new == 0.0:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, SolveInfo(history[-1], it, history[-1] <= tol, history)


def gmres_solve(a, b, restart: int = 30, max_iters: int = 1000, tol: float = 1e-10,
                x0=None) -> tuple[np.ndarray, SolveInfo]:
    """Restarted GMRES(m) with modified Gram-Schmidt Arnoldi and Givens rotations.

    ``max_iters`` counts inner (Arnoldi) steps across all cycles. A zero
    Arnoldi norm is treated as lucky convergence. If the budget runs out
    before ``tol`` the current best iterate is returned with
    ``converged=False``.
    """
    a = as_matrix(a)
    n = a.shape[0]
    if a.shape[1] != n:
        raise ShapeError(f"GMRES needs a square matrix, got {a.shape}")
    b = _as_vector(b, n, a.dtype)
    x0 = None if x0 is None else _as_vector(x0, n, a.dtype)
    return gmres_core(a, b, restart, max_iters, tol, x0)


def gmres_core(a: np.ndarray, b: np.ndarray, restart: int, max_iters: int, tol: float, x0=None):
    """Unvalidated GMRES kernel behind :func:`gmres_solve`."""
    n = a.shape[0]
    bnorm = float(np.linalg.norm(b))
    x = np.zeros(n, dtype=a.dtype) if x0 is None else x0.copy()
    if bnorm == 0.0:
        return np.zeros(n, dtype=a.dtype), SolveInfo(0.0, 0, True, [0.0])
    restart = max(1, min(restart, n))
    r = b - a @ x
    beta = float(np.linalg.norm(r))
    history = [beta / bnorm]
    total = 0
    while total < max_iters and history[-1] > tol:
        m = min(restart, max_iters - total)
        basis = np.zeros((m + 1, n), dtype=a.dtype)
        hess = np.zeros((m + 1, m), dtype=np.float64)
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        basis[0] = r / beta
        k_used = 0
        for k in range(m):
            w = a @ basis[k]
            for j in range(k + 1):
                hess[j, k] = float(basis[j] @ w)
                w = w - hess[j, k] * basis[j]
            hess[k + 1, k] = float(np.linalg.norm(w))
            lucky = hess[k + 1, k] <= np.finfo(a.dtype).eps * beta
            if not lucky:
                basis[k + 1] = w / hess[k + 1, k]
            for j in range(k):
                h0, h1 = hess[j, k], hess[j + 1, k]
                hess[j, k] = cs[j] * h0 + sn[j] * h1
                hess[j + 1, k] = -sn[j] * h0 + cs[j] * h1
            denom = np.hypot(hess[k, k], hess[k + 1, k])
            if denom == 0.0:
                raise NumericalBreakdown(f"GMRES breakdown at inner step {k}")
            cs[k] = hess[k, k] / denom
            sn[k] = hess[k + 1, k] / denom
            hess[k, k] = denom
            hess[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            k_used = k + 1
            total += 1
            history.append(abs(g[k + 1]) / bnorm)
            if lucky or history[-1] <= tol:
                break
        y = np.zeros(k_used)
        for i in range(k_used - 1, -1, -1):
            y[i] = (g[i] - hess[i, i + 1:k_used] @ y[i + 1:]) / hess[i, i]
        x = x + (y @ basis[:k_used]).astype(a.dtype)
        if not np.all(np.isfinite(x)):
            raise NumericalBreakdown("GMRES produced a non-finite iterate")
        r = b - a @ x
        beta = float(np.linalg.norm(r))
        # true residual replaces the recurrence estimate at cycle end
        history[-1] = beta / bnorm
        if beta == 0.0:
            break
    return x, SolveInfo(history[-1], total, history[-1] <= tol, history)
