"""Symmetric positive-definite solves shared by the full-order and reduced solvers."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError

RESIDUAL_CHECK = 1e-10  # accepted relative residual for every linear solve


def pcg(A, b: np.ndarray, rtol: float = 1e-12, maxiter: int | None = None,
        precond: np.ndarray | None = None) -> tuple[np.ndarray, int]:
    """Jacobi-preconditioned conjugate gradients.

    Returns ``(x, iterations)``.  Raises :class:`SolverError` on breakdown
    (non-positive curvature) or when ``maxiter`` is exhausted.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if maxiter is None:
        maxiter = max(10 * int(np.ceil(np.sqrt(n))), 100)
    if precond is None:
        d = A.diagonal() if sp.issparse(A) else np.diag(A)
        if np.any(d <= 0):
            raise SolverError("operator has a non-positive diagonal entry; not SPD")
        precond = 1.0 / d
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, 0
    r = b.copy()
    z = precond * r
    p = z.copy()
    rz = r @ z
    res = 1.0
    for it in range(1, maxiter + 1):
        Ap = A @ p
        curv = p @ Ap
        if curv <= 0:
            raise SolverError("CG breakdown: non-positive curvature, operator not SPD",
                              iterations=it, residual=np.linalg.norm(r) / bnorm)
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / bnorm
        if res <= rtol:
            return x, it
        z = precond * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError("CG did not converge", iterations=maxiter, residual=res)


def solve_spd(A, b: np.ndarray, *, method: str = "auto", dense_limit: int = 2000,
              rtol: float = 1e-12, check: float = RESIDUAL_CHECK, maxiter: int | None = None) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive-definite ``A``.

    ``method`` is ``"cholesky"``, ``"cg"``, ``"direct"`` (sparse LU) or
    ``"auto"`` (Cholesky up to ``dense_limit`` unknowns, Jacobi-CG above).
    The relative residual is verified against ``check``.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if n == 0:
        return np.zeros(0)
    if method == "auto":
        method = "cholesky" if n <= dense_limit else "cg"
    if method == "cholesky":
        dense = A.toarray() if sp.issparse(A) else np.asarray(A)
        try:
            factor = sla.cho_factor(dense, lower=True, check_finite=True)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"Cholesky factorization failed, operator not SPD: {exc}") from None
        x = sla.cho_solve(factor, b)
    elif method == "direct":
        x = spla.spsolve(sp.csc_matrix(A), b)
    elif method == "cg":
        x, _ = pcg(A, b, rtol=rtol, maxiter=maxiter)
    else:
        raise ValueError(f"unknown solver method {method!r}")
    bnorm = np.linalg.norm(b)
    res = np.linalg.norm(A @ x - b)
    if bnorm > 0 and res > check * bnorm:
        raise SolverError(f"{method} solve missed the residual contract", residual=res / bnorm)
    if not np.all(np.isfinite(x)):
        raise SolverError(f"{method} solve produced non-finite values")
    return x
