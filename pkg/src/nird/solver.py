"""Sparse symmetric positive-definite solves."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DIRECT_LIMIT = 200_000
# normwise backward error accepted from the direct path when ||b|| is itself
# at round-off level and the relative residual cannot reach ``tol``
BACKWARD_TOL = 1e-13


class SolverError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


def check_symmetric(A, rtol=1e-12):
    A = sp.csr_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix is not square")
    diff = abs(A - A.T)
    scale = abs(A).max() if A.nnz else 0.0
    if diff.nnz and diff.max() > rtol * max(scale, 1e-300):
        raise ValueError("matrix is not symmetric")
    return A


def pcg(A, b, tol=1e-10, maxiter=None, x0=None):
    """Conjugate gradients with a diagonal (Jacobi) preconditioner.

    Returns ``(x, iterations, relative_residual)``.
    """
    n = len(b)
    maxiter = maxiter or 10 * n
    d = A.diagonal()
    if np.any(d <= 0):
        raise ValueError("matrix has a non-positive diagonal entry")
    dinv = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    it = 0
    while res > tol and it < maxiter:
        Ap = A @ p
        step = rz / (p @ Ap)
        x += step * p
        r -= step * Ap
        res = np.linalg.norm(r) / bnorm
        it += 1
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, it, res


def solve_spd(A, b, tol=1e-10, maxiter=None, x0=None, method="auto"):
    """Solve ``A x = b`` for symmetric positive-definite sparse ``A``.

    ``method`` is ``"direct"`` (sparse LU), ``"cg"`` (Jacobi-PCG, warm
    started from ``x0``) or ``"auto"``, which factorises up to
    ``DIRECT_LIMIT`` unknowns. The relative residual is always checked.
    """
    A = check_symmetric(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != len(b):
        raise ValueError("dimension mismatch")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(len(b))
    if method == "auto":
        method = "direct" if len(b) <= DIRECT_LIMIT else "cg"
    if method == "direct":
        lu = spla.splu(sp.csc_matrix(A))
        x = lu.solve(b)
        res = np.linalg.norm(b - A @ x) / bnorm
        if res > tol:
            # one step of iterative refinement recovers digits lost to pivoting
            x = x + lu.solve(b - A @ x)
            res = np.linalg.norm(b - A @ x) / bnorm
        if res > tol:
            anorm = spla.norm(A, np.inf)
            backward = np.linalg.norm(b - A @ x, np.inf) / (anorm * np.linalg.norm(x, np.inf) + np.linalg.norm(b, np.inf))
            if backward <= BACKWARD_TOL:
                return x
    elif method == "cg":
        x, _, res = pcg(A, b, tol=tol, maxiter=maxiter, x0=x0)
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.isfinite(res) or res > tol:
        raise SolverError(f"solver did not reach tol={tol:g} (residual {res:.3e})", res)
    return x
