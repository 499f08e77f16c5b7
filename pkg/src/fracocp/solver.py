"""Linear solves with the dense stiffness matrix."""
from dataclasses import dataclass
import logging

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, cg

log = logging.getLogger(__name__)

DIRECT_MAX = 2000


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class StateField:
    """Coefficients over interior vertices; zero on the boundary and outside."""

    coeffs: np.ndarray
    mesh_id: int = None

    def __len__(self):
        return len(self.coeffs)

    def full(self, mesh):
        """Values at all mesh vertices."""
        out = np.zeros(mesh.n_vertices)
        out[mesh.interior] = self.coeffs
        return out


def _matrix(A):
    return A.entries if hasattr(A, "entries") else np.asarray(A)


def solve(A, rhs, tol=1e-10, maxiter=None, method="auto", mesh_id=None):
    """Solve ``A x = rhs`` for SPD ``A``.

    Systems with at most ``DIRECT_MAX`` unknowns use a dense Cholesky
    factorization, larger ones Jacobi-preconditioned CG with
    ``||A x - rhs|| <= tol ||rhs||``.
    """
    M = _matrix(A)
    b = np.asarray(rhs, dtype=float)
    n = M.shape[0]
    if M.ndim != 2 or M.shape[1] != n:
        raise ValueError("matrix must be square")
    if b.shape != (n,):
        raise ValueError(f"rhs has shape {b.shape}, expected ({n},)")
    if not np.any(b):
        return StateField(np.zeros(n), mesh_id)
    if method == "auto":
        method = "direct" if n <= DIRECT_MAX else "cg"
    if method == "direct":
        try:
            c = linalg.cho_factor(M, lower=False, check_finite=False)
        except linalg.LinAlgError as exc:
            raise SolverError("matrix is not positive definite") from exc
        x = linalg.cho_solve(c, b, check_finite=False)
    elif method == "cg":
        d = np.diag(M).copy()
        if np.any(d <= 0):
            raise SolverError("non-positive diagonal: matrix is not SPD")
        prec = LinearOperator((n, n), matvec=lambda r: r / d, dtype=float)
        maxiter = maxiter or 10 * n
        x, info = cg(M, b, rtol=tol, atol=0.0, M=prec, maxiter=maxiter)
        if info != 0:
            res = np.linalg.norm(M @ x - b) / np.linalg.norm(b)
            raise SolverError(f"CG did not converge in {maxiter} iterations (relative residual {res:.3e})")
    else:
        raise ValueError(f"unknown method {method!r}")
    return StateField(x, mesh_id)


class CholeskySolver:
    """Factor once, solve many times (used inside the optimization loops)."""

    def __init__(self, A):
        M = _matrix(A)
        try:
            self._c = linalg.cho_factor(M, lower=False, check_finite=False)
        except linalg.LinAlgError as exc:
            raise SolverError("matrix is not positive definite") from exc
        self.n = M.shape[0]

    def __call__(self, rhs):
        b = np.asarray(rhs, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError("dimension mismatch")
        return linalg.cho_solve(self._c, b, check_finite=False)
