"""Small dense and sparse linear-algebra kernels.

``lu_solve`` and ``box_qp`` are self-contained. ``ldl_solve`` factorises
through SuperLU (scipy) and ``cg_solve`` is a Jacobi-preconditioned conjugate
gradient written here, so the two sparse routes stay independent.
"""

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ConvergenceError, InvalidArgument, SingularSystemError


def lu_factor(A):
    """Doolittle LU with partial pivoting; returns ``(LU, piv)``."""
    A = np.array(A, dtype=float)
    n, m = A.shape
    if n != m:
        raise InvalidArgument("matrix must be square")
    scale = np.abs(A).max() if A.size else 0.0
    piv = np.arange(n)
    for j in range(n):
        p = j + int(np.argmax(np.abs(A[j:, j])))
        if abs(A[p, j]) <= 1e-14 * scale or scale == 0.0:
            raise SingularSystemError(f"pivot {j} below threshold")
        if p != j:
            A[[j, p]] = A[[p, j]]
            piv[[j, p]] = piv[[p, j]]
        A[j + 1:, j] /= A[j, j]
        A[j + 1:, j + 1:] -= np.outer(A[j + 1:, j], A[j, j + 1:])
    return A, piv


def lu_solve(A, b):
    """Solve ``A x = b`` for square ``A`` by LU with partial pivoting."""
    LU, piv = lu_factor(A)
    b = np.asarray(b, dtype=float)
    x = b[piv].copy()
    n = len(x)
    for i in range(n):
        x[i] -= LU[i, :i] @ x[:i]
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - LU[i, i + 1:] @ x[i + 1:]) / LU[i, i]
    return x


def sym_csr(A):
    """Coerce to CSR and check structural symmetry."""
    A = sp.csr_matrix(A, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise InvalidArgument("matrix must be square")
    if (A != A.T).nnz and abs(A - A.T).max() > 1e-10 * max(abs(A).max(), 1.0):
        raise InvalidArgument("matrix is not symmetric")
    if not np.all(np.isfinite(A.data)):
        raise InvalidArgument("matrix has non-finite entries")
    return A


class SparseFactor:
    """Reusable direct factorisation of a sparse symmetric matrix.

    Elimination first follows a minimum-degree ordering of ``A + A^T`` with
    diagonal pivots only, which is stable and cheap for positive definite
    input. If that hits a zero or tiny pivot (indefinite input) the matrix
    is refactored with threshold partial pivoting.
    """

    def __init__(self, A):
        A = sym_csr(A)
        self.A = A
        csc = A.tocsc()
        try:
            self._lu = splu(csc, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                            options=dict(SymmetricMode=True))
            if not self._stable():
                raise RuntimeError("unstable diagonal pivots")
        except RuntimeError:
            try:
                self._lu = splu(csc, permc_spec="COLAMD")
            except RuntimeError as exc:
                raise SingularSystemError(str(exc)) from None

    def _stable(self):
        d = np.abs(self._lu.U.diagonal())
        return bool(np.all(np.isfinite(d)) and d.min(initial=1.0) > 1e-14 * max(d.max(initial=0.0), 1e-300))

    def solve(self, b):
        x = self._lu.solve(np.asarray(b, dtype=float))
        if not np.all(np.isfinite(x)):
            raise SingularSystemError("factorisation produced non-finite values")
        return x


def ldl_solve(A, b):
    """Direct solve of a sparse symmetric system."""
    return SparseFactor(A).solve(b)


def cg_solve(A, b, tol=1e-10, maxit=None, x0=None, precondition=True):
    """Jacobi-preconditioned conjugate gradients for SPD ``A``.

    Stops when ``||b - A x|| <= tol * ||b||``. Returns ``(x, iterations)``.
    """
    A = sp.csr_matrix(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = len(b)
    if maxit is None:
        maxit = 10 * max(n, 1)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0
    dinv = 1.0 / A.diagonal() if precondition else np.ones(n)
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxit + 1):
        if np.linalg.norm(r) <= tol * bnorm:
            return x, it - 1
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise ConvergenceError("matrix is not positive definite")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if np.linalg.norm(r) <= tol * bnorm:
        return x, maxit
    raise ConvergenceError(f"CG did not converge in {maxit} iterations")


def box_qp(M, q, lower, upper, tol=1e-12, maxit=None):
    """Minimise ``0.5 c^T M c - c^T q`` subject to ``lower <= c <= upper``.

    Primal active-set method started from the clamped unconstrained
    minimiser. ``M`` must be symmetric positive definite.
    """
    M = np.asarray(M, dtype=float)
    q = np.asarray(q, dtype=float)
    n = len(q)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (n,))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (n,))
    if np.any(lower >= upper):
        raise InvalidArgument("lower bounds must be below upper bounds")
    if maxit is None:
        maxit = 10 * n + 20
    scale = max(np.abs(M).max(), np.abs(q).max(), 1.0)

    c = np.clip(np.linalg.solve(M, q), lower, upper)
    # working set: -1 fixed at lower, +1 fixed at upper, 0 free
    work = np.zeros(n, dtype=int)
    work[c <= lower] = -1
    work[c >= upper] = 1
    c[work == -1] = lower[work == -1]
    c[work == 1] = upper[work == 1]

    for _ in range(maxit):
        free = work == 0
        # equality-constrained minimiser on the free set
        target = c.copy()
        if free.any():
            fixed = ~free
            rhs = q[free] - M[np.ix_(free, fixed)] @ c[fixed]
            target[free] = np.linalg.solve(M[np.ix_(free, free)], rhs)
        step = target - c
        if np.abs(step).max() <= tol * max(1.0, np.abs(c).max()):
            grad = M @ c - q
            # multipliers: at lower need grad >= 0, at upper need grad <= 0
            viol = np.where(work == -1, -grad, np.where(work == 1, grad, -np.inf))
            worst = int(np.argmax(viol))
            if viol[worst] <= tol * scale:
                return c
            work[worst] = 0
            continue
        # longest feasible step along the direction
        alpha, block = 1.0, -1
        for i in np.flatnonzero(free):
            if step[i] < 0:
                a = (lower[i] - c[i]) / step[i]
            elif step[i] > 0:
                a = (upper[i] - c[i]) / step[i]
            else:
                continue
            if a < alpha:
                alpha, block = a, i
        c = c + alpha * step
        if block >= 0:
            if step[block] < 0:
                work[block], c[block] = -1, lower[block]
            else:
                work[block], c[block] = 1, upper[block]
    raise ConvergenceError("box_qp active-set iteration limit reached")


def kkt_residual(M, q, lower, upper, c):
    """Max violation of the box-QP optimality conditions at ``c``."""
    M = np.asarray(M, dtype=float)
    grad = M @ c - np.asarray(q, dtype=float)
    lower = np.broadcast_to(lower, c.shape)
    upper = np.broadcast_to(upper, c.shape)
    span = upper - lower
    at_lo = np.abs(c - lower) <= 1e-12 * np.maximum(span, 1.0)
    at_hi = np.abs(c - upper) <= 1e-12 * np.maximum(span, 1.0)
    res = np.where(at_lo, np.maximum(-grad, 0.0), np.where(at_hi, np.maximum(grad, 0.0), np.abs(grad)))
    feas = np.maximum(np.maximum(lower - c, c - upper), 0.0)
    return float(max(res.max(initial=0.0), feas.max(initial=0.0)))
