"""Small r x r linear algebra: Lyapunov solves, the coupled skew system, polar factor."""
from __future__ import annotations

import warnings

import numpy as np

from .errors import ConvergenceError, DegenerateCoreError, DimensionError, RankDeficientError
from .tensor_core import unfold

SPD_RTOL = 1e-12
COUPLED_TOL = 1e-10
COUPLED_MAX_ITER = 100


def _square(D):
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {D.shape}")
    return D


def skew_part(D):
    D = _square(D)
    return 0.5 * (D - D.T)


def sym_part(D):
    D = _square(D)
    return 0.5 * (D + D.T)


class SymEig:
    """Eigendecomposition of an SPD matrix, reused across Lyapunov solves.

    Raises :class:`DegenerateCoreError` when the smallest eigenvalue falls
    below ``SPD_RTOL`` times the largest, unless ``ridge`` is set, in which
    case ``ridge * trace / r`` is added to the diagonal first.
    """

    def __init__(self, A, ridge=None):
        A = sym_part(A)
        r = A.shape[0]
        if ridge:
            A = A + (ridge * np.trace(A) / r) * np.eye(r)
        w, Q = np.linalg.eigh(A)
        if r and not (w[0] > SPD_RTOL * max(w[-1], 0.0) and w[-1] > 0):
            raise DegenerateCoreError(
                f"matrix is not positive definite: eigenvalues in [{w[0]:.3e}, {w[-1]:.3e}]"
            )
        self.A = A
        self.w = w
        self.Q = Q
        self._denom = w[:, None] + w[None, :]

    def lyap(self, C):
        """Solve ``S A + A S = C``."""
        Q = self.Q
        return Q @ ((Q.T @ C @ Q) / self._denom) @ Q.T

    def inv_right(self, M):
        """``M A^{-1}``."""
        return ((M @ self.Q) / self.w) @ self.Q.T


def lyap_sym(A, C, ridge=None):
    """Solve ``S A + A S = C`` for SPD ``A``.

    Diagonalizing ``A = Q diag(w) Q^T`` turns the equation into the
    elementwise ``S'_ij (w_i + w_j) = C'_ij``.  A symmetric ``C`` gives a
    symmetric ``S``.
    """
    A = _square(A)
    C = np.asarray(C, dtype=np.float64)
    if C.shape != A.shape:
        raise DimensionError(f"right-hand side {C.shape} does not match {A.shape}")
    return SymEig(A, ridge=ridge).lyap(C)


def polar_factor(A, rtol=1e-12):
    """Orthonormal factor ``A (A^T A)^{-1/2}`` of a full-column-rank matrix.

    Uses the eigendecomposition of the small Gram matrix, followed by one
    Newton-Schulz step ``Q (3I - Q^T Q) / 2`` that removes the orthogonality
    loss of order ``eps * cond(A)^2``.  If the columns are still not
    orthonormal, falls back to a sign-fixed QR (a different representative
    of the same column space) with a warning.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[1] > A.shape[0]:
        raise DimensionError(f"expected a tall matrix, got shape {A.shape}")
    r = A.shape[1]
    if r == 0:
        return A.copy()
    w, V = np.linalg.eigh(A.T @ A)
    if not (w[0] > rtol * w[-1] and w[-1] > 0):
        raise RankDeficientError(
            f"matrix is rank deficient: Gram eigenvalues in [{w[0]:.3e}, {w[-1]:.3e}]"
        )
    Q = A @ ((V / np.sqrt(w)) @ V.T)
    E = Q.T @ Q - np.eye(r)
    if np.max(np.abs(E)) > 1e-15:
        Q = Q - 0.5 * (Q @ E)
    if np.max(np.abs(Q.T @ Q - np.eye(r))) > 1e-10:
        warnings.warn("polar factor lost orthogonality; falling back to QR", RuntimeWarning)
        Q, R = np.linalg.qr(A)
        Q = Q * np.sign(np.diag(R))
    return Q


# --------------------------------------------------------------------------
# coupled Lyapunov system on skew triples


def core_grams(G):
    """``(G_1 G_1^T, G_2 G_2^T, G_3 G_3^T)``."""
    out = []
    for d in (1, 2, 3):
        Gd = unfold(G, d)
        out.append(Gd @ Gd.T)
    return tuple(out)


class CoupledLyapunov:
    """The linear map on skew triples whose solution gives the horizontal projection.

    Component ``d`` of ``apply(W)`` is::

        A_d W_d + W_d A_d + sum_{e != d} Skew((G x_e W_e)_(d) G_d^T)

    with ``A_d = G_d G_d^T``.  This is the Gram operator of the vertical map
    ``W -> (U_d W_d, -sum_d G x_d W_d)`` under the preconditioned metric, so
    it is symmetric positive definite on skew triples.
    """

    def __init__(self, G, grams=None, eigs=None, ridge=None):
        self.G = np.asarray(G, dtype=np.float64)
        self.ranks = self.G.shape
        self.grams = grams if grams is not None else core_grams(self.G)
        self.eigs = eigs if eigs is not None else [SymEig(A, ridge=ridge) for A in self.grams]

    def _cross(self, d, e, W):
        # Skew-part contribution of block e to equation d.
        G = self.G
        H = np.tensordot(W, G, axes=([1], [e - 1]))
        H = np.moveaxis(H, 0, e - 1)
        return skew_part(unfold(H, d) @ unfold(G, d).T)

    def apply(self, W):
        out = []
        for d in (1, 2, 3):
            A = self.grams[d - 1]
            Wd = W[d - 1]
            acc = A @ Wd + Wd @ A
            for e in (1, 2, 3):
                if e != d:
                    acc = acc + self._cross(d, e, W[e - 1])
            out.append(acc)
        return tuple(out)

    def precondition(self, R):
        """Symmetric block Gauss-Seidel sweep: modes 1, 2, 3 then 3, 2, 1."""
        W = [np.zeros_like(R[0]), np.zeros_like(R[1]), np.zeros_like(R[2])]
        for d in (1, 2, 3, 2, 1):
            rhs = R[d - 1]
            for e in (1, 2, 3):
                if e != d:
                    rhs = rhs - self._cross(d, e, W[e - 1])
            W[d - 1] = skew_part(self.eigs[d - 1].lyap(rhs))
        return tuple(W)


def _inner(P, Q):
    return sum(float(np.vdot(p, q)) for p, q in zip(P, Q))


def _axpy(a, P, Q):
    return tuple(a * p + q for p, q in zip(P, Q))


def coupled_lyap_solve(G, rhs, tol=COUPLED_TOL, max_iter=COUPLED_MAX_ITER,
                       grams=None, eigs=None, ridge=None, return_info=False):
    """Solve the coupled skew Lyapunov system by preconditioned CG.

    ``rhs`` is a triple of skew matrices.  Converged when the residual norm
    drops below ``tol`` times the right-hand-side norm.  Raises
    :class:`ConvergenceError` carrying the achieved relative residual if
    ``max_iter`` is hit first.
    """
    op = CoupledLyapunov(G, grams=grams, eigs=eigs, ridge=ridge)
    R = tuple(skew_part(Rd) for Rd in rhs)
    for Rd, r in zip(R, op.ranks):
        if Rd.shape != (r, r):
            raise DimensionError(f"right-hand side block {Rd.shape} does not match rank {r}")
    R0 = R
    bnorm = np.sqrt(_inner(R, R))
    W = tuple(np.zeros_like(Rd) for Rd in R)
    info = {"iterations": 0, "residual": 0.0}
    if bnorm == 0.0:
        return (W, info) if return_info else W

    Z = op.precondition(R)
    P = Z
    rz = _inner(R, Z)
    rel = 1.0
    for it in range(1, max_iter + 1):
        LP = op.apply(P)
        alpha = rz / _inner(P, LP)
        W = _axpy(alpha, P, W)
        R = _axpy(-alpha, LP, R)
        if __debug__:
            assert all(np.allclose(Wd, -Wd.T, rtol=0, atol=1e-12 * (1 + np.abs(Wd).max()))
                       for Wd in W), "CG iterate left the skew subspace"
        rel = np.sqrt(_inner(R, R)) / bnorm
        if rel <= tol:
            W = tuple(skew_part(Wd) for Wd in W)
            true = _axpy(-1.0, op.apply(W), R0)
            info = {"iterations": it, "residual": float(np.sqrt(_inner(true, true)) / bnorm)}
            return (W, info) if return_info else W
        Z = op.precondition(R)
        rz_new = _inner(R, Z)
        P = _axpy(rz_new / rz, P, Z)
        rz = rz_new
    raise ConvergenceError(
        f"coupled Lyapunov CG stopped after {max_iter} iterations at relative residual {rel:.3e}",
        residual=rel,
        iterations=max_iter,
    )
