"""Geometry of the Tucker quotient manifold under the preconditioned metric.

The total space is ``St(r1, n1) x St(r2, n2) x St(r3, n3) x R^{r1 x r2 x r3}``
modulo simultaneous rotations ``U_d -> U_d O_d``, ``G -> G x1 O1^T x2 O2^T x3 O3^T``.
The metric weights each factor block by the core Gram matrix
``A_d = G_d G_d^T`` and leaves the core block unweighted.

A plain Euclidean product geometry is kept alongside as the baseline for
metric comparisons.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .smallmat import (
    COUPLED_MAX_ITER,
    SymEig,
    core_grams,
    coupled_lyap_solve,
    polar_factor,
    skew_part,
    sym_part,
)
from .tensor_core import mode_product, unfold
from .tucker import GroupElement, TuckerPoint, TuckerTangent

# The coupled solve stops on a residual relative to its right-hand side,
# which can be much larger than the horizontal output when the input is
# nearly vertical; two extra digits keep the output horizontal to 1e-10.
HORIZONTAL_TOL = 1e-12

__all__ = [
    "TuckerPoint",
    "TuckerTangent",
    "GroupElement",
    "metric",
    "norm",
    "project_tangent",
    "project_horizontal",
    "vertical_vector",
    "retract",
    "transport",
    "group_act",
    "group_act_tangent",
    "euclid_metric",
    "euclid_project_tangent",
    "tangency_error",
    "horizontality_error",
    "rand_point",
    "rand_tangent",
    "rand_ambient",
    "PreconditionedGeometry",
    "EuclideanGeometry",
]


def _check_shapes(x, xi):
    for name, P, Z in zip(("U1", "U2", "U3", "G"), (x.U1, x.U2, x.U3, x.G), xi.blocks):
        if np.shape(Z) != P.shape:
            raise DimensionError(f"block {name} has shape {np.shape(Z)}, expected {P.shape}")


def metric(x, xi, eta, grams=None):
    """Preconditioned inner product ``sum_d <xi_Ud, eta_Ud A_d> + <xi_G, eta_G>``."""
    _check_shapes(x, xi)
    _check_shapes(x, eta)
    A = grams if grams is not None else core_grams(x.G)
    val = float(np.vdot(xi.G, eta.G))
    for d in range(3):
        val += float(np.vdot(xi.blocks[d], eta.blocks[d] @ A[d]))
    return val


def norm(x, xi, grams=None):
    return float(np.sqrt(max(metric(x, xi, xi, grams), 0.0)))


def euclid_metric(x, xi, eta):
    _check_shapes(x, xi)
    _check_shapes(x, eta)
    return float(sum(np.vdot(a, b) for a, b in zip(xi.blocks, eta.blocks)))


def project_tangent(x, Y, ridge=None):
    """Metric projection of an ambient vector onto the tangent space at ``x``.

    Each factor block loses a normal component ``U_d K_d`` where
    ``K + K^T = B := U^T Y + Y^T U`` and ``K A`` is symmetric.  Writing
    ``K = B/2 + W`` with ``W`` skew gives ``A W + W A = (A B - B A) / 2``;
    this form keeps tangency exact to rounding even for ill-conditioned
    ``A`` (it equals ``S A^{-1}`` with ``S A + A S = A B A``).
    """
    _check_shapes(x, Y)
    grams = core_grams(x.G)
    out = []
    for U, Yd, A in zip(x.factors, Y.blocks[:3], grams):
        eig = SymEig(A, ridge=ridge)
        B = sym_part(U.T @ Yd) * 2.0
        W = skew_part(eig.lyap(0.5 * (A @ B - B @ A)))
        out.append(Yd - U @ (0.5 * B + W))
    return TuckerTangent(*out, np.array(Y.G, dtype=np.float64, copy=True))


def vertical_vector(x, omegas):
    """Tangent to the orbit of ``x``: ``(U_d W_d, -(G x1 W1 + G x2 W2 + G x3 W3))``."""
    G = x.G
    core = -(mode_product(G, omegas[0], 1) + mode_product(G, omegas[1], 2)
             + mode_product(G, omegas[2], 3))
    return TuckerTangent(x.U1 @ omegas[0], x.U2 @ omegas[1], x.U3 @ omegas[2], core)


def project_horizontal(x, eta, tol=HORIZONTAL_TOL, max_iter=COUPLED_MAX_ITER,
                       ridge=None, return_omega=False):
    """Remove the vertical component of a tangent vector.

    The skew matrices parametrising the vertical part solve the coupled
    Lyapunov system with right-hand sides
    ``Skew(U_d^T eta_Ud A_d) + Skew(G_d eta_Gd^T)``.
    """
    _check_shapes(x, eta)
    G = x.G
    grams = core_grams(G)
    rhs = []
    for d in (1, 2, 3):
        U, Z, A = x.factors[d - 1], eta.blocks[d - 1], grams[d - 1]
        rhs.append(skew_part(U.T @ Z @ A) + skew_part(unfold(G, d) @ unfold(eta.G, d).T))
    omegas = coupled_lyap_solve(G, rhs, tol=tol, max_iter=max_iter, grams=grams, ridge=ridge)
    out = eta - vertical_vector(x, omegas)
    return (out, omegas) if return_omega else out


def retract(x, xi):
    """``(uf(U_d + xi_Ud), G + xi_G)`` with ``uf`` the polar orthonormal factor."""
    _check_shapes(x, xi)
    return TuckerPoint(
        polar_factor(x.U1 + xi.U1),
        polar_factor(x.U2 + xi.U2),
        polar_factor(x.U3 + xi.U3),
        x.G + xi.G,
    )


def transport(x, eta, xi, y=None):
    """Carry ``xi`` from ``x`` to ``y = retract(x, eta)`` by projection.

    Pass ``y`` when the retracted point is already known.
    """
    if y is None:
        y = retract(x, eta)
    return project_horizontal(y, project_tangent(y, xi))


def group_act(x, O):
    mats = O.mats if isinstance(O, GroupElement) else tuple(O)
    for Od in mats:
        if np.max(np.abs(Od.T @ Od - np.eye(Od.shape[0]))) > 1e-10:
            raise ValueError("group element is not orthogonal")
    G = x.G
    for d, Od in enumerate(mats, start=1):
        G = mode_product(G, Od.T, d)
    return TuckerPoint(x.U1 @ mats[0], x.U2 @ mats[1], x.U3 @ mats[2], G)


def group_act_tangent(xi, O):
    mats = O.mats if isinstance(O, GroupElement) else tuple(O)
    G = xi.G
    for d, Od in enumerate(mats, start=1):
        G = mode_product(G, Od.T, d)
    return TuckerTangent(xi.U1 @ mats[0], xi.U2 @ mats[1], xi.U3 @ mats[2], G)


def euclid_project_tangent(x, Y):
    """Product-geometry projection: ``Z - U sym(U^T Z)`` per factor, core untouched."""
    _check_shapes(x, Y)
    out = [Z - U @ sym_part(U.T @ Z) for U, Z in zip(x.factors, Y.blocks[:3])]
    return TuckerTangent(*out, np.array(Y.G, dtype=np.float64, copy=True))


# --------------------------------------------------------------------------
# invariant checks


def tangency_error(x, xi):
    """Largest ``||U_d^T Z_d + Z_d^T U_d||_max`` relative to ``max(1, ||Z||_max)``."""
    err = 0.0
    for U, Z in zip(x.factors, xi.blocks[:3]):
        M = U.T @ Z
        err = max(err, float(np.max(np.abs(M + M.T), initial=0.0))
                  / max(1.0, float(np.max(np.abs(Z), initial=0.0))))
    return err


def horizontality_error(x, xi):
    """Largest skew part of ``A_d zeta_Ud^T U_d + zeta_Gd G_d^T``, relative."""
    grams = core_grams(x.G)
    err = 0.0
    for d in (1, 2, 3):
        U, Z, A = x.factors[d - 1], xi.blocks[d - 1], grams[d - 1]
        M = A @ Z.T @ U + unfold(xi.G, d) @ unfold(x.G, d).T
        scale = max(1.0, float(np.linalg.norm(A @ Z.T @ U)),
                    float(np.linalg.norm(unfold(xi.G, d) @ unfold(x.G, d).T)))
        err = max(err, float(np.linalg.norm(M - M.T)) / scale)
    return err


# --------------------------------------------------------------------------
# random elements


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def rand_point(dims, ranks, seed=None):
    """Orthonormalized Gaussian factors and a Gaussian core."""
    dims = tuple(int(n) for n in dims)
    ranks = tuple(int(r) for r in ranks)
    if len(dims) != 3 or len(ranks) != 3 or any(r < 1 or r > n for n, r in zip(dims, ranks)):
        raise DimensionError(f"invalid dims {dims} / ranks {ranks}")
    rng = _rng(seed)
    Us = [polar_factor(rng.standard_normal((n, r))) for n, r in zip(dims, ranks)]
    return TuckerPoint(*Us, rng.standard_normal(ranks))


def rand_ambient(x, seed=None):
    rng = _rng(seed)
    return TuckerTangent(*(rng.standard_normal(b.shape) for b in (x.U1, x.U2, x.U3, x.G)))


def rand_tangent(x, seed=None, horizontal=True):
    """Gaussian ambient vector pushed through the tangent (and horizontal) projection."""
    xi = project_tangent(x, rand_ambient(x, seed))
    return project_horizontal(x, xi) if horizontal else xi


# --------------------------------------------------------------------------
# bundles used by the solver


class PreconditionedGeometry:
    """Quotient geometry with the core-Gram-weighted metric."""

    name = "preconditioned"

    def __init__(self, ridge=None, tol=HORIZONTAL_TOL, max_iter=COUPLED_MAX_ITER):
        self.ridge = ridge
        self.tol = tol
        self.max_iter = max_iter

    def inner(self, x, xi, eta):
        return metric(x, xi, eta)

    def norm(self, x, xi):
        return norm(x, xi)

    def rgrad(self, x, partials):
        """Riemannian gradient from Euclidean partial derivatives.

        Factor partials are scaled by ``A_d^{-1}`` and the result projected
        onto the tangent space; invariance of the cost makes it horizontal.
        """
        grams = core_grams(x.G)
        scaled = [SymEig(A, ridge=self.ridge).inv_right(P) for A, P in zip(grams, partials[:3])]
        return project_tangent(x, TuckerTangent(*scaled, partials[3]), ridge=self.ridge)

    def transport(self, x, eta, xi, y=None):
        if y is None:
            y = retract(x, eta)
        return project_horizontal(y, project_tangent(y, xi, ridge=self.ridge),
                                  tol=self.tol, max_iter=self.max_iter, ridge=self.ridge)

    def retract(self, x, xi):
        return retract(x, xi)


class EuclideanGeometry:
    """Unscaled product metric; the quotient is ignored (baseline only)."""

    name = "euclidean"

    def inner(self, x, xi, eta):
        return euclid_metric(x, xi, eta)

    def norm(self, x, xi):
        return float(np.sqrt(max(euclid_metric(x, xi, xi), 0.0)))

    def rgrad(self, x, partials):
        return euclid_project_tangent(x, TuckerTangent(*partials))

    def transport(self, x, eta, xi, y=None):
        if y is None:
            y = retract(x, eta)
        return euclid_project_tangent(y, xi)

    def retract(self, x, xi):
        return retract(x, xi)
