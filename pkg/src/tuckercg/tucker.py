"""Containers for points, tangent vectors and group elements of the Tucker total space."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class TuckerPoint:
    """A representative ``(U1, U2, U3, G)`` of a fixed multilinear-rank tensor.

    ``U_d`` is ``n_d x r_d`` with orthonormal columns and ``G`` is the
    ``r1 x r2 x r3`` core.  Arrays are treated as immutable.
    """

    U1: np.ndarray
    U2: np.ndarray
    U3: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        for name in ("U1", "U2", "U3"):
            U = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if U.ndim != 2:
                raise DimensionError(f"{name} must be a matrix, got shape {U.shape}")
            object.__setattr__(self, name, U)
        G = np.ascontiguousarray(self.G, dtype=np.float64)
        if G.shape != (self.U1.shape[1], self.U2.shape[1], self.U3.shape[1]):
            raise DimensionError(
                f"core shape {G.shape} does not match factor ranks "
                f"{(self.U1.shape[1], self.U2.shape[1], self.U3.shape[1])}"
            )
        object.__setattr__(self, "G", G)

    @property
    def factors(self):
        return (self.U1, self.U2, self.U3)

    @property
    def dims(self):
        return (self.U1.shape[0], self.U2.shape[0], self.U3.shape[0])

    @property
    def ranks(self):
        return self.G.shape

    def orthonormality_error(self):
        """Largest ``||U_d^T U_d - I||_max`` over the three factors."""
        return max(
            float(np.max(np.abs(U.T @ U - np.eye(U.shape[1])))) for U in self.factors
        )


@dataclass(frozen=True)
class TuckerTangent:
    """Blocks ``(Z_U1, Z_U2, Z_U3, Z_G)``.

    Doubles as an ambient-space vector: tangency and horizontality are
    properties checked by the geometry, not encoded in the type.
    """

    U1: np.ndarray
    U2: np.ndarray
    U3: np.ndarray
    G: np.ndarray

    @property
    def blocks(self):
        return (self.U1, self.U2, self.U3, self.G)

    @classmethod
    def zeros_like(cls, x):
        return cls(*(np.zeros_like(b) for b in (x.U1, x.U2, x.U3, x.G)))

    def __add__(self, other):
        return TuckerTangent(*(a + b for a, b in zip(self.blocks, other.blocks)))

    def __sub__(self, other):
        return TuckerTangent(*(a - b for a, b in zip(self.blocks, other.blocks)))

    def __neg__(self):
        return TuckerTangent(*(-a for a in self.blocks))

    def __mul__(self, c):
        c = float(c)
        return TuckerTangent(*(c * a for a in self.blocks))

    __rmul__ = __mul__

    def euclid_norm(self):
        return float(np.sqrt(sum(np.vdot(b, b) for b in self.blocks)))


@dataclass(frozen=True)
class GroupElement:
    """Orthogonal matrices ``(O1, O2, O3)`` acting on the total space."""

    O1: np.ndarray
    O2: np.ndarray
    O3: np.ndarray

    @property
    def mats(self):
        return (self.O1, self.O2, self.O3)

    @classmethod
    def random(cls, ranks, rng):
        mats = []
        for r in ranks:
            Q, R = np.linalg.qr(rng.standard_normal((r, r)))
            mats.append(Q * np.sign(np.diag(R)))
        return cls(*mats)
