"""Completion cost, residual, Riemannian gradient and the closed-form step guess."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError, TuckerError
from .manifold import PreconditionedGeometry
from .tensor_core import (
    SparseTensor3,
    sparse_directional,
    sparse_eval_values,
    sparse_grad_pass,
)


class DegenerateDirectionError(TuckerError, ArithmeticError):
    """The search direction does not change the model on the observed entries."""


@dataclass(frozen=True)
class CompletionProblem:
    """Observed entries (``train``) plus optional held-out sets, and a target rank."""

    dims: tuple
    ranks: tuple
    train: SparseTensor3
    test: Optional[SparseTensor3] = None
    validation: Optional[SparseTensor3] = None

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        ranks = tuple(int(r) for r in self.ranks)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "ranks", ranks)
        if len(ranks) != 3 or any(r < 1 or r > n for n, r in zip(dims, ranks)):
            raise DimensionError(f"ranks {ranks} invalid for dims {dims}")
        r1, r2, r3 = ranks
        if r1 > r2 * r3 or r2 > r1 * r3 or r3 > r1 * r2:
            raise DimensionError(f"ranks {ranks} violate r_d <= product of the other two")
        if self.train.nnz == 0:
            raise ValueError("training set is empty")
        keys = {}
        for name in ("train", "test", "validation"):
            t = getattr(self, name)
            if t is None:
                continue
            if tuple(t.dims) != dims:
                raise DimensionError(f"{name} dims {t.dims} differ from {dims}")
            keys[name] = t.linear_index()
        names = list(keys)
        for a in range(len(names)):
            for b in range(a + 1, len(names)):
                if np.intersect1d(keys[names[a]], keys[names[b]]).size:
                    raise ValueError(f"{names[a]} and {names[b]} index sets overlap")

    @property
    def n_obs(self):
        return self.train.nnz


def residual(p, x):
    """``S = (2/|Omega|) (model - observed)`` on the training pattern."""
    a = sparse_eval_values(x, p.train.idx)
    return p.train.with_values((2.0 / p.n_obs) * (a - p.train.vals))


def cost(p, x):
    """Mean squared error on the observed entries."""
    return mse_on(p, x, "train")


def mse_on(p, x, which="train"):
    data = getattr(p, which, None) if which in ("train", "test", "validation") else None
    if data is None:
        raise ValueError(f"problem has no {which!r} set")
    if data.nnz == 0:
        return 0.0
    err = sparse_eval_values(x, data.idx) - data.vals
    return float(np.dot(err, err) / data.nnz)


def euclidean_partials(p, x):
    """Cost and partial derivatives with respect to ``(U1, U2, U3, G)``.

    One fused sweep over the observed entries; returns ``(cost, partials, S)``.
    """
    m = p.n_obs
    S, d1, d2, d3, dg = sparse_grad_pass(p.train, x, 2.0 / m)
    err = S.vals * (m / 2.0)
    return float(np.dot(err, err) / m), (d1, d2, d3, dg), S


def cost_and_grad(p, x, geometry=None):
    geometry = geometry or PreconditionedGeometry()
    f, partials, _ = euclidean_partials(p, x)
    return f, geometry.rgrad(x, partials)


def riemannian_grad(p, x, geometry=None):
    """Horizontal lift of the Riemannian gradient (preconditioned metric by default)."""
    return cost_and_grad(p, x, geometry)[1]


def stepsize_guess(p, x, xi, fallback=None):
    """Minimizer over ``s >= 0`` of the linearized fit ``||a + s b - y||^2`` on Omega.

    ``a`` is the current model on Omega and ``b`` the sum of the four
    first-order terms, each with one block of ``xi`` in place of the
    corresponding block of ``x``.  Second-order cross terms are dropped.
    A non-positive minimizer is clamped to 0, or replaced by ``fallback``
    when one is given.
    """
    a, b = sparse_directional(x, xi, p.train.idx)
    bb = float(np.dot(b, b))
    if not bb > 0.0:
        raise DegenerateDirectionError("direction leaves the observed entries unchanged")
    s = float(np.dot(p.train.vals - a, b)) / bb
    if s > 0.0:
        return s
    return 0.0 if fallback is None else float(fallback)
