"""Dense and sparse 3-order tensors, unfoldings, mode products and the sparse kernels.

Dense tensors are plain ``numpy`` arrays of shape ``(n1, n2, n3)``.

Unfolding convention (Kolda): the mode-d unfolding places element
``(i1, i2, i3)`` at row ``i_d``; the column index runs over the remaining two
indices with the lower mode varying fastest::

    mode 1: column i2 + i3 * n2
    mode 2: column i1 + i3 * n1
    mode 3: column i1 + i2 * n1

so that ``unfold(G x1 U1 x2 U2 x3 U3, 1) == U1 @ unfold(G, 1) @ kron(U3, U2).T``.

The sparse kernels come from the compiled ``_kernels`` extension when it is
importable and from the numpy fallback otherwise.  ``TUCKERCG_BACKEND``
(``auto`` | ``cython`` | ``python``) overrides the choice at import time.
"""
from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels_py
from .errors import DimensionError

__all__ = [
    "SparseTensor3",
    "unfold",
    "fold",
    "mode_product",
    "tucker_to_dense",
    "sparse_eval_tucker",
    "sparse_kron_contract",
    "sparse_core_contract",
    "sparse_grad_pass",
    "sparse_directional",
    "backend_name",
    "set_backend",
    "set_threads",
    "get_threads",
]


# --------------------------------------------------------------------------
# backend selection


def _load_backend(choice):
    if choice == "python":
        return _kernels_py
    try:
        from . import _kernels
    except ImportError:
        if choice == "cython":
            raise
        return _kernels_py
    return _kernels


_backend = _load_backend(os.environ.get("TUCKERCG_BACKEND", "auto").lower())
_threads = 1
_MIN_ENTRIES_PER_THREAD = 4096


def backend_name():
    return _backend.BACKEND


def set_backend(name):
    """Switch kernels at runtime; ``name`` is ``"cython"``, ``"python"`` or ``"auto"``."""
    global _backend
    _backend = _load_backend(name)
    if name == "auto" and _backend is _kernels_py:
        warnings.warn("compiled kernels unavailable, using numpy fallback", RuntimeWarning)
    return _backend.BACKEND


def set_threads(n):
    """Cap the number of worker threads used by the sparse kernels."""
    global _threads
    _threads = max(1, int(n))


def get_threads():
    return _threads


def _chunks(m):
    n = min(_threads, max(1, m // _MIN_ENTRIES_PER_THREAD))
    bounds = np.linspace(0, m, n + 1).astype(np.int64)
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def _run(fn, idx, per_entry, *args):
    """Call ``fn`` over fixed contiguous entry partitions.

    ``per_entry`` tells which positional arguments are per-entry arrays and
    must be sliced along with ``idx``.  Partial results are combined in
    partition order so the outcome only depends on the thread count.
    """
    parts = _chunks(idx.shape[0])
    if len(parts) == 1:
        return fn(idx, *args)

    def call(sl):
        sliced = [a[sl] if flag else a for a, flag in zip(args, per_entry)]
        return fn(idx[sl], *sliced)

    with ThreadPoolExecutor(max_workers=len(parts)) as pool:
        results = list(pool.map(call, parts))
    return results


def _combine(results, entrywise):
    """Concatenate per-entry outputs, sum accumulators, in partition order."""
    if not isinstance(results, list):
        return results
    first = results[0]
    if not isinstance(first, tuple):
        first, results = (first,), [(r,) for r in results]
        single = True
    else:
        single = False
    out = []
    for pos in range(len(first)):
        pieces = [r[pos] for r in results]
        if entrywise[pos]:
            out.append(np.concatenate(pieces))
        else:
            acc = pieces[0].copy()
            for p in pieces[1:]:
                acc += p
            out.append(acc)
    return out[0] if single else tuple(out)


# --------------------------------------------------------------------------
# dense tensors


def _check_mode(d):
    if d not in (1, 2, 3):
        raise DimensionError(f"mode must be 1, 2 or 3, got {d!r}")


def unfold(T, d):
    """Mode-``d`` unfolding (``d`` in 1..3) as an ``n_d x prod(other dims)`` matrix."""
    _check_mode(d)
    T = np.asarray(T)
    if T.ndim != 3:
        raise DimensionError(f"expected a 3-order tensor, got shape {T.shape}")
    return np.reshape(np.moveaxis(T, d - 1, 0), (T.shape[d - 1], -1), order="F")


def fold(M, d, dims):
    """Inverse of :func:`unfold`."""
    _check_mode(d)
    dims = tuple(int(n) for n in dims)
    M = np.asarray(M)
    if M.shape != (dims[d - 1], int(np.prod(dims)) // max(dims[d - 1], 1)):
        raise DimensionError(f"matrix of shape {M.shape} cannot fold to {dims} along mode {d}")
    rest = [n for e, n in enumerate(dims) if e != d - 1]
    T = np.reshape(M, (dims[d - 1], *rest), order="F")
    return np.ascontiguousarray(np.moveaxis(T, 0, d - 1))


def mode_product(T, V, d):
    """``T x_d V``: multiply every mode-``d`` fiber of ``T`` by ``V``."""
    _check_mode(d)
    T = np.asarray(T, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or V.shape[1] != T.shape[d - 1]:
        raise DimensionError(
            f"matrix with shape {V.shape} cannot multiply mode {d} of size {T.shape[d - 1]}"
        )
    out = np.tensordot(V, T, axes=([1], [d - 1]))
    return np.ascontiguousarray(np.moveaxis(out, 0, d - 1))


def tucker_to_dense(x):
    """``G x1 U1 x2 U2 x3 U3`` as a dense array."""
    return mode_product(mode_product(mode_product(x.G, x.U1, 1), x.U2, 2), x.U3, 3)


# --------------------------------------------------------------------------
# sparse tensors


@dataclass(frozen=True)
class SparseTensor3:
    """COO 3-order tensor with lexicographically sorted, unique 0-based indices.

    Build through :meth:`from_entries`, which sorts and validates; the
    plain constructor trusts its inputs.
    """

    dims: tuple
    idx: np.ndarray
    vals: np.ndarray

    @classmethod
    def from_entries(cls, dims, idx, vals):
        dims = tuple(int(n) for n in dims)
        if len(dims) != 3 or min(dims) < 1:
            raise DimensionError(f"dims must be three positive integers, got {dims}")
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
        vals = np.asarray(vals, dtype=np.float64).reshape(-1)
        if idx.shape[0] != vals.shape[0]:
            raise DimensionError(f"{idx.shape[0]} indices but {vals.shape[0]} values")
        if idx.size and ((idx < 0).any() or (idx >= np.asarray(dims)).any()):
            raise IndexError(f"index out of range for dims {dims}")
        order = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0]))
        idx = np.ascontiguousarray(idx[order])
        vals = np.ascontiguousarray(vals[order])
        if idx.shape[0] > 1:
            dup = np.all(idx[1:] == idx[:-1], axis=1)
            if dup.any():
                where = idx[1:][dup][0]
                raise ValueError(f"duplicate index {tuple(int(v) for v in where)}")
        return cls(dims, idx, vals)

    @classmethod
    def empty(cls, dims):
        return cls.from_entries(dims, np.zeros((0, 3), dtype=np.int64), np.zeros(0))

    @classmethod
    def from_dense(cls, T, idx):
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
        return cls.from_entries(T.shape, idx, T[idx[:, 0], idx[:, 1], idx[:, 2]])

    @property
    def nnz(self):
        return int(self.idx.shape[0])

    def with_values(self, vals):
        vals = np.ascontiguousarray(vals, dtype=np.float64)
        if vals.shape != self.vals.shape:
            raise DimensionError(f"expected {self.vals.shape[0]} values, got {vals.shape}")
        return SparseTensor3(self.dims, self.idx, vals)

    def linear_index(self):
        n1, n2, n3 = self.dims
        return (self.idx[:, 0] * n2 + self.idx[:, 1]) * n3 + self.idx[:, 2]

    def is_canonical(self):
        """One pass: strictly increasing linear indices and all in range."""
        if self.nnz == 0:
            return True
        if (self.idx < 0).any() or (self.idx >= np.asarray(self.dims)).any():
            return False
        return bool(np.all(np.diff(self.linear_index()) > 0))

    def to_dense(self):
        T = np.zeros(self.dims)
        T[self.idx[:, 0], self.idx[:, 1], self.idx[:, 2]] = self.vals
        return T

    def norm(self):
        return float(np.linalg.norm(self.vals))


# --------------------------------------------------------------------------
# sparse kernels


def _check_dims(dims, x):
    if tuple(dims) != tuple(x.dims):
        raise DimensionError(f"sparse dims {tuple(dims)} do not match point dims {x.dims}")


def _index_set(idx, x):
    idx = np.ascontiguousarray(idx, dtype=np.int64).reshape(-1, 3)
    if idx.size and ((idx < 0).any() or (idx >= np.asarray(x.dims)).any()):
        raise IndexError(f"index out of range for dims {x.dims}")
    return idx


def sparse_eval_tucker(x, idx):
    """Model values ``(G x1 U1 x2 U2 x3 U3)[i, j, k]`` on the index set ``idx``.

    ``idx`` may be an ``(m, 3)`` array or a :class:`SparseTensor3`, in which
    case a tensor with the same pattern is returned.
    """
    if isinstance(idx, SparseTensor3):
        _check_dims(idx.dims, x)
        return idx.with_values(sparse_eval_values(x, idx.idx))
    idx = _index_set(idx, x)
    vals = sparse_eval_values(x, idx)
    return SparseTensor3.from_entries(x.dims, idx, vals)


def sparse_eval_values(x, idx):
    """Like :func:`sparse_eval_tucker` but returns the bare value array in ``idx`` order."""
    idx = np.ascontiguousarray(idx, dtype=np.int64).reshape(-1, 3)
    res = _run(_backend.eval_tucker, idx, (False,) * 4, x.U1, x.U2, x.U3, x.G)
    return _combine(res, (True,))


def sparse_kron_contract(S, x, d):
    """``S_d (U_c kron U_b) G_d^T`` without forming the Kronecker product."""
    _check_mode(d)
    _check_dims(S.dims, x)
    res = _run(_backend.kron_contract, S.idx, (True,) + (False,) * 5,
               S.vals, x.U1, x.U2, x.U3, x.G, d)
    return _combine(res, (False,))


def sparse_core_contract(S, x):
    """``S x1 U1^T x2 U2^T x3 U3^T`` accumulated entry by entry."""
    _check_dims(S.dims, x)
    res = _run(_backend.core_contract, S.idx, (True, False, False, False),
               S.vals, x.U1, x.U2, x.U3)
    return _combine(res, (False,))


def sparse_grad_pass(data, x, scale):
    """Fused residual + partial-derivative sweep.

    Returns ``(S, dU1, dU2, dU3, dG)`` where ``S = scale * (model - data)``
    on the pattern of ``data`` and the derivatives are those of
    :func:`sparse_kron_contract` / :func:`sparse_core_contract` applied to S.
    """
    _check_dims(data.dims, x)
    res = _run(_backend.grad_pass, data.idx, (True,) + (False,) * 5,
               data.vals, float(scale), x.U1, x.U2, x.U3, x.G)
    s, d1, d2, d3, dg = _combine(res, (True, False, False, False, False))
    return data.with_values(s), d1, d2, d3, dg


def sparse_directional(x, xi, idx):
    """Model values ``a`` and first-order directional terms ``b`` on ``idx``.

    ``b`` is the sum of the four terms obtained by substituting one block of
    ``xi`` for the matching block of ``x`` in the Tucker product.
    """
    idx = np.ascontiguousarray(idx, dtype=np.int64).reshape(-1, 3)
    blocks = tuple(np.ascontiguousarray(b, dtype=np.float64) for b in xi.blocks)
    res = _run(_backend.directional, idx, (False,) * 8,
               x.U1, x.U2, x.U3, x.G, *blocks)
    return _combine(res, (True, True))
