# cython: language_level=3
"""Compiled sparse Tucker kernels.

Every routine walks the COO entries in storage order and accumulates into
its outputs in that order, so results are reproducible bit for bit.  The
loops run without the GIL; the dispatcher in :mod:`tuckercg.tensor_core`
may call them concurrently on disjoint entry slices.
"""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free

cnp.import_array()

BACKEND = "cython"


cdef inline double _contract_entry(
    const double[:, :, ::1] G,
    const double[::1] u1, const double[::1] u2, const double[::1] u3,
    double* T, double* M,
) noexcept nogil:
    # T[a, b] = sum_c G[a, b, c] u3[c];  M[a] = sum_b T[a, b] u2[b]
    cdef Py_ssize_t r1 = G.shape[0], r2 = G.shape[1], r3 = G.shape[2]
    cdef Py_ssize_t a, b, c
    cdef double acc, val = 0.0
    for a in range(r1):
        acc = 0.0
        for b in range(r2):
            T[a * r2 + b] = 0.0
            for c in range(r3):
                T[a * r2 + b] += G[a, b, c] * u3[c]
            acc += T[a * r2 + b] * u2[b]
        M[a] = acc
        val += u1[a] * acc
    return val


def eval_tucker(const cnp.int64_t[:, ::1] idx,
                const double[:, ::1] U1, const double[:, ::1] U2,
                const double[:, ::1] U3, const double[:, :, ::1] G):
    cdef Py_ssize_t m = idx.shape[0]
    cdef Py_ssize_t r1 = G.shape[0], r2 = G.shape[1]
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t n
    cdef double* T
    cdef double* M
    with nogil:
        T = <double*> malloc(r1 * r2 * sizeof(double))
        M = <double*> malloc(r1 * sizeof(double))
        for n in range(m):
            o[n] = _contract_entry(G, U1[idx[n, 0]], U2[idx[n, 1]], U3[idx[n, 2]], T, M)
        free(T)
        free(M)
    return out


def kron_contract(const cnp.int64_t[:, ::1] idx, const double[::1] s,
                  const double[:, ::1] U1, const double[:, ::1] U2,
                  const double[:, ::1] U3, const double[:, :, ::1] G, int mode):
    cdef Py_ssize_t m = idx.shape[0]
    cdef Py_ssize_t r1 = G.shape[0], r2 = G.shape[1], r3 = G.shape[2]
    cdef Py_ssize_t n_rows, r_out
    if mode == 1:
        n_rows, r_out = U1.shape[0], r1
    elif mode == 2:
        n_rows, r_out = U2.shape[0], r2
    else:
        n_rows, r_out = U3.shape[0], r3
    out = np.zeros((n_rows, r_out), dtype=np.float64)
    cdef double[:, ::1] D = out
    cdef Py_ssize_t n, a, b, c, i, j, k
    cdef double sv, acc
    with nogil:
        for n in range(m):
            i = idx[n, 0]
            j = idx[n, 1]
            k = idx[n, 2]
            sv = s[n]
            if mode == 1:
                for a in range(r1):
                    acc = 0.0
                    for b in range(r2):
                        for c in range(r3):
                            acc += G[a, b, c] * U2[j, b] * U3[k, c]
                    D[i, a] += sv * acc
            elif mode == 2:
                for b in range(r2):
                    acc = 0.0
                    for a in range(r1):
                        for c in range(r3):
                            acc += G[a, b, c] * U1[i, a] * U3[k, c]
                    D[j, b] += sv * acc
            else:
                for c in range(r3):
                    acc = 0.0
                    for a in range(r1):
                        for b in range(r2):
                            acc += G[a, b, c] * U1[i, a] * U2[j, b]
                    D[k, c] += sv * acc
    return out


def core_contract(const cnp.int64_t[:, ::1] idx, const double[::1] s,
                  const double[:, ::1] U1, const double[:, ::1] U2,
                  const double[:, ::1] U3):
    cdef Py_ssize_t m = idx.shape[0]
    cdef Py_ssize_t r1 = U1.shape[1], r2 = U2.shape[1], r3 = U3.shape[1]
    out = np.zeros((r1, r2, r3), dtype=np.float64)
    cdef double[:, :, ::1] C = out
    cdef Py_ssize_t n, a, b, c, i, j, k
    cdef double w1, w2
    with nogil:
        for n in range(m):
            i = idx[n, 0]
            j = idx[n, 1]
            k = idx[n, 2]
            for a in range(r1):
                w1 = s[n] * U1[i, a]
                for b in range(r2):
                    w2 = w1 * U2[j, b]
                    for c in range(r3):
                        C[a, b, c] += w2 * U3[k, c]
    return out


def grad_pass(const cnp.int64_t[:, ::1] idx, const double[::1] y, double scale,
              const double[:, ::1] U1, const double[:, ::1] U2,
              const double[:, ::1] U3, const double[:, :, ::1] G):
    """Residual and all four partial derivatives in a single sweep."""
    cdef Py_ssize_t m = idx.shape[0]
    cdef Py_ssize_t r1 = G.shape[0], r2 = G.shape[1], r3 = G.shape[2]
    res = np.empty(m, dtype=np.float64)
    d1 = np.zeros((U1.shape[0], r1), dtype=np.float64)
    d2 = np.zeros((U2.shape[0], r2), dtype=np.float64)
    d3 = np.zeros((U3.shape[0], r3), dtype=np.float64)
    dg = np.zeros((r1, r2, r3), dtype=np.float64)
    cdef double[::1] R = res
    cdef double[:, ::1] D1 = d1
    cdef double[:, ::1] D2 = d2
    cdef double[:, ::1] D3 = d3
    cdef double[:, :, ::1] DG = dg
    cdef Py_ssize_t n, a, b, c, i, j, k
    cdef double sv, acc, w1, w2
    cdef double* T
    cdef double* M
    with nogil:
        T = <double*> malloc(r1 * r2 * sizeof(double))
        M = <double*> malloc(r1 * sizeof(double))
        for n in range(m):
            i = idx[n, 0]
            j = idx[n, 1]
            k = idx[n, 2]
            sv = scale * (_contract_entry(G, U1[i], U2[j], U3[k], T, M) - y[n])
            R[n] = sv
            for a in range(r1):
                D1[i, a] += sv * M[a]
            for b in range(r2):
                acc = 0.0
                for a in range(r1):
                    acc += T[a * r2 + b] * U1[i, a]
                D2[j, b] += sv * acc
            for c in range(r3):
                acc = 0.0
                for a in range(r1):
                    for b in range(r2):
                        acc += G[a, b, c] * U1[i, a] * U2[j, b]
                D3[k, c] += sv * acc
            for a in range(r1):
                w1 = sv * U1[i, a]
                for b in range(r2):
                    w2 = w1 * U2[j, b]
                    for c in range(r3):
                        DG[a, b, c] += w2 * U3[k, c]
        free(T)
        free(M)
    return res, d1, d2, d3, dg


def directional(const cnp.int64_t[:, ::1] idx,
                const double[:, ::1] U1, const double[:, ::1] U2,
                const double[:, ::1] U3, const double[:, :, ::1] G,
                const double[:, ::1] Z1, const double[:, ::1] Z2,
                const double[:, ::1] Z3, const double[:, :, ::1] ZG):
    """Model values and their first-order change along (Z1, Z2, Z3, ZG)."""
    cdef Py_ssize_t m = idx.shape[0]
    cdef Py_ssize_t r1 = G.shape[0], r2 = G.shape[1], r3 = G.shape[2]
    a_out = np.empty(m, dtype=np.float64)
    b_out = np.empty(m, dtype=np.float64)
    cdef double[::1] A = a_out
    cdef double[::1] B = b_out
    cdef Py_ssize_t n, a, b, c, i, j, k
    cdef double acc, db, gab
    cdef double* T
    cdef double* M
    with nogil:
        T = <double*> malloc(r1 * r2 * sizeof(double))
        M = <double*> malloc(r1 * sizeof(double))
        for n in range(m):
            i = idx[n, 0]
            j = idx[n, 1]
            k = idx[n, 2]
            A[n] = _contract_entry(G, U1[i], U2[j], U3[k], T, M)
            db = 0.0
            for a in range(r1):
                db += Z1[i, a] * M[a]
            for b in range(r2):
                acc = 0.0
                for a in range(r1):
                    acc += T[a * r2 + b] * U1[i, a]
                db += acc * Z2[j, b]
            for a in range(r1):
                for b in range(r2):
                    gab = U1[i, a] * U2[j, b]
                    for c in range(r3):
                        db += gab * (G[a, b, c] * Z3[k, c] + ZG[a, b, c] * U3[k, c])
            B[n] = db
        free(T)
        free(M)
    return a_out, b_out
