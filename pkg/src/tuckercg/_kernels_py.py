"""Pure numpy versions of the sparse Tucker kernels.

Same signatures and semantics as the compiled ``_kernels`` module.  Entries
are processed in fixed-size blocks to bound the memory of the per-entry
intermediates; scatter-adds go through ``np.add.at`` which accumulates in
entry order.
"""
import numpy as np

BACKEND = "python"

_BLOCK = 1 << 15


def _blocks(m):
    for start in range(0, m, _BLOCK):
        yield slice(start, min(start + _BLOCK, m))


def _partials(G, u1, u2, u3):
    # T[n, a, b] = sum_c G[a, b, c] u3[n, c]
    r1, r2, r3 = G.shape
    T = (u3 @ G.reshape(r1 * r2, r3).T).reshape(-1, r1, r2)
    M = np.einsum("nab,nb->na", T, u2)
    return T, M


def eval_tucker(idx, U1, U2, U3, G):
    m = idx.shape[0]
    out = np.empty(m)
    for blk in _blocks(m):
        i, j, k = idx[blk, 0], idx[blk, 1], idx[blk, 2]
        _, M = _partials(G, U1[i], U2[j], U3[k])
        out[blk] = np.einsum("na,na->n", U1[i], M)
    return out


def _mode3_vec(G, u1, u2):
    r1, r2, r3 = G.shape
    W = (u1 @ G.reshape(r1, r2 * r3)).reshape(-1, r2, r3)
    return np.einsum("nbc,nb->nc", W, u2)


def kron_contract(idx, s, U1, U2, U3, G, mode):
    rows = {1: U1, 2: U2, 3: U3}[mode].shape[0]
    out = np.zeros((rows, G.shape[mode - 1]))
    for blk in _blocks(idx.shape[0]):
        i, j, k = idx[blk, 0], idx[blk, 1], idx[blk, 2]
        u1, u2, u3 = U1[i], U2[j], U3[k]
        if mode == 1:
            _, V = _partials(G, u1, u2, u3)
            target = i
        elif mode == 2:
            T, _ = _partials(G, u1, u2, u3)
            V = np.einsum("nab,na->nb", T, u1)
            target = j
        else:
            V = _mode3_vec(G, u1, u2)
            target = k
        np.add.at(out, target, s[blk, None] * V)
    return out


def core_contract(idx, s, U1, U2, U3):
    r1, r2, r3 = U1.shape[1], U2.shape[1], U3.shape[1]
    out = np.zeros((r1, r2 * r3))
    for blk in _blocks(idx.shape[0]):
        u1 = U1[idx[blk, 0]] * s[blk, None]
        kr = (U2[idx[blk, 1]][:, :, None] * U3[idx[blk, 2]][:, None, :]).reshape(-1, r2 * r3)
        out += u1.T @ kr
    return out.reshape(r1, r2, r3)


def grad_pass(idx, y, scale, U1, U2, U3, G):
    m = idx.shape[0]
    r1, r2, r3 = G.shape
    res = np.empty(m)
    d1 = np.zeros((U1.shape[0], r1))
    d2 = np.zeros((U2.shape[0], r2))
    d3 = np.zeros((U3.shape[0], r3))
    dg = np.zeros((r1, r2 * r3))
    for blk in _blocks(m):
        i, j, k = idx[blk, 0], idx[blk, 1], idx[blk, 2]
        u1, u2, u3 = U1[i], U2[j], U3[k]
        T, M = _partials(G, u1, u2, u3)
        sv = scale * (np.einsum("na,na->n", u1, M) - y[blk])
        res[blk] = sv
        np.add.at(d1, i, sv[:, None] * M)
        np.add.at(d2, j, sv[:, None] * np.einsum("nab,na->nb", T, u1))
        np.add.at(d3, k, sv[:, None] * _mode3_vec(G, u1, u2))
        kr = (u2[:, :, None] * u3[:, None, :]).reshape(-1, r2 * r3)
        dg += (u1 * sv[:, None]).T @ kr
    return res, d1, d2, d3, dg.reshape(r1, r2, r3)


def directional(idx, U1, U2, U3, G, Z1, Z2, Z3, ZG):
    m = idx.shape[0]
    a_out = np.empty(m)
    b_out = np.empty(m)
    for blk in _blocks(m):
        i, j, k = idx[blk, 0], idx[blk, 1], idx[blk, 2]
        u1, u2, u3 = U1[i], U2[j], U3[k]
        T, M = _partials(G, u1, u2, u3)
        a_out[blk] = np.einsum("na,na->n", u1, M)
        b = np.einsum("na,na->n", Z1[i], M)
        b += np.einsum("nab,na,nb->n", T, u1, Z2[j])
        b += np.einsum("nc,nc->n", _mode3_vec(G, u1, u2), Z3[k])
        _, MZ = _partials(ZG, u1, u2, u3)
        b += np.einsum("na,na->n", u1, MZ)
        b_out[blk] = b
    return a_out, b_out
