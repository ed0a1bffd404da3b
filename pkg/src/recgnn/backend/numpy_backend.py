"""Pure numpy implementation of the kernel API.

This is the fallback used when the compiled extension is unavailable, and
the reference the extension is tested against. Both backends expose the
same functions with the same shapes and caching conventions:

* mlp_forward / mlp_backward: one-hidden-layer perceptron with ReLU and an
  optional dropout multiplier matrix (0 or 1/keep per hidden unit).
* gru_forward / gru_backward: gated recurrent cell, reset gate applied to
  the hidden-to-candidate term.
* edge_concat / gather_rows / scatter_*: message-passing plumbing over the
  directed-edge layout of graphs.Graph.message_layout.

Layer parameters arrive as one flat float64 vector plus a small integer
offset table (see the meta layouts below), mirroring the compiled kernels.

Neighbor aggregation is value-canonical: each receiver's incoming values
are summed per dimension in ascending value order, so the result depends
only on the multiset of messages and not on node labeling.

Parameter-gradient kernels accumulate into the caller's flat buffer.
"""
from __future__ import annotations

import numpy as np

NAME = "numpy"


def _sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _mlp_views(flat, meta):
    # meta: [in_dim, hidden, out_dim, off_W1, off_b1, off_W2, off_b2]
    ind, hid, out = int(meta[0]), int(meta[1]), int(meta[2])
    W1 = flat[meta[3]:meta[3] + ind * hid].reshape(ind, hid)
    b1 = flat[meta[4]:meta[4] + hid]
    W2 = flat[meta[5]:meta[5] + hid * out].reshape(hid, out)
    b2 = flat[meta[6]:meta[6] + out]
    return W1, b1, W2, b2


def mlp_forward(x, pflat, meta, dropmul=None, need_cache=False):
    """Return (y, hdrop, mfac); the cache entries are None unless requested."""
    W1, b1, W2, b2 = _mlp_views(pflat, meta)
    hpre = x @ W1
    hpre += b1
    hact = np.maximum(hpre, 0.0)
    hdrop = hact if dropmul is None else hact * dropmul
    y = hdrop @ W2
    y += b2
    if not need_cache:
        return y, None, None
    mfac = (hpre > 0.0).astype(np.float64)
    if dropmul is not None:
        mfac *= dropmul
    return y, hdrop, mfac


def mlp_backward(dy, x, hdrop, mfac, pflat, gflat, meta, need_dx=True):
    W1, _, W2, _ = _mlp_views(pflat, meta)
    gW1, gb1, gW2, gb2 = _mlp_views(gflat, meta)
    gW2 += hdrop.T @ dy
    gb2 += dy.sum(axis=0)
    dh = dy @ W2.T
    dh *= mfac
    gW1 += x.T @ dh
    gb1 += dh.sum(axis=0)
    if not need_dx:
        return None
    return dh @ W1.T


def _gru_views(flat, meta):
    # meta: [d, off_Wr, off_Ur, off_br, off_Wz, off_Uz, off_bz,
    #        off_Wn, off_Un, off_bni, off_bnh]
    d = int(meta[0])
    mats = [flat[meta[i]:meta[i] + d * d].reshape(d, d) for i in (1, 2, 4, 5, 7, 8)]
    vecs = [flat[meta[i]:meta[i] + d] for i in (3, 6, 9, 10)]
    Wr, Ur, Wz, Uz, Wn, Un = mats
    br, bz, bni, bnh = vecs
    return Wr, Ur, br, Wz, Uz, bz, Wn, Un, bni, bnh


def gru_forward(xm, h, pflat, meta, need_cache=False):
    Wr, Ur, br, Wz, Uz, bz, Wn, Un, bni, bnh = _gru_views(pflat, meta)
    r = _sigmoid(xm @ Wr + h @ Ur + br)
    zg = _sigmoid(xm @ Wz + h @ Uz + bz)
    a = h @ Un + bnh
    c = np.tanh(xm @ Wn + r * a + bni)
    hnew = (1.0 - zg) * c + zg * h
    return hnew, r, zg, c, a


def gru_backward(dh_new, xm, h, r, zg, c, a, pflat, gflat, meta):
    Wr, Ur, _, Wz, Uz, _, Wn, Un, _, _ = _gru_views(pflat, meta)
    gWr, gUr, gbr, gWz, gUz, gbz, gWn, gUn, gbni, gbnh = _gru_views(gflat, meta)
    dzg = dh_new * (h - c)
    dc = dh_new * (1.0 - zg)
    dh = dh_new * zg

    dpc = dc * (1.0 - c * c)
    da = dpc * r
    dr = dpc * a
    gWn += xm.T @ dpc
    gbni += dpc.sum(axis=0)
    dxm = dpc @ Wn.T
    gUn += h.T @ da
    gbnh += da.sum(axis=0)
    dh += da @ Un.T

    dpz = dzg * zg * (1.0 - zg)
    gWz += xm.T @ dpz
    gUz += h.T @ dpz
    gbz += dpz.sum(axis=0)
    dxm += dpz @ Wz.T
    dh += dpz @ Uz.T

    dpr = dr * r * (1.0 - r)
    gWr += xm.T @ dpr
    gUr += h.T @ dpr
    gbr += dpr.sum(axis=0)
    dxm += dpr @ Wr.T
    dh += dpr @ Ur.T
    return dxm, dh


def concat_cols(a, b):
    return np.concatenate([a, b], axis=1)


def edge_concat(z, recv, send):
    """Per directed edge e: [z[recv[e]] || z[send[e]]], shape (E, 2d)."""
    return np.concatenate([z[recv], z[send]], axis=1)


def edge_concat_backward(dP, recv, send, dz):
    d = dz.shape[1]
    np.add.at(dz, recv, dP[:, :d])
    np.add.at(dz, send, dP[:, d:])


def gather_rows(m, idx):
    return m[idx]


def scatter_rows_add(dM, recv, send, dz):
    """dz[send[e]] += dM[recv[e]] for every directed edge e."""
    np.add.at(dz, send, dM[recv])


def _canonical_segment_sum(vals_by_dim, recv, num_nodes):
    out = np.zeros((num_nodes, vals_by_dim.shape[1]))
    for j in range(vals_by_dim.shape[1]):
        order = np.lexsort((vals_by_dim[:, j], recv))
        out[:, j] = np.bincount(recv[order], weights=vals_by_dim[order, j],
                                minlength=num_nodes)
    return out


def scatter_sum(msg, seg_starts, num_nodes):
    """Sum messages per receiver; edge e's receiver is its segment owner."""
    if msg.shape[0] == 0:
        return np.zeros((num_nodes, msg.shape[1]))
    recv = np.repeat(np.arange(num_nodes), np.diff(seg_starts))
    return _canonical_segment_sum(msg, recv, num_nodes)


def neighbor_sum(z, send, seg_starts, num_nodes):
    """Sum of sender embeddings per receiver (convolutions without edge MLP)."""
    if send.shape[0] == 0:
        return np.zeros((num_nodes, z.shape[1]))
    recv = np.repeat(np.arange(num_nodes), np.diff(seg_starts))
    return _canonical_segment_sum(z[send], recv, num_nodes)
