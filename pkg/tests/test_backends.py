"""Cross-backend equivalence and canonical-aggregation properties."""
import numpy as np
import pytest

from recgnn import backend
from recgnn.backend import numpy_backend as NB

compiled = pytest.importorskip("recgnn.backend._kernels",
                               reason="compiled kernels not built")

RNG = np.random.default_rng(1234)


def _mlp_setup(m=9, ind=5, hid=20, out=4):
    x = RNG.standard_normal((m, ind))
    sizes = [ind * hid, hid, hid * out, out]
    flat = RNG.standard_normal(sum(sizes))
    offs = np.cumsum([0] + sizes)[:-1]
    meta = np.array([ind, hid, out, *offs], dtype=np.intp)
    return x, flat, meta


@pytest.mark.parametrize("need_cache", [False, True])
@pytest.mark.parametrize("with_dropout", [False, True])
def test_mlp_forward_matches(need_cache, with_dropout):
    x, flat, meta = _mlp_setup()
    dm = None
    if with_dropout:
        dm = (RNG.random((9, 20)) >= 0.3).astype(np.float64) / 0.7
    yc, hc, mc = compiled.mlp_forward(x, flat, meta, dm, need_cache)
    yn, hn, mn = NB.mlp_forward(x, flat, meta, dm, need_cache)
    assert np.allclose(yc, yn, rtol=1e-12, atol=1e-14)
    if need_cache:
        assert np.allclose(hc, hn, rtol=1e-12, atol=1e-14)
        assert np.array_equal(mc, mn)
    else:
        assert hc is None and mc is None and hn is None and mn is None


def test_mlp_backward_matches():
    x, flat, meta = _mlp_setup()
    dm = (RNG.random((9, 20)) >= 0.2).astype(np.float64) / 0.8
    y, h, mf = compiled.mlp_forward(x, flat, meta, dm, True)
    dy = RNG.standard_normal(y.shape)
    gc = np.zeros_like(flat)
    gn = np.zeros_like(flat)
    dxc = compiled.mlp_backward(dy, x, h, mf, flat, gc, meta, True)
    dxn = NB.mlp_backward(dy, x, h, mf, flat, gn, meta, True)
    assert np.allclose(dxc, dxn, rtol=1e-12, atol=1e-14)
    assert np.allclose(gc, gn, rtol=1e-12, atol=1e-14)
    assert compiled.mlp_backward(dy, x, h, mf, flat, gc, meta, False) is None


def _gru_setup(m=7, d=6):
    xm = RNG.standard_normal((m, d))
    h = RNG.standard_normal((m, d))
    sizes = [d * d, d * d, d, d * d, d * d, d, d * d, d * d, d, d]
    flat = RNG.standard_normal(sum(sizes))
    offs = np.cumsum([0] + sizes)[:-1]
    meta = np.array([d, *offs], dtype=np.intp)
    return xm, h, flat, meta


def test_gru_matches():
    xm, h, flat, meta = _gru_setup()
    outc = compiled.gru_forward(xm, h, flat, meta, True)
    outn = NB.gru_forward(xm, h, flat, meta, True)
    for a, b in zip(outc, outn):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-14)
    hnew, r, zg, c, a = outc
    dh_new = RNG.standard_normal(hnew.shape)
    gc = np.zeros_like(flat)
    gn = np.zeros_like(flat)
    dxc, dhc = compiled.gru_backward(dh_new, xm, h, r, zg, c, a, flat, gc, meta)
    dxn, dhn = NB.gru_backward(dh_new, xm, h, r, zg, c, a, flat, gn, meta)
    assert np.allclose(dxc, dxn, rtol=1e-12, atol=1e-14)
    assert np.allclose(dhc, dhn, rtol=1e-12, atol=1e-14)
    assert np.allclose(gc, gn, rtol=1e-12, atol=1e-14)


def _edge_setup(n=6, d=4):
    z = RNG.standard_normal((n, d))
    recv, send = [], []
    for v in range(n):
        for w in range(n):
            if w != v and RNG.random() < 0.5:
                recv.append(v)
                send.append(w)
    if not recv:
        recv, send = [0], [1]
    recv = np.array(recv, dtype=np.intp)
    send = np.array(send, dtype=np.intp)
    order = np.lexsort((send, recv))
    recv, send = recv[order], send[order]
    seg = np.searchsorted(recv, np.arange(n + 1)).astype(np.intp)
    return z, recv, send, seg


def test_edge_plumbing_matches():
    z, recv, send, seg = _edge_setup()
    assert np.array_equal(compiled.edge_concat(z, recv, send), NB.edge_concat(z, recv, send))
    assert np.array_equal(compiled.gather_rows(z, send), NB.gather_rows(z, send))
    assert np.array_equal(compiled.concat_cols(z, z * 2), NB.concat_cols(z, z * 2))

    dP = RNG.standard_normal((recv.size, 2 * z.shape[1]))
    dz1 = np.zeros_like(z)
    dz2 = np.zeros_like(z)
    compiled.edge_concat_backward(dP, recv, send, dz1)
    NB.edge_concat_backward(dP, recv, send, dz2)
    assert np.allclose(dz1, dz2, rtol=1e-12, atol=1e-14)

    dM = RNG.standard_normal(z.shape)
    dz1[:] = 0
    dz2[:] = 0
    compiled.scatter_rows_add(dM, recv, send, dz1)
    NB.scatter_rows_add(dM, recv, send, dz2)
    assert np.allclose(dz1, dz2, rtol=1e-12, atol=1e-14)


def test_scatter_sum_bitwise_identical_across_backends():
    z, recv, send, seg = _edge_setup(n=8, d=5)
    msg = RNG.standard_normal((recv.size, 5))
    assert np.array_equal(compiled.scatter_sum(msg, seg, 8), NB.scatter_sum(msg, seg, 8))
    assert np.array_equal(compiled.neighbor_sum(z, send, seg, 8),
                          NB.neighbor_sum(z, send, seg, 8))


def test_scatter_sum_is_order_canonical():
    # permuting messages within a receiver's segment must not change the sum
    z, recv, send, seg = _edge_setup(n=8, d=3)
    msg = RNG.standard_normal((recv.size, 3))
    base = compiled.scatter_sum(msg, seg, 8)
    shuffled = msg.copy()
    for v in range(8):
        s, e = int(seg[v]), int(seg[v + 1])
        idx = np.arange(s, e)
        RNG.shuffle(idx)
        shuffled[s:e] = msg[idx]
    assert np.array_equal(compiled.scatter_sum(shuffled, seg, 8), base)
    assert np.array_equal(NB.scatter_sum(shuffled, seg, 8), base)


def test_empty_graph_paths():
    empty_idx = np.zeros(0, dtype=np.intp)
    seg = np.zeros(4, dtype=np.intp)
    z = RNG.standard_normal((3, 4))
    for mod in (compiled, NB):
        out = mod.neighbor_sum(z, empty_idx, seg, 3)
        assert out.shape == (3, 4) and not out.any()
        out = mod.scatter_sum(np.zeros((0, 4)), seg, 3)
        assert out.shape == (3, 4) and not out.any()


def test_backend_selection_roundtrip():
    assert backend.name() in backend.available()
    prev = backend.use("numpy")
    assert backend.name() == "numpy"
    backend.use(prev.NAME)
    with pytest.raises(ValueError):
        backend.use("no_such_backend")


def test_compiled_matmul_is_row_permutation_stable():
    # the property the numpy BLAS path cannot give us
    x, flat, meta = _mlp_setup(m=40)
    y, _, _ = compiled.mlp_forward(x, flat, meta, None, False)
    p = RNG.permutation(40)
    yp, _, _ = compiled.mlp_forward(np.ascontiguousarray(x[p]), flat, meta, None, False)
    assert np.array_equal(y[p], yp)
