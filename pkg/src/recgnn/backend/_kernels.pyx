# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the hot per-round message-passing math.

Same API as numpy_backend (see its docstring). Layer parameters arrive as
one flat vector plus a small offset table, so a call crosses the Python
boundary with a handful of buffers no matter how many weight tensors the
layer has. Two numerical properties are deliberate and load-bearing:

* matrix products accumulate in a fixed k-ascending order per output row,
  identical for every row, so outputs are bitwise stable under row
  permutation (numpy's BLAS is not);
* neighbor aggregation sums each receiver's incoming values per dimension
  in ascending value order, so the result depends only on the multiset of
  messages.

Together these make the model forward pass exactly equivariant under node
relabeling.
"""
from libc.math cimport exp, tanh
from libc.stdlib cimport free, malloc

import numpy as np

NAME = "compiled"


cdef inline double _sigmoid(double v) noexcept nogil:
    return 1.0 / (1.0 + exp(-v))


cdef double* _scratch(Py_ssize_t count) except NULL:
    cdef double* buf = <double*> malloc(count * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    return buf


# ---------------------------------------------------------------------------
# row-stable dense cores (row-major, pointer based)


cdef void _mm_set_bias(const double* A, Py_ssize_t m, Py_ssize_t kk,
                       const double* W, Py_ssize_t n, const double* b,
                       double* C) noexcept nogil:
    # C = A @ W + b, k ascending per row
    cdef Py_ssize_t i, j, k
    cdef double a
    cdef const double* Ai
    cdef double* Ci
    for i in range(m):
        Ai = A + i * kk
        Ci = C + i * n
        for j in range(n):
            Ci[j] = b[j]
        for k in range(kk):
            a = Ai[k]
            for j in range(n):
                Ci[j] += a * W[k * n + j]


cdef void _mm_add(const double* A, Py_ssize_t m, Py_ssize_t kk,
                  const double* W, Py_ssize_t n, double* C) noexcept nogil:
    # C += A @ W
    cdef Py_ssize_t i, j, k
    cdef double a
    cdef const double* Ai
    cdef double* Ci
    for i in range(m):
        Ai = A + i * kk
        Ci = C + i * n
        for k in range(kk):
            a = Ai[k]
            for j in range(n):
                Ci[j] += a * W[k * n + j]


cdef void _mm_nt(const double* A, Py_ssize_t m, Py_ssize_t kk,
                 const double* W, Py_ssize_t n, double* C,
                 bint accumulate) noexcept nogil:
    # C (+)= A @ W.T with A (m, kk), W (n, kk), C (m, n)
    cdef Py_ssize_t i, j, k
    cdef double acc
    cdef const double* Ai
    cdef const double* Wj
    for i in range(m):
        Ai = A + i * kk
        for j in range(n):
            Wj = W + j * kk
            acc = 0.0
            for k in range(kk):
                acc += Ai[k] * Wj[k]
            if accumulate:
                C[i * n + j] += acc
            else:
                C[i * n + j] = acc


cdef void _mm_tn_add(const double* A, const double* B, Py_ssize_t m,
                     Py_ssize_t p, Py_ssize_t q, double* C) noexcept nogil:
    # C += A.T @ B with A (m, p), B (m, q), C (p, q)
    cdef Py_ssize_t i, a, b
    cdef double v
    cdef const double* Bi
    cdef double* Ca
    for i in range(m):
        Bi = B + i * q
        for a in range(p):
            v = A[i * p + a]
            Ca = C + a * q
            for b in range(q):
                Ca[b] += v * Bi[b]


cdef void _colsum_add(const double* A, Py_ssize_t m, Py_ssize_t n,
                      double* g) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(m):
        for j in range(n):
            g[j] += A[i * n + j]


cdef inline const double* _ptr2(const double[:, ::1] v) noexcept nogil:
    return &v[0, 0] if v.shape[0] * v.shape[1] else NULL


cdef inline double* _wptr2(double[:, ::1] v) noexcept nogil:
    return &v[0, 0] if v.shape[0] * v.shape[1] else NULL


# ---------------------------------------------------------------------------
# one-hidden-layer perceptron
#
# meta layout: [in_dim, hidden, out_dim, off_W1, off_b1, off_W2, off_b2]


def mlp_forward(const double[:, ::1] x, const double[::1] pflat,
                const Py_ssize_t[::1] meta, dropmul=None, bint need_cache=False):
    cdef Py_ssize_t m = x.shape[0], ind = meta[0], hid = meta[1], out = meta[2]
    cdef const double* W1 = &pflat[meta[3]]
    cdef const double* b1 = &pflat[meta[4]]
    cdef const double* W2 = &pflat[meta[5]]
    cdef const double* b2 = &pflat[meta[6]]
    hdrop_arr = np.empty((m, hid))
    y_arr = np.empty((m, out))
    mfac_arr = np.empty((m, hid)) if need_cache else None
    cdef double[:, ::1] hdrop = hdrop_arr
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] mfac
    cdef const double[:, ::1] dm
    cdef double* hd
    cdef double pre, f
    cdef Py_ssize_t i, j
    if m == 0:
        return y_arr, (hdrop_arr if need_cache else None), mfac_arr
    hd = &hdrop[0, 0]
    _mm_set_bias(_ptr2(x), m, ind, W1, hid, b1, hd)  # pre-activation, rectified below
    if need_cache:
        mfac = mfac_arr
        if dropmul is None:
            for i in range(m):
                for j in range(hid):
                    if hdrop[i, j] > 0.0:
                        mfac[i, j] = 1.0
                    else:
                        hdrop[i, j] = 0.0
                        mfac[i, j] = 0.0
        else:
            dm = dropmul
            for i in range(m):
                for j in range(hid):
                    pre = hdrop[i, j]
                    if pre > 0.0:
                        f = dm[i, j]
                        hdrop[i, j] = pre * f
                        mfac[i, j] = f
                    else:
                        hdrop[i, j] = 0.0
                        mfac[i, j] = 0.0
    else:
        if dropmul is None:
            for i in range(m):
                for j in range(hid):
                    if hdrop[i, j] <= 0.0:
                        hdrop[i, j] = 0.0
        else:
            dm = dropmul
            for i in range(m):
                for j in range(hid):
                    pre = hdrop[i, j]
                    hdrop[i, j] = pre * dm[i, j] if pre > 0.0 else 0.0
    _mm_set_bias(hd, m, hid, W2, out, b2, &y[0, 0])
    if need_cache:
        return y_arr, hdrop_arr, mfac_arr
    return y_arr, None, None


def mlp_backward(const double[:, ::1] dy, const double[:, ::1] x,
                 const double[:, ::1] hdrop, const double[:, ::1] mfac,
                 const double[::1] pflat, double[::1] gflat,
                 const Py_ssize_t[::1] meta, bint need_dx=True):
    cdef Py_ssize_t m = dy.shape[0], ind = meta[0], hid = meta[1], out = meta[2]
    cdef const double* W1 = &pflat[meta[3]]
    cdef const double* W2 = &pflat[meta[5]]
    cdef double* gW1 = &gflat[meta[3]]
    cdef double* gb1 = &gflat[meta[4]]
    cdef double* gW2 = &gflat[meta[5]]
    cdef double* gb2 = &gflat[meta[6]]
    dh_arr = np.empty((m, hid))
    cdef double[:, ::1] dh = dh_arr
    cdef Py_ssize_t i, j
    dx_arr = np.empty((m, ind)) if need_dx else None
    cdef double[:, ::1] dx
    if m == 0:
        return dx_arr
    _mm_tn_add(_ptr2(hdrop), _ptr2(dy), m, hid, out, gW2)
    _colsum_add(_ptr2(dy), m, out, gb2)
    _mm_nt(_ptr2(dy), m, out, W2, hid, &dh[0, 0], False)
    for i in range(m):
        for j in range(hid):
            dh[i, j] *= mfac[i, j]
    _mm_tn_add(_ptr2(x), &dh[0, 0], m, ind, hid, gW1)
    _colsum_add(&dh[0, 0], m, hid, gb1)
    if not need_dx:
        return None
    dx = dx_arr
    _mm_nt(&dh[0, 0], m, hid, W1, ind, &dx[0, 0], False)
    return dx_arr


# ---------------------------------------------------------------------------
# gated recurrent cell
#
# meta layout: [d, off_Wr, off_Ur, off_br, off_Wz, off_Uz, off_bz,
#               off_Wn, off_Un, off_bni, off_bnh]


def gru_forward(const double[:, ::1] xm, const double[:, ::1] h,
                const double[::1] pflat, const Py_ssize_t[::1] meta,
                bint need_cache=False):
    cdef Py_ssize_t m = xm.shape[0], d = meta[0], i, j
    r_arr = np.empty((m, d))
    zg_arr = np.empty((m, d))
    a_arr = np.empty((m, d))
    c_arr = np.empty((m, d))
    hnew_arr = np.empty((m, d))
    cdef double[:, ::1] r = r_arr, zg = zg_arr, a = a_arr, c = c_arr, hnew = hnew_arr
    cdef const double* xp
    cdef const double* hp
    if m == 0:
        return hnew_arr, r_arr, zg_arr, c_arr, a_arr
    xp = &xm[0, 0]
    hp = &h[0, 0]
    _mm_set_bias(xp, m, d, &pflat[meta[1]], d, &pflat[meta[3]], &r[0, 0])
    _mm_add(hp, m, d, &pflat[meta[2]], d, &r[0, 0])
    _mm_set_bias(xp, m, d, &pflat[meta[4]], d, &pflat[meta[6]], &zg[0, 0])
    _mm_add(hp, m, d, &pflat[meta[5]], d, &zg[0, 0])
    _mm_set_bias(hp, m, d, &pflat[meta[8]], d, &pflat[meta[10]], &a[0, 0])
    _mm_set_bias(xp, m, d, &pflat[meta[7]], d, &pflat[meta[9]], &c[0, 0])
    for i in range(m):
        for j in range(d):
            r[i, j] = _sigmoid(r[i, j])
            zg[i, j] = _sigmoid(zg[i, j])
            c[i, j] = tanh(c[i, j] + r[i, j] * a[i, j])
            hnew[i, j] = (1.0 - zg[i, j]) * c[i, j] + zg[i, j] * h[i, j]
    return hnew_arr, r_arr, zg_arr, c_arr, a_arr


def gru_backward(const double[:, ::1] dh_new, const double[:, ::1] xm,
                 const double[:, ::1] h, const double[:, ::1] r,
                 const double[:, ::1] zg, const double[:, ::1] c,
                 const double[:, ::1] a, const double[::1] pflat,
                 double[::1] gflat, const Py_ssize_t[::1] meta):
    cdef Py_ssize_t m = dh_new.shape[0], d = meta[0], i, j, base
    dxm_arr = np.empty((m, d))
    dh_arr = np.empty((m, d))
    cdef double[:, ::1] dxm = dxm_arr, dh = dh_arr
    cdef double g, dc, dzg, dr, dpc_v
    if m == 0:
        return dxm_arr, dh_arr
    cdef double* work = _scratch(4 * m * d)
    cdef double* dpc = work
    cdef double* da = work + m * d
    cdef double* dpz = work + 2 * m * d
    cdef double* dpr = work + 3 * m * d
    cdef const double* xp
    cdef const double* hp
    try:
        for i in range(m):
            base = i * d
            for j in range(d):
                g = dh_new[i, j]
                dzg = g * (h[i, j] - c[i, j])
                dc = g * (1.0 - zg[i, j])
                dh[i, j] = g * zg[i, j]
                dpc_v = dc * (1.0 - c[i, j] * c[i, j])
                dpc[base + j] = dpc_v
                da[base + j] = dpc_v * r[i, j]
                dr = dpc_v * a[i, j]
                dpz[base + j] = dzg * zg[i, j] * (1.0 - zg[i, j])
                dpr[base + j] = dr * r[i, j] * (1.0 - r[i, j])
        xp = _ptr2(xm)
        hp = _ptr2(h)
        _mm_tn_add(xp, dpc, m, d, d, &gflat[meta[7]])   # Wn
        _colsum_add(dpc, m, d, &gflat[meta[9]])         # bni
        _mm_nt(dpc, m, d, &pflat[meta[7]], d, &dxm[0, 0], False)
        _mm_tn_add(hp, da, m, d, d, &gflat[meta[8]])    # Un
        _colsum_add(da, m, d, &gflat[meta[10]])         # bnh
        _mm_nt(da, m, d, &pflat[meta[8]], d, &dh[0, 0], True)
        _mm_tn_add(xp, dpz, m, d, d, &gflat[meta[4]])   # Wz
        _mm_tn_add(hp, dpz, m, d, d, &gflat[meta[5]])   # Uz
        _colsum_add(dpz, m, d, &gflat[meta[6]])         # bz
        _mm_nt(dpz, m, d, &pflat[meta[4]], d, &dxm[0, 0], True)
        _mm_nt(dpz, m, d, &pflat[meta[5]], d, &dh[0, 0], True)
        _mm_tn_add(xp, dpr, m, d, d, &gflat[meta[1]])   # Wr
        _mm_tn_add(hp, dpr, m, d, d, &gflat[meta[2]])   # Ur
        _colsum_add(dpr, m, d, &gflat[meta[3]])         # br
        _mm_nt(dpr, m, d, &pflat[meta[1]], d, &dxm[0, 0], True)
        _mm_nt(dpr, m, d, &pflat[meta[2]], d, &dh[0, 0], True)
    finally:
        free(work)
    return dxm_arr, dh_arr


# ---------------------------------------------------------------------------
# message-passing plumbing


def concat_cols(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], da = a.shape[1], db = b.shape[1], i, j
    out_arr = np.empty((m, da + db))
    cdef double[:, ::1] out = out_arr
    for i in range(m):
        for j in range(da):
            out[i, j] = a[i, j]
        for j in range(db):
            out[i, da + j] = b[i, j]
    return out_arr


def edge_concat(const double[:, ::1] z, const Py_ssize_t[::1] recv, const Py_ssize_t[::1] send):
    cdef Py_ssize_t E = recv.shape[0], d = z.shape[1], e, j, rr, ss
    P_arr = np.empty((E, 2 * d))
    cdef double[:, ::1] P = P_arr
    for e in range(E):
        rr = recv[e]
        ss = send[e]
        for j in range(d):
            P[e, j] = z[rr, j]
            P[e, d + j] = z[ss, j]
    return P_arr


def edge_concat_backward(const double[:, ::1] dP, const Py_ssize_t[::1] recv,
                         const Py_ssize_t[::1] send, double[:, ::1] dz):
    cdef Py_ssize_t E = recv.shape[0], d = dz.shape[1], e, j, rr, ss
    for e in range(E):
        rr = recv[e]
        ss = send[e]
        for j in range(d):
            dz[rr, j] += dP[e, j]
            dz[ss, j] += dP[e, d + j]


def gather_rows(const double[:, ::1] m, const Py_ssize_t[::1] idx):
    cdef Py_ssize_t E = idx.shape[0], d = m.shape[1], e, j, s
    out_arr = np.empty((E, d))
    cdef double[:, ::1] out = out_arr
    for e in range(E):
        s = idx[e]
        for j in range(d):
            out[e, j] = m[s, j]
    return out_arr


def scatter_rows_add(const double[:, ::1] dM, const Py_ssize_t[::1] recv,
                     const Py_ssize_t[::1] send, double[:, ::1] dz):
    cdef Py_ssize_t E = recv.shape[0], d = dz.shape[1], e, j, rr, ss
    for e in range(E):
        rr = recv[e]
        ss = send[e]
        for j in range(d):
            dz[ss, j] += dM[rr, j]


cdef inline double _sorted_sum(double* buf, Py_ssize_t k) noexcept nogil:
    # ascending insertion sort, then sequential sum
    cdef Py_ssize_t t, u
    cdef double val, acc
    for t in range(1, k):
        val = buf[t]
        u = t - 1
        while u >= 0 and buf[u] > val:
            buf[u + 1] = buf[u]
            u -= 1
        buf[u + 1] = val
    acc = 0.0
    for t in range(k):
        acc += buf[t]
    return acc


cdef Py_ssize_t _max_segment(const Py_ssize_t[::1] seg, Py_ssize_t num_nodes) noexcept nogil:
    cdef Py_ssize_t v, best = 0
    for v in range(num_nodes):
        if seg[v + 1] - seg[v] > best:
            best = seg[v + 1] - seg[v]
    return best


def scatter_sum(const double[:, ::1] msg, const Py_ssize_t[::1] seg, Py_ssize_t num_nodes):
    """Value-canonical per-receiver sum; segment v owns rows seg[v]:seg[v+1]."""
    cdef Py_ssize_t E = msg.shape[0], d = msg.shape[1], v, j, t, s, k
    out_arr = np.zeros((num_nodes, d))
    if E == 0:
        return out_arr
    cdef double[:, ::1] out = out_arr
    cdef double* buf = _scratch(_max_segment(seg, num_nodes))
    try:
        for v in range(num_nodes):
            s = seg[v]
            k = seg[v + 1] - s
            if k == 0:
                continue
            for j in range(d):
                for t in range(k):
                    buf[t] = msg[s + t, j]
                out[v, j] = _sorted_sum(buf, k)
    finally:
        free(buf)
    return out_arr


def neighbor_sum(const double[:, ::1] z, const Py_ssize_t[::1] send,
                 const Py_ssize_t[::1] seg, Py_ssize_t num_nodes):
    """Value-canonical sum of sender rows per receiver (no edge transform)."""
    cdef Py_ssize_t E = send.shape[0], d = z.shape[1], v, j, t, s, k
    out_arr = np.zeros((num_nodes, d))
    if E == 0:
        return out_arr
    cdef double[:, ::1] out = out_arr
    cdef double* buf = _scratch(_max_segment(seg, num_nodes))
    try:
        for v in range(num_nodes):
            s = seg[v]
            k = seg[v + 1] - s
            if k == 0:
                continue
            for j in range(d):
                for t in range(k):
                    buf[t] = z[send[s + t], j]
                out[v, j] = _sorted_sum(buf, k)
    finally:
        free(buf)
    return out_arr
