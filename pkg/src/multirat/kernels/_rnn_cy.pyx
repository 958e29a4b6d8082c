# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled recurrent sequence kernels.

Same contract as ``_rnn_py``: gated tanh recurrence over a right-padded
batch, h[-1] = 0. The time-step loop runs in C with BLAS matmuls; the
step-invariant input projection is one large GEMM done up front.
"""

import numpy as np

from libc.math cimport tanh
from scipy.linalg.cython_blas cimport dgemm


cdef void _gemm_rm(double* a, double* b, double* c,
                   int p, int r, int q, double beta) noexcept nogil:
    # Row-major C (p x q) = A (p x r) @ B (r x q) + beta * C.
    # Implemented as the column-major product C^T = B^T @ A^T.
    cdef char no = b'N'
    cdef double alpha = 1.0
    dgemm(&no, &no, &q, &p, &r, &alpha, b, &q, a, &r, &beta, c, &q)


cdef void _gemm_at_b(double* p_mat, int ldp, double* q_mat, double* c,
                     int brows, int h, double beta) noexcept nogil:
    # Row-major C (h x h) = P^T @ Q + beta * C for P, Q of shape (brows x h).
    # ldp is the row stride of P in doubles (supports strided time slices).
    cdef char no = b'N'
    cdef char tr = b'T'
    cdef double alpha = 1.0
    dgemm(&no, &tr, &h, &h, &brows, &alpha, q_mat, &h, p_mat, &ldp, &beta, c, &h)


def rnn_forward(double[:, :, ::1] x, double[:, ::1] valid,
                double[:, ::1] wx, double[:, ::1] wh, double[::1] b):
    cdef int batch = x.shape[0]
    cdef int steps = x.shape[1]
    cdef int dim = x.shape[2]
    cdef int hidden = wh.shape[0]

    xw_np = np.dot(np.asarray(x).reshape(batch * steps, dim), np.asarray(wx))
    hs_np = np.empty((batch, steps, hidden))
    buf_np = np.empty((batch, hidden))
    h_np = np.zeros((batch, hidden))
    if batch == 0 or steps == 0:
        return hs_np

    cdef double[:, ::1] xw = xw_np.reshape(batch * steps, hidden)
    cdef double[:, :, ::1] hs = hs_np
    cdef double[:, ::1] buf = buf_np
    cdef double[:, ::1] h = h_np
    cdef int t, i, j
    cdef double v

    for t in range(steps):
        for i in range(batch):
            for j in range(hidden):
                buf[i, j] = xw[i * steps + t, j] + b[j]
        _gemm_rm(&h[0, 0], &wh[0, 0], &buf[0, 0], batch, hidden, hidden, 1.0)
        for i in range(batch):
            v = valid[i, t]
            for j in range(hidden):
                h[i, j] = v * tanh(buf[i, j]) + (1.0 - v) * h[i, j]
                hs[i, t, j] = h[i, j]
    return hs_np


def rnn_backward(double[:, :, ::1] x, double[:, ::1] valid,
                 double[:, ::1] wx, double[:, ::1] wh,
                 double[:, :, ::1] hs, double[:, :, ::1] dhs):
    cdef int batch = x.shape[0]
    cdef int steps = x.shape[1]
    cdef int dim = x.shape[2]
    cdef int hidden = wh.shape[0]

    da_np = np.empty((batch, steps, hidden))
    dwh_np = np.zeros((hidden, hidden))
    dcarry_np = np.zeros((batch, hidden))
    dbuf_np = np.empty((batch, hidden))
    tmp_np = np.empty((batch, hidden))
    wht_np = np.ascontiguousarray(np.asarray(wh).T)
    if batch == 0 or steps == 0:
        dx = np.zeros((batch, steps, dim))
        return dx, np.zeros((dim, hidden)), dwh_np, np.zeros(hidden)

    cdef double[:, :, ::1] da_all = da_np
    cdef double[:, ::1] dwh = dwh_np
    cdef double[:, ::1] dcarry = dcarry_np
    cdef double[:, ::1] dbuf = dbuf_np
    cdef double[:, ::1] tmp = tmp_np
    cdef double[:, ::1] wht = wht_np
    cdef int t, i, j
    cdef double v, dh, hval

    for t in range(steps - 1, -1, -1):
        for i in range(batch):
            v = valid[i, t]
            for j in range(hidden):
                dh = dhs[i, t, j] + dcarry[i, j]
                hval = hs[i, t, j]
                dbuf[i, j] = dh * v * (1.0 - hval * hval)
                da_all[i, t, j] = dbuf[i, j]
                # carry the pass-through part now; add the gemm part below
                dcarry[i, j] = dh * (1.0 - v)
        if t > 0:
            # dwh += h[t-1]^T @ da; h[t-1] is a strided (batch, hidden) slice
            _gemm_at_b(&hs[0, t - 1, 0], steps * hidden, &dbuf[0, 0],
                       &dwh[0, 0], batch, hidden, 1.0)
        _gemm_rm(&dbuf[0, 0], &wht[0, 0], &tmp[0, 0], batch, hidden, hidden, 0.0)
        for i in range(batch):
            for j in range(hidden):
                dcarry[i, j] += tmp[i, j]

    flat = da_np.reshape(batch * steps, hidden)
    x_np = np.asarray(x)
    dx = np.dot(flat, np.asarray(wx).T).reshape(batch, steps, dim)
    dwx = np.dot(x_np.reshape(batch * steps, dim).T, flat)
    db = flat.sum(axis=0)
    return dx, dwx, dwh_np, db
