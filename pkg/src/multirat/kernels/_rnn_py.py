"""Pure-numpy recurrent sequence kernels (fallback backend).

Shared semantics with the compiled backend:

    h[t] = valid[t] * tanh(x[t] @ wx + h[t-1] @ wh + b) + (1 - valid[t]) * h[t-1]

with h[-1] = 0. ``valid`` holds {0,1} per (batch, step); padded steps carry
the previous state through unchanged, so right-padded batches reproduce
per-document results exactly.
"""

import numpy as np


def rnn_forward(x, valid, wx, wh, b):
    batch, steps, dim = x.shape
    hidden = wh.shape[0]
    xw = (x.reshape(batch * steps, dim) @ wx).reshape(batch, steps, hidden) + b
    hs = np.empty((batch, steps, hidden))
    h = np.zeros((batch, hidden))
    for t in range(steps):
        v = valid[:, t : t + 1]
        h = v * np.tanh(xw[:, t] + h @ wh) + (1.0 - v) * h
        hs[:, t] = h
    return hs


def rnn_backward(x, valid, wx, wh, hs, dhs):
    batch, steps, dim = x.shape
    hidden = wh.shape[0]
    da_all = np.empty((batch, steps, hidden))
    dwh = np.zeros_like(wh)
    dcarry = np.zeros((batch, hidden))
    wh_t = wh.T
    for t in range(steps - 1, -1, -1):
        v = valid[:, t : t + 1]
        dh = dhs[:, t] + dcarry
        da = dh * v * (1.0 - hs[:, t] ** 2)
        da_all[:, t] = da
        if t > 0:
            dwh += hs[:, t - 1].T @ da
        dcarry = da @ wh_t + dh * (1.0 - v)
    flat = da_all.reshape(batch * steps, hidden)
    dx = (flat @ wx.T).reshape(batch, steps, dim)
    dwx = x.reshape(batch * steps, dim).T @ flat
    db = flat.sum(axis=0)
    return dx, dwx, dwh, db
