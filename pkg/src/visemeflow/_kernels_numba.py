"""Numba kernels mirroring :mod:`visemeflow._kernels_numpy`.

Same signatures and gate layout; the elementwise gate math is fused into
explicit loops while the recurrent matmul stays on BLAS via ``np.dot``.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def lstm_seq_forward(a_in, w_hid, h0, c0):
    B, T, G = a_in.shape
    H = G // 4
    gates = np.empty_like(a_in)
    c_seq = np.empty((B, T, H), dtype=a_in.dtype)
    h_seq = np.empty((B, T, H), dtype=a_in.dtype)
    h = np.ascontiguousarray(h0).copy()
    c = np.ascontiguousarray(c0).copy()
    for t in range(T):
        rec = np.dot(h, w_hid)
        for b in range(B):
            for u in range(H):
                ai = a_in[b, t, u] + rec[b, u]
                af = a_in[b, t, H + u] + rec[b, H + u]
                ao = a_in[b, t, 2 * H + u] + rec[b, 2 * H + u]
                ag = a_in[b, t, 3 * H + u] + rec[b, 3 * H + u]
                i = 1.0 / (1.0 + math.exp(-ai))
                f = 1.0 / (1.0 + math.exp(-af))
                o = 1.0 / (1.0 + math.exp(-ao))
                g = math.tanh(ag)
                cv = f * c[b, u] + i * g
                hv = o * math.tanh(cv)
                c[b, u] = cv
                h[b, u] = hv
                gates[b, t, u] = i
                gates[b, t, H + u] = f
                gates[b, t, 2 * H + u] = o
                gates[b, t, 3 * H + u] = g
                c_seq[b, t, u] = cv
                h_seq[b, t, u] = hv
    return gates, c_seq, h_seq


@njit(cache=True)
def lstm_seq_backward(gates, c_seq, c0, w_hid_t, dh_out):
    B, T, H = c_seq.shape
    d_a = np.empty_like(gates)
    dh_rec = np.zeros((B, H), dtype=gates.dtype)
    dc_rec = np.zeros((B, H), dtype=gates.dtype)
    d_a_t = np.empty((B, 4 * H), dtype=gates.dtype)
    for t in range(T - 1, -1, -1):
        for b in range(B):
            for u in range(H):
                i = gates[b, t, u]
                f = gates[b, t, H + u]
                o = gates[b, t, 2 * H + u]
                g = gates[b, t, 3 * H + u]
                tc = math.tanh(c_seq[b, t, u])
                dh = dh_out[b, t, u] + dh_rec[b, u]
                dc = dc_rec[b, u] + dh * o * (1.0 - tc * tc)
                c_prev = c_seq[b, t - 1, u] if t > 0 else c0[b, u]
                d_a_t[b, u] = dc * g * i * (1.0 - i)
                d_a_t[b, H + u] = dc * c_prev * f * (1.0 - f)
                d_a_t[b, 2 * H + u] = dh * tc * o * (1.0 - o)
                d_a_t[b, 3 * H + u] = dc * i * (1.0 - g * g)
                dc_rec[b, u] = dc * f
        dh_rec = np.dot(d_a_t, w_hid_t)
        d_a[:, t, :] = d_a_t
    return d_a


@njit(cache=True)
def lstm_step(a, h, c, w_hid, h_out, c_out):
    H = h.shape[0]
    rec = np.dot(h, w_hid)
    for u in range(H):
        i = 1.0 / (1.0 + math.exp(-(a[u] + rec[u])))
        f = 1.0 / (1.0 + math.exp(-(a[H + u] + rec[H + u])))
        o = 1.0 / (1.0 + math.exp(-(a[2 * H + u] + rec[2 * H + u])))
        g = math.tanh(a[3 * H + u] + rec[3 * H + u])
        cv = f * c[u] + i * g
        c_out[u] = cv
        h_out[u] = o * math.tanh(cv)
