"""Pure-numpy recurrent kernels.

Gate layout along the last axis is ``[input | forget | output | candidate]``,
each block of width ``hidden``.  The expensive input projections are done by
the caller with one big GEMM; these kernels only run the sequential part.
"""

import numpy as np


def _sigmoid(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def lstm_seq_forward(a_in, w_hid, h0, c0):
    """Run an LSTM layer over a batch of sequences.

    a_in:  [B, T, 4H] input projection plus bias, per frame
    w_hid: [H, 4H] recurrent weights
    h0,c0: [B, H] initial states

    Returns (gates, c_seq, h_seq) where gates holds post-nonlinearity
    i, f, o, g values needed by the backward pass.
    """
    B, T, G = a_in.shape
    H = G // 4
    gates = np.empty_like(a_in)
    c_seq = np.empty((B, T, H), dtype=a_in.dtype)
    h_seq = np.empty((B, T, H), dtype=a_in.dtype)
    h = h0
    c = c0
    for t in range(T):
        a = a_in[:, t, :] + h @ w_hid
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H : 2 * H])
        o = _sigmoid(a[:, 2 * H : 3 * H])
        g = np.tanh(a[:, 3 * H :])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[:, t, :H] = i
        gates[:, t, H : 2 * H] = f
        gates[:, t, 2 * H : 3 * H] = o
        gates[:, t, 3 * H :] = g
        c_seq[:, t, :] = c
        h_seq[:, t, :] = h
    return gates, c_seq, h_seq


def lstm_seq_backward(gates, c_seq, c0, w_hid_t, dh_out):
    """Reverse-mode pass matching :func:`lstm_seq_forward`.

    w_hid_t: [4H, H] transpose of the recurrent weights (contiguous)
    dh_out:  [B, T, H] loss gradient w.r.t. every h_t

    Returns d_a [B, T, 4H], the gradient w.r.t. the gate preactivations;
    weight/bias/input gradients are GEMMs the caller performs from it.
    """
    B, T, H = c_seq.shape
    d_a = np.empty_like(gates)
    dh_rec = np.zeros((B, H), dtype=gates.dtype)
    dc_rec = np.zeros((B, H), dtype=gates.dtype)
    for t in range(T - 1, -1, -1):
        i = gates[:, t, :H]
        f = gates[:, t, H : 2 * H]
        o = gates[:, t, 2 * H : 3 * H]
        g = gates[:, t, 3 * H :]
        tc = np.tanh(c_seq[:, t, :])
        dh = dh_out[:, t, :] + dh_rec
        dc = dc_rec + dh * o * (1.0 - tc * tc)
        c_prev = c_seq[:, t - 1, :] if t > 0 else c0
        d_a[:, t, :H] = dc * g * i * (1.0 - i)
        d_a[:, t, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        d_a[:, t, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
        d_a[:, t, 3 * H :] = dc * i * (1.0 - g * g)
        dh_rec = d_a[:, t, :] @ w_hid_t
        dc_rec = dc * f
    return d_a


def lstm_step(a, h, c, w_hid, h_out, c_out):
    """Single-frame LSTM update (streaming path).

    a: [4H] input projection plus bias for this frame
    h, c: [H] previous states; h_out, c_out: [H] buffers written in place.
    """
    H = h.shape[0]
    a = a + h @ w_hid
    i = _sigmoid(a[:H])
    f = _sigmoid(a[H : 2 * H])
    o = _sigmoid(a[2 * H : 3 * H])
    g = np.tanh(a[3 * H :])
    c_out[:] = f * c + i * g
    h_out[:] = o * np.tanh(c_out)
