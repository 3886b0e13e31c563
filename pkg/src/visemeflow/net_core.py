"""Dense/LSTM layers with reverse-mode gradients and SGD-momentum updates.

This is not a general autodiff: only the fixed layer types used by the
network are implemented.  Two forward paths exist on purpose:

* a per-frame stepping path (:func:`stack_step`) used by batch inference
  and streaming alike, so both produce bit-identical outputs, and
* a batched sequence path (``*_batch``) used for training, where the
  input projections collapse into large GEMMs.

Parameters are float32 by default; float64 is used for gradient checks.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeError

HIDDEN_SIZE = 256


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class DenseParams:
    weight: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


class LstmLayerParams:
    """One LSTM layer.

    Storage is a fused matrix ``[in_dim + hidden, 4 * hidden]`` with gate
    columns ordered input | forget | output | candidate; the per-gate
    weight matrices of shape ``[hidden, in_dim + hidden]`` are exposed as
    transposed views into it.
    """

    def __init__(self, fused: np.ndarray, bias: np.ndarray, in_dim: int):
        hidden = fused.shape[1] // 4
        if fused.shape[0] != in_dim + hidden:
            raise ShapeError(
                f"fused weight rows {fused.shape[0]} != in_dim+hidden {in_dim + hidden}"
            )
        if bias.shape != (4 * hidden,):
            raise ShapeError(f"bias shape {bias.shape} != (4*hidden,)")
        self.fused = fused
        self.bias = bias
        self.in_dim = in_dim
        self.hidden = hidden

    def _gate(self, k: int) -> np.ndarray:
        h = self.hidden
        return self.fused[:, k * h : (k + 1) * h].T

    @property
    def w_input(self) -> np.ndarray:
        return self._gate(0)

    @property
    def w_forget(self) -> np.ndarray:
        return self._gate(1)

    @property
    def w_output(self) -> np.ndarray:
        return self._gate(2)

    @property
    def w_candidate(self) -> np.ndarray:
        return self._gate(3)

    @property
    def w_in(self) -> np.ndarray:
        """Input projection block [in_dim, 4*hidden] (contiguous)."""
        return self.fused[: self.in_dim]

    @property
    def w_hid(self) -> np.ndarray:
        """Recurrent block [hidden, 4*hidden] (contiguous)."""
        return self.fused[self.in_dim :]


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray


def zero_state(hidden: int, dtype=np.float32) -> LstmState:
    return LstmState(np.zeros(hidden, dtype=dtype), np.zeros(hidden, dtype=dtype))


# ---------------------------------------------------------------------------
# initialization


def init_dense(rng: np.random.Generator, in_dim: int, out_dim: int, dtype=np.float32) -> DenseParams:
    s = np.sqrt(6.0 / (in_dim + out_dim))
    w = rng.uniform(-s, s, size=(out_dim, in_dim)).astype(dtype)
    return DenseParams(w, np.zeros(out_dim, dtype=dtype))


def init_lstm_layer(
    rng: np.random.Generator, in_dim: int, hidden: int = HIDDEN_SIZE, dtype=np.float32
) -> LstmLayerParams:
    # Per-gate fan: in = in_dim + hidden, out = hidden.
    s = np.sqrt(6.0 / (in_dim + 2 * hidden))
    fused = rng.uniform(-s, s, size=(in_dim + hidden, 4 * hidden)).astype(dtype)
    bias = np.zeros(4 * hidden, dtype=dtype)
    bias[hidden : 2 * hidden] = 1.0  # forget-gate bias
    return LstmLayerParams(fused, bias, in_dim)


# ---------------------------------------------------------------------------
# stepping path (inference / streaming)


def lstm_cell_forward(x: np.ndarray, state: LstmState, p: LstmLayerParams) -> LstmState:
    """One LSTM step on a single frame; pure function of its inputs."""
    if x.shape != (p.in_dim,):
        raise ShapeError(f"input shape {x.shape} != ({p.in_dim},)")
    if state.h.shape != (p.hidden,) or state.c.shape != (p.hidden,):
        raise ShapeError("state shape does not match layer hidden size")
    a = x @ p.w_in + p.bias
    h_out = np.empty(p.hidden, dtype=x.dtype)
    c_out = np.empty(p.hidden, dtype=x.dtype)
    kernels.lstm_step(a, state.h, state.c, p.w_hid, h_out, c_out)
    return LstmState(h_out, c_out)


def stack_step(layers, states, x: np.ndarray) -> np.ndarray:
    """Advance a stack of LSTM layers by one frame, mutating ``states``.

    ``states`` is a list of (h, c) array pairs, one per layer.
    """
    inp = x
    for p, (h, c) in zip(layers, states):
        a = inp @ p.w_in + p.bias
        kernels.lstm_step(a, h, c, p.w_hid, h, c)
        inp = h
    return inp


def lstm_stack_forward(contexts: np.ndarray, layers) -> np.ndarray:
    """Run a layer stack over one clip ([T, D] -> [T, hidden]).

    States start at zero and carry across frames; calling this per clip
    gives the per-clip state reset the model requires.
    """
    if contexts.ndim != 2 or contexts.shape[0] == 0:
        raise ShapeError("contexts must be a nonempty [T, D] array")
    dtype = contexts.dtype
    states = [
        (np.zeros(p.hidden, dtype=dtype), np.zeros(p.hidden, dtype=dtype)) for p in layers
    ]
    out = np.empty((contexts.shape[0], layers[-1].hidden), dtype=dtype)
    for t in range(contexts.shape[0]):
        out[t] = stack_step(layers, states, contexts[t])
    return out


# ---------------------------------------------------------------------------
# decoders

_HEADS = ("softmax", "linear", "sigmoid")


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def decoder_core_forward(h: np.ndarray, p1: DenseParams, p2: DenseParams):
    """FC + ReLU + FC on [..., in] inputs; returns pre-head output and cache."""
    if h.shape[-1] != p1.in_dim:
        raise ShapeError(f"decoder input dim {h.shape[-1]} != {p1.in_dim}")
    a1 = h @ p1.weight.T + p1.bias
    r = np.maximum(a1, 0.0)
    out = r @ p2.weight.T + p2.bias
    return out, (h, a1, r)


def decoder_core_backward(cache, p1: DenseParams, p2: DenseParams, d_out: np.ndarray):
    """Gradients of the FC+ReLU+FC core w.r.t. input and parameters.

    All leading axes of ``d_out`` are flattened for the weight GEMMs.
    """
    h, a1, r = cache
    k = d_out.shape[-1]
    d2 = d_out.reshape(-1, k)
    r2 = r.reshape(-1, r.shape[-1])
    h2 = h.reshape(-1, h.shape[-1])
    dr = d_out @ p2.weight
    da1 = dr * (a1 > 0)
    da2 = da1.reshape(-1, da1.shape[-1])
    grads = {
        "fc2.weight": d2.T @ r2,
        "fc2.bias": d2.sum(axis=0),
        "fc1.weight": da2.T @ h2,
        "fc1.bias": da2.sum(axis=0),
    }
    dh = da1 @ p1.weight
    return dh, grads


def decoder_forward(h: np.ndarray, p1: DenseParams, p2: DenseParams, head: str) -> np.ndarray:
    """Two-transform decoder with an output head (softmax/linear/sigmoid)."""
    if head not in _HEADS:
        raise ValueError(f"unknown head {head!r}")
    out, _ = decoder_core_forward(h, p1, p2)
    if head == "softmax":
        return softmax(out)
    if head == "sigmoid":
        return sigmoid(out)
    return out


# ---------------------------------------------------------------------------
# batched training path


def lstm_layer_forward_batch(x: np.ndarray, p: LstmLayerParams):
    """LSTM layer over [B, T, in_dim]; returns h_seq [B, T, hidden] and cache."""
    B, T, D = x.shape
    if D != p.in_dim:
        raise ShapeError(f"layer input dim {D} != {p.in_dim}")
    a = (x.reshape(B * T, D) @ p.w_in + p.bias).reshape(B, T, 4 * p.hidden)
    h0 = np.zeros((B, p.hidden), dtype=x.dtype)
    c0 = np.zeros((B, p.hidden), dtype=x.dtype)
    gates, c_seq, h_seq = kernels.lstm_seq_forward(a, np.ascontiguousarray(p.w_hid), h0, c0)
    return h_seq, (x, gates, c_seq, h_seq, c0, h0)


def lstm_layer_backward_batch(p: LstmLayerParams, cache, dh_out: np.ndarray):
    """Backward for one layer; returns (dx, {"fused", "bias"})."""
    x, gates, c_seq, h_seq, c0, h0 = cache
    B, T, D = x.shape
    H = p.hidden
    w_hid_t = np.ascontiguousarray(p.w_hid.T)
    d_a = kernels.lstm_seq_backward(gates, c_seq, c0, w_hid_t, np.ascontiguousarray(dh_out))
    d_a2 = d_a.reshape(B * T, 4 * H)
    h_prev = np.concatenate([h0[:, None, :], h_seq[:, :-1, :]], axis=1)
    d_fused = np.empty_like(p.fused)
    d_fused[:D] = x.reshape(B * T, D).T @ d_a2
    d_fused[D:] = h_prev.reshape(B * T, H).T @ d_a2
    d_bias = d_a2.sum(axis=0)
    dx = (d_a2 @ p.w_in.T).reshape(B, T, D)
    return dx, {"fused": d_fused, "bias": d_bias}


def lstm_stack_forward_batch(x: np.ndarray, layers):
    """Run a 3-layer stack over [B, T, D]; returns top h_seq and all caches."""
    caches = []
    h = x
    for p in layers:
        h, cache = lstm_layer_forward_batch(h, p)
        caches.append(cache)
    return h, caches


def lstm_stack_backward_batch(layers, caches, dh_top: np.ndarray):
    """Backward through a layer stack; returns (dx, per-layer grad dicts)."""
    grads = [None] * len(layers)
    d = dh_top
    for idx in range(len(layers) - 1, -1, -1):
        d, grads[idx] = lstm_layer_backward_batch(layers[idx], caches[idx], d)
    return d, grads


# ---------------------------------------------------------------------------
# optimizer


def sgd_momentum_step(params: dict, grads: dict, velocity: dict, lr: float, momentum: float):
    """In-place SGD with momentum: v <- momentum*v + g; p <- p - lr*v."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
        v = velocity[name]
        v *= momentum
        v += g
        p -= lr * v
