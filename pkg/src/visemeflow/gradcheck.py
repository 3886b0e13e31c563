"""Finite-difference verification of every analytic gradient.

Everything runs in float64.  Checks cover each layer type in isolation
(dense core, softmax and sigmoid heads, single LSTM cell through time,
3-layer stack), every loss term, an exhaustive sweep over every parameter
of a small LSTM+decoder+cross-entropy pipeline, and a sampled sweep over a
miniature end-to-end joint graph, which exercises the gradient chaining
from the viseme-level heads back into the shared stack.

Random instances are redrawn until they sit clear of ReLU/absolute-value
kinks, so the central differences (eps=1e-5) never straddle one.
"""

from dataclasses import dataclass, field

import numpy as np

from . import losses, model, net_core
from .audio_features import CONTEXT_DIM, FEATURE_DIM
from .model import ArchConfig, Decoder, ModelParams
from .audio_features import FeatureStats

EPS = 1e-5


def relative_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    fd = np.asarray(fd, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-8)
    return float(np.max(np.abs(analytic - fd) / denom))


def fd_gradient(fn, arr: np.ndarray, eps: float = EPS, sample: np.ndarray | None = None) -> np.ndarray:
    """Central-difference gradient of scalar fn w.r.t. arr (in place)."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    indices = range(flat.size) if sample is None else sample
    for i in indices:
        orig = flat[i]
        flat[i] = orig + eps
        fp = fn()
        flat[i] = orig - eps
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def _check_tensors(fn, pairs, max_per_tensor=None) -> float:
    """pairs: iterable of (array, analytic_grad); returns max relative error.

    With ``max_per_tensor`` set, only the largest-magnitude gradient entries
    are FD-checked: through a six-layer recurrent chain the smallest entries
    fall below what central differences can resolve at 64-bit, while a
    wiring bug would corrupt the dominant entries as well.
    """
    worst = 0.0
    for arr, analytic in pairs:
        sample = None
        if max_per_tensor is not None and arr.size > max_per_tensor:
            sample = np.argsort(np.abs(analytic).reshape(-1))[-max_per_tensor:]
        fd = fd_gradient(fn, arr, sample=sample)
        if sample is not None:
            idx = np.unravel_index(sample, arr.shape)
            worst = max(worst, relative_error(analytic[idx], fd[idx]))
        else:
            worst = max(worst, relative_error(analytic, fd))
    return worst


# ---------------------------------------------------------------------------
# layer checks


def check_dense_core(rng: np.random.Generator) -> float:
    """FC + ReLU + FC against a random linear functional of the output."""
    in_dim, hid, out_dim, n = 5, 7, 4, 3
    while True:
        p1 = net_core.init_dense(rng, in_dim, hid, np.float64)
        p2 = net_core.init_dense(rng, hid, out_dim, np.float64)
        p1.bias[:] = rng.normal(0, 0.3, hid)
        h = rng.normal(0, 1.0, (n, in_dim))
        _, (_, a1, _) = net_core.decoder_core_forward(h, p1, p2)
        if np.min(np.abs(a1)) > 1e-3:  # keep clear of the ReLU kink
            break
    r = rng.normal(0, 1.0, (n, out_dim))

    def fn():
        out, _ = net_core.decoder_core_forward(h, p1, p2)
        return float(np.sum(out * r))

    out, cache = net_core.decoder_core_forward(h, p1, p2)
    dh, grads = net_core.decoder_core_backward(cache, p1, p2, r.copy())
    pairs = [
        (h, dh),
        (p1.weight, grads["fc1.weight"]),
        (p1.bias, grads["fc1.bias"]),
        (p2.weight, grads["fc2.weight"]),
        (p2.bias, grads["fc2.bias"]),
    ]
    return _check_tensors(fn, pairs)


def check_softmax_ce(rng: np.random.Generator) -> float:
    """Fused softmax + cross-entropy gradient w.r.t. logits."""
    t, k = 5, 6
    z = rng.normal(0, 1.0, (t, k))
    labels = rng.integers(0, k, t)

    def fn():
        return losses.phoneme_ce_loss([net_core.softmax(z)], [labels])

    analytic = losses.phoneme_ce_grad([net_core.softmax(z)], [labels])[0]
    return _check_tensors(fn, [(z, analytic)])


def check_sigmoid_bce(rng: np.random.Generator) -> float:
    t, a = 5, 4
    u = rng.normal(0, 1.0, (t, a))
    m = rng.random((t, a)) > 0.5

    def fn():
        return losses.activation_bce_loss([net_core.sigmoid(u)], [m])

    analytic = losses.activation_bce_grad([net_core.sigmoid(u)], [m])[0]
    return _check_tensors(fn, [(u, analytic)])


def check_lstm_layer(rng: np.random.Generator) -> float:
    """One LSTM layer over a short batch of sequences."""
    in_dim, hidden, b, t = 5, 4, 2, 3
    p = net_core.init_lstm_layer(rng, in_dim, hidden, np.float64)
    x = rng.normal(0, 1.0, (b, t, in_dim))
    r = rng.normal(0, 1.0, (b, t, hidden))

    def fn():
        h_seq, _ = net_core.lstm_layer_forward_batch(x, p)
        return float(np.sum(h_seq * r))

    h_seq, cache = net_core.lstm_layer_forward_batch(x, p)
    dx, grads = net_core.lstm_layer_backward_batch(p, cache, r.copy())
    pairs = [(x, dx), (p.fused, grads["fused"]), (p.bias, grads["bias"])]
    return _check_tensors(fn, pairs)


def check_lstm_stack(rng: np.random.Generator) -> float:
    """Three stacked layers, checking gradient flow across them."""
    in_dim, hidden, b, t = 4, 3, 2, 4
    layers = [
        net_core.init_lstm_layer(rng, in_dim, hidden, np.float64),
        net_core.init_lstm_layer(rng, hidden, hidden, np.float64),
        net_core.init_lstm_layer(rng, hidden, hidden, np.float64),
    ]
    x = rng.normal(0, 1.0, (b, t, in_dim))
    r = rng.normal(0, 1.0, (b, t, hidden))

    def fn():
        h, _ = net_core.lstm_stack_forward_batch(x, layers)
        return float(np.sum(h * r))

    h, caches = net_core.lstm_stack_forward_batch(x, layers)
    dx, grads = net_core.lstm_stack_backward_batch(layers, caches, r.copy())
    pairs = [(x, dx)]
    for layer, g in zip(layers, grads):
        pairs.append((layer.fused, g["fused"]))
        pairs.append((layer.bias, g["bias"]))
    return _check_tensors(fn, pairs)


def check_lstm_decoder_ce_pipeline(rng: np.random.Generator) -> float:
    """Every parameter of a 4-unit, 3-frame LSTM + decoder + CE pipeline."""
    in_dim, hidden, dec_hid, k, t = 6, 4, 5, 3, 3
    p = net_core.init_lstm_layer(rng, in_dim, hidden, np.float64)
    while True:
        d1 = net_core.init_dense(rng, hidden, dec_hid, np.float64)
        d2 = net_core.init_dense(rng, dec_hid, k, np.float64)
        d1.bias[:] = rng.normal(0, 0.3, dec_hid)
        x = rng.normal(0, 1.0, (1, t, in_dim))
        h_seq, _ = net_core.lstm_layer_forward_batch(x, p)
        _, (_, a1, _) = net_core.decoder_core_forward(h_seq, d1, d2)
        if np.min(np.abs(a1)) > 1e-3:
            break
    labels = rng.integers(0, k, t)

    def fn():
        h_seq, _ = net_core.lstm_layer_forward_batch(x, p)
        z, _ = net_core.decoder_core_forward(h_seq, d1, d2)
        return losses.phoneme_ce_loss([net_core.softmax(z[0])], [labels])

    h_seq, lstm_cache = net_core.lstm_layer_forward_batch(x, p)
    z, dec_cache = net_core.decoder_core_forward(h_seq, d1, d2)
    dz = losses.phoneme_ce_grad([net_core.softmax(z[0])], [labels])[0][None]
    dh, dec_grads = net_core.decoder_core_backward(dec_cache, d1, d2, dz)
    dx, lstm_grads = net_core.lstm_layer_backward_batch(p, lstm_cache, dh)
    pairs = [
        (x, dx),
        (p.fused, lstm_grads["fused"]),
        (p.bias, lstm_grads["bias"]),
        (d1.weight, dec_grads["fc1.weight"]),
        (d1.bias, dec_grads["fc1.bias"]),
        (d2.weight, dec_grads["fc2.weight"]),
        (d2.bias, dec_grads["fc2.bias"]),
    ]
    return _check_tensors(fn, pairs)


# ---------------------------------------------------------------------------
# loss checks (gradients w.r.t. network outputs)


def _kink_safe_pair(rng, shape, low=0.1, high=0.9):
    """Prediction/target pair whose difference stays far from zero."""
    v = rng.random(shape)
    delta = rng.uniform(low, high, shape) * np.where(rng.random(shape) > 0.5, 1.0, -1.0)
    return v, v - delta


def _safe_mask(rng, shape):
    """Random mask where every column has at least one 3-frame active run."""
    t, a = shape
    while True:
        m = rng.random(shape) > 0.4
        m[: min(3, t)] = True  # guarantee a stencil per column
        if (losses._stencil_mask(m).sum(axis=0) > 0).all():
            return m


def check_losses(rng: np.random.Generator) -> dict:
    """FD-check the gradient of every loss term; returns per-term errors."""
    n_clips = 2
    lengths = [5, 6]
    a = 7
    errors = {}

    # classification
    z_list = [rng.normal(0, 1.0, (t, 6)) for t in lengths]
    labels = [rng.integers(0, 6, t) for t in lengths]

    def ce():
        return losses.phoneme_ce_loss([net_core.softmax(z) for z in z_list], labels)

    gz = losses.phoneme_ce_grad([net_core.softmax(z) for z in z_list], labels)
    errors["phoneme_ce"] = _check_tensors(ce, list(zip(z_list, gz)))

    # landmark terms; keep both |q - q_hat| and |dq/dt| away from kinks
    while True:
        q_list, qh_list = zip(*[_kink_safe_pair(rng, (t, 4)) for t in lengths])
        q_list = [q * 3.0 for q in q_list]  # spread out so derivatives are nonzero
        qh_list = [q - rng.uniform(0.1, 0.9, q.shape) for q in q_list]
        if all(np.abs(losses.central_difference(q)).min() > 1e-3 for q in q_list):
            break

    def l1():
        return losses.landmark_l1_loss(q_list, qh_list)

    errors["landmark_l1"] = _check_tensors(
        l1, list(zip(q_list, losses.landmark_l1_grad(q_list, qh_list)))
    )

    def smooth():
        return losses.landmark_smoothness_loss(q_list)

    errors["landmark_smooth"] = _check_tensors(
        smooth, list(zip(q_list, losses.landmark_smoothness_grad(q_list)))
    )

    # activation BCE on probabilities via logits
    u_list = [rng.normal(0, 1.5, (t, a)) for t in lengths]
    m_list = [rng.random((t, a)) > 0.5 for t in lengths]

    def bce():
        return losses.activation_bce_loss([net_core.sigmoid(u) for u in u_list], m_list)

    gu = losses.activation_bce_grad([net_core.sigmoid(u) for u in u_list], m_list)
    errors["activation_bce"] = _check_tensors(bce, list(zip(u_list, gu)))

    # masked rig terms
    masks = [_safe_mask(rng, (t, a)) for t in lengths]
    masks[1][:, 0] = False  # one fully inactive parameter exercises exclusion
    while True:
        v_list, vh_list = zip(*[_kink_safe_pair(rng, (t, a)) for t in lengths])
        v_list = [v * 3.0 for v in v_list]
        vh_list = [v - rng.uniform(0.1, 0.9, v.shape) for v in v_list]
        vdot_ok = all(
            np.abs((v[2:] - v[:-2]) / 2.0).min() > 1e-3 for v in v_list
        )
        if vdot_ok:
            break

    def rig():
        return losses.masked_rig_l1_loss(v_list, vh_list, masks)

    errors["rig_l1"] = _check_tensors(
        rig, list(zip(v_list, losses.masked_rig_l1_grad(v_list, vh_list, masks)))
    )

    def rig_smooth():
        return losses.rig_smoothness_loss(v_list, masks)

    errors["rig_smooth"] = _check_tensors(
        rig_smooth, list(zip(v_list, losses.rig_smoothness_grad(v_list, masks)))
    )

    # style-field terms
    while True:
        y_list, yh_list = zip(*[_kink_safe_pair(rng, (t, 2)) for t in lengths])
        y_list = [y * 3.0 for y in y_list]
        yh_list = [y - rng.uniform(0.1, 0.9, y.shape) for y in y_list]
        if all(np.abs(losses.central_difference(y)).min() > 1e-3 for y in y_list):
            break

    def jali():
        return losses.jali_l1_loss(y_list, yh_list)

    errors["jali_l1"] = _check_tensors(
        jali, list(zip(y_list, losses.jali_l1_grad(y_list, yh_list)))
    )

    def jali_smooth():
        return losses.jali_smoothness_loss(y_list)

    errors["jali_smooth"] = _check_tensors(
        jali_smooth, list(zip(y_list, losses.jali_smoothness_grad(y_list)))
    )
    return errors


# ---------------------------------------------------------------------------
# miniature end-to-end joint graph


def _tiny_model(rng: np.random.Generator) -> ModelParams:
    hidden, dec_hid = 4, 5
    arch = ArchConfig(True, True)

    def dec(out_dim):
        return Decoder(
            net_core.init_dense(rng, hidden, dec_hid, np.float64),
            net_core.init_dense(rng, dec_hid, out_dim, np.float64),
        )

    def stack(in_dim):
        out = []
        for _ in range(3):
            out.append(net_core.init_lstm_layer(rng, in_dim, hidden, np.float64))
            in_dim = hidden
        return out

    params = ModelParams(
        arch=arch,
        shared=stack(CONTEXT_DIM),
        phoneme_dec=dec(model.N_GROUPS),
        landmark_dec=dec(model.LANDMARK_DIM),
        act_lstm=stack(arch.viseme_input_dim),
        act_dec=dec(model.N_RIG),
        rig_lstm=stack(arch.viseme_input_dim),
        rig_dec=dec(model.N_RIG),
        jali_lstm=stack(arch.viseme_input_dim),
        jali_dec=dec(model.N_JALI),
        stats=FeatureStats(np.zeros(FEATURE_DIM), np.ones(FEATURE_DIM)),
        neutral_face=np.zeros(model.LANDMARK_DIM, np.float64),
    )
    # offset decoder biases so ReLU preactivations sit away from zero
    for d in (params.phoneme_dec, params.landmark_dec, params.act_dec,
              params.rig_dec, params.jali_dec):
        d.fc1.bias[:] = rng.uniform(0.2, 0.5, d.fc1.bias.shape) * np.where(
            rng.random(d.fc1.bias.shape) > 0.5, 1.0, -1.0
        )
    return params


def check_joint_pipeline(rng: np.random.Generator, max_per_tensor: int = 6) -> float:
    """Sampled FD over every tensor of a miniature full training graph."""
    from .trainer import batch_loss_and_grads  # local import avoids a cycle

    params = _tiny_model(rng)
    b, t = 2, 5
    contexts = rng.normal(0, 1.0, (b, t, CONTEXT_DIM))
    labels = rng.integers(0, model.N_GROUPS, (b, t))
    q_hat = rng.normal(0, 0.5, (b, t, model.LANDMARK_DIM))
    m_hat = np.stack([_safe_mask(rng, (t, model.N_RIG)) for _ in range(b)])
    v_hat = rng.random((b, t, model.N_RIG))
    y_hat = rng.random((b, t, model.N_JALI))
    w1 = losses.PretrainWeights()
    w2 = losses.JointWeights()

    def fn():
        terms, _ = batch_loss_and_grads(
            params, contexts, labels, q_hat, m_hat, v_hat, y_hat, w1, w2,
            with_viseme=True, want_grads=False,
        )
        return terms["total"]

    _, tape = batch_loss_and_grads(
        params, contexts, labels, q_hat, m_hat, v_hat, y_hat, w1, w2,
        with_viseme=True, want_grads=True,
    )
    named = model.named_parameters(params)
    pairs = [(named[k], tape[k]) for k in sorted(named)]
    return _check_tensors(fn, pairs, max_per_tensor=max_per_tensor)


# ---------------------------------------------------------------------------
# entry point


@dataclass
class GradcheckReport:
    errors: dict = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_error < tol


def run_gradcheck(seed: int = 0) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    report = GradcheckReport()
    report.errors["dense_core"] = check_dense_core(rng)
    report.errors["softmax_ce"] = check_softmax_ce(rng)
    report.errors["sigmoid_bce"] = check_sigmoid_bce(rng)
    report.errors["lstm_layer"] = check_lstm_layer(rng)
    report.errors["lstm_stack"] = check_lstm_stack(rng)
    report.errors["lstm_decoder_ce"] = check_lstm_decoder_ce_pipeline(rng)
    for name, err in check_losses(rng).items():
        report.errors[f"loss.{name}"] = err
    report.errors["joint_pipeline"] = check_joint_pipeline(rng)
    return report
