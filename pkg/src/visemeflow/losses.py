"""Training objectives: the pre-training triple (classification, landmark
regression, landmark smoothness) and the five viseme-level terms added for
joint training.

Every loss takes sequences of per-clip arrays (a list, or a 3-D array whose
first axis is the clip) and averages per clip, then over clips.  Masked rig
terms average per parameter over its ground-truth-active frames; parameters
with no usable frames in a clip contribute nothing and are excluded from
that clip's parameter average.  Smoothness terms differentiate with central
differences (one-sided at clip ends); the masked variant only keeps frames
whose full three-frame stencil is active, so onset/offset jumps are not
penalized.

``*_grad`` companions return gradients w.r.t. the raw network outputs, with
cross-entropy terms fused through softmax/sigmoid (so they are gradients
w.r.t. logits).  Probability clamping at 1e-7 applies to loss values only.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

CLAMP_EPS = 1e-7


@dataclass(frozen=True)
class PretrainWeights:
    w_c: float = 0.75
    w_q: float = 0.25
    w_q_prime: float = 0.1

    def __post_init__(self):
        if min(self.w_c, self.w_q, self.w_q_prime) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class JointWeights:
    w_a: float = 0.1
    w_v: float = 0.2
    w_j: float = 0.2
    w_v_prime: float = 0.15
    w_j_prime: float = 0.15

    def __post_init__(self):
        if min(self.w_a, self.w_v, self.w_j, self.w_v_prime, self.w_j_prime) < 0:
            raise ValueError("loss weights must be nonnegative")


def _aslist(seqs):
    return [np.asarray(s) for s in seqs]


# ---------------------------------------------------------------------------
# phoneme classification


def phoneme_ce_loss(probs_seq, labels_seq) -> float:
    """Cross-entropy of per-frame group distributions, averaged per clip
    then over clips."""
    probs_seq, labels_seq = _aslist(probs_seq), _aslist(labels_seq)
    total = 0.0
    for probs, labels in zip(probs_seq, labels_seq):
        labels = labels.astype(np.int64)
        if labels.min() < 0 or labels.max() >= probs.shape[1]:
            raise ValueError(
                f"phoneme label outside [0, {probs.shape[1]}): "
                f"found {int(labels.min())}..{int(labels.max())}"
            )
        p = np.maximum(probs[np.arange(len(labels)), labels], CLAMP_EPS)
        total += -np.mean(np.log(p))
    return total / len(probs_seq)


def phoneme_ce_grad(probs_seq, labels_seq):
    """d(loss)/d(logits), softmax fused."""
    probs_seq, labels_seq = _aslist(probs_seq), _aslist(labels_seq)
    n = len(probs_seq)
    grads = []
    for probs, labels in zip(probs_seq, labels_seq):
        g = probs.copy()
        g[np.arange(len(labels)), labels.astype(np.int64)] -= 1.0
        g /= n * probs.shape[0]
        grads.append(g)
    return grads


# ---------------------------------------------------------------------------
# landmark regression and smoothness


def landmark_l1_loss(q_seq, q_hat_seq) -> float:
    """Mean absolute displacement error, normalized per coordinate and frame."""
    q_seq, q_hat_seq = _aslist(q_seq), _aslist(q_hat_seq)
    total = 0.0
    for q, q_hat in zip(q_seq, q_hat_seq):
        if q.shape != q_hat.shape:
            raise ShapeError(f"landmark shapes differ: {q.shape} vs {q_hat.shape}")
        total += np.abs(q - q_hat).mean()
    return total / len(q_seq)


def landmark_l1_grad(q_seq, q_hat_seq):
    q_seq, q_hat_seq = _aslist(q_seq), _aslist(q_hat_seq)
    n = len(q_seq)
    return [
        np.sign(q - q_hat) / (n * q.shape[0] * q.shape[1])
        for q, q_hat in zip(q_seq, q_hat_seq)
    ]


def central_difference(seq: np.ndarray) -> np.ndarray:
    """Temporal derivative: interior (s[t+1]-s[t-1])/2, one-sided at ends."""
    seq = np.asarray(seq)
    d = np.zeros_like(seq, dtype=np.result_type(seq.dtype, np.float32))
    if seq.shape[0] < 2:
        return d
    d[0] = seq[1] - seq[0]
    d[-1] = seq[-1] - seq[-2]
    if seq.shape[0] > 2:
        d[1:-1] = (seq[2:] - seq[:-2]) / 2.0
    return d


def central_difference_adjoint(g: np.ndarray) -> np.ndarray:
    """Transpose of the central-difference operator (for gradients)."""
    g = np.asarray(g)
    out = np.zeros_like(g)
    if g.shape[0] < 2:
        return out
    out[1] += g[0]
    out[0] -= g[0]
    out[-1] += g[-1]
    out[-2] -= g[-1]
    if g.shape[0] > 2:
        out[2:] += g[1:-1] / 2.0
        out[:-2] -= g[1:-1] / 2.0
    return out


def landmark_smoothness_loss(q_seq) -> float:
    """Mean |dq/dt|, normalized like the regression term."""
    q_seq = _aslist(q_seq)
    total = 0.0
    for q in q_seq:
        total += np.abs(central_difference(q)).mean()
    return total / len(q_seq)


def landmark_smoothness_grad(q_seq):
    q_seq = _aslist(q_seq)
    n = len(q_seq)
    grads = []
    for q in q_seq:
        g = np.sign(central_difference(q)) / (n * q.shape[0] * q.shape[1])
        grads.append(central_difference_adjoint(g))
    return grads


def pretrain_loss(phoneme_probs, labels, q, q_hat, w: PretrainWeights) -> float:
    """First-phase objective: weighted classification + landmark terms.

    Either intermediate path may be absent (ablations): pass None and its
    terms drop out.
    """
    total = 0.0
    if phoneme_probs is not None:
        total += w.w_c * phoneme_ce_loss(phoneme_probs, labels)
    if q is not None:
        total += w.w_q * landmark_l1_loss(q, q_hat)
        total += w.w_q_prime * landmark_smoothness_loss(q)
    return total


# ---------------------------------------------------------------------------
# viseme-level terms


def activation_bce_loss(act_probs_seq, m_hat_seq) -> float:
    """Per-parameter binary cross-entropy with indicator-gated frame averages,
    averaged over the 29 parameters and over clips."""
    act_probs_seq, m_hat_seq = _aslist(act_probs_seq), _aslist(m_hat_seq)
    total = 0.0
    for p, m in zip(act_probs_seq, m_hat_seq):
        if p.shape != m.shape:
            raise ShapeError(f"activation shapes differ: {p.shape} vs {m.shape}")
        m = m.astype(bool)
        t_n = p.shape[0]
        logp = np.log(np.maximum(p, CLAMP_EPS))
        log1p = np.log(np.maximum(1.0 - p, CLAMP_EPS))
        per_param = -(np.where(m, logp, 0.0).sum(axis=0) + np.where(~m, log1p, 0.0).sum(axis=0)) / t_n
        total += per_param.mean()
    return total / len(act_probs_seq)


def activation_bce_grad(act_probs_seq, m_hat_seq):
    """d(loss)/d(pre-sigmoid logits), sigmoid fused."""
    act_probs_seq, m_hat_seq = _aslist(act_probs_seq), _aslist(m_hat_seq)
    n = len(act_probs_seq)
    grads = []
    for p, m in zip(act_probs_seq, m_hat_seq):
        a = p.shape[1]
        grads.append((p - m.astype(p.dtype)) / (n * a * p.shape[0]))
    return grads


def _active_counts(m: np.ndarray) -> np.ndarray:
    return m.astype(np.int64).sum(axis=0)


def masked_rig_l1_loss(v_seq, v_hat_seq, m_hat_seq) -> float:
    """Absolute rig-value error on ground-truth-active frames only."""
    v_seq, v_hat_seq, m_hat_seq = _aslist(v_seq), _aslist(v_hat_seq), _aslist(m_hat_seq)
    total = 0.0
    for v, v_hat, m in zip(v_seq, v_hat_seq, m_hat_seq):
        if not (v.shape == v_hat.shape == m.shape):
            raise ShapeError("rig value/mask shapes differ")
        m = m.astype(bool)
        counts = _active_counts(m)
        included = counts > 0
        if not included.any():
            continue
        err = (np.abs(v - v_hat) * m).sum(axis=0)
        total += (err[included] / counts[included]).mean()
    return total / len(v_seq)


def masked_rig_l1_grad(v_seq, v_hat_seq, m_hat_seq):
    v_seq, v_hat_seq, m_hat_seq = _aslist(v_seq), _aslist(v_hat_seq), _aslist(m_hat_seq)
    n = len(v_seq)
    grads = []
    for v, v_hat, m in zip(v_seq, v_hat_seq, m_hat_seq):
        m = m.astype(bool)
        counts = _active_counts(m)
        included = counts > 0
        g = np.zeros_like(v)
        if included.any():
            scale = np.zeros(v.shape[1], dtype=v.dtype)
            scale[included] = 1.0 / (n * included.sum() * counts[included])
            g = np.sign(v - v_hat) * m * scale
        grads.append(g)
    return grads


def _stencil_mask(m: np.ndarray) -> np.ndarray:
    """Frames 1..T-2 whose full central-difference stencil is active."""
    if m.shape[0] < 3:
        return np.zeros((0, m.shape[1]), dtype=bool)
    return m[:-2] & m[1:-1] & m[2:]


def rig_smoothness_loss(v_seq, m_hat_seq) -> float:
    """|dv/dt| inside active runs; frames next to an onset/offset (or clip
    edge) are skipped so legitimate jumps are free."""
    v_seq, m_hat_seq = _aslist(v_seq), _aslist(m_hat_seq)
    total = 0.0
    for v, m in zip(v_seq, m_hat_seq):
        m = m.astype(bool)
        stencil = _stencil_mask(m)
        counts = stencil.sum(axis=0)
        included = counts > 0
        if not included.any():
            continue
        vdot = (v[2:] - v[:-2]) / 2.0
        tot = (np.abs(vdot) * stencil).sum(axis=0)
        total += (tot[included] / counts[included]).mean()
    return total / len(v_seq)


def rig_smoothness_grad(v_seq, m_hat_seq):
    v_seq, m_hat_seq = _aslist(v_seq), _aslist(m_hat_seq)
    n = len(v_seq)
    grads = []
    for v, m in zip(v_seq, m_hat_seq):
        m = m.astype(bool)
        g = np.zeros_like(v)
        stencil = _stencil_mask(m)
        counts = stencil.sum(axis=0)
        included = counts > 0
        if included.any():
            vdot = (v[2:] - v[:-2]) / 2.0
            scale = np.zeros(v.shape[1], dtype=v.dtype)
            scale[included] = 1.0 / (n * included.sum() * counts[included])
            gd = np.sign(vdot) * stencil * scale  # [T-2, A] at stencil centers
            g[2:] += gd / 2.0
            g[:-2] -= gd / 2.0
        grads.append(g)
    return grads


def jali_l1_loss(y_seq, y_hat_seq) -> float:
    """Absolute style-field error; the per-frame L1 norm sums the two axes."""
    y_seq, y_hat_seq = _aslist(y_seq), _aslist(y_hat_seq)
    total = 0.0
    for y, y_hat in zip(y_seq, y_hat_seq):
        if y.shape != y_hat.shape:
            raise ShapeError(f"style-field shapes differ: {y.shape} vs {y_hat.shape}")
        total += np.abs(y - y_hat).sum(axis=1).mean()
    return total / len(y_seq)


def jali_l1_grad(y_seq, y_hat_seq):
    y_seq, y_hat_seq = _aslist(y_seq), _aslist(y_hat_seq)
    n = len(y_seq)
    return [np.sign(y - y_hat) / (n * y.shape[0]) for y, y_hat in zip(y_seq, y_hat_seq)]


def jali_smoothness_loss(y_seq) -> float:
    y_seq = _aslist(y_seq)
    total = 0.0
    for y in y_seq:
        total += np.abs(central_difference(y)).sum(axis=1).mean()
    return total / len(y_seq)


def jali_smoothness_grad(y_seq):
    y_seq = _aslist(y_seq)
    n = len(y_seq)
    grads = []
    for y in y_seq:
        g = np.sign(central_difference(y)) / (n * y.shape[0])
        grads.append(central_difference_adjoint(g))
    return grads


# ---------------------------------------------------------------------------
# combined objectives


def joint_loss_terms(
    phoneme_probs, labels, q, q_hat,
    act_probs, m_hat, v, v_hat, y, y_hat,
    w1: PretrainWeights, w2: JointWeights,
) -> dict:
    """All loss terms of the joint objective, unweighted, plus the weighted
    total; intermediate-stage inputs may be None under ablations."""
    terms = {
        "phoneme_ce": phoneme_ce_loss(phoneme_probs, labels) if phoneme_probs is not None else 0.0,
        "landmark_l1": landmark_l1_loss(q, q_hat) if q is not None else 0.0,
        "landmark_smooth": landmark_smoothness_loss(q) if q is not None else 0.0,
        "activation_bce": activation_bce_loss(act_probs, m_hat),
        "rig_l1": masked_rig_l1_loss(v, v_hat, m_hat),
        "rig_smooth": rig_smoothness_loss(v, m_hat),
        "jali_l1": jali_l1_loss(y, y_hat),
        "jali_smooth": jali_smoothness_loss(y),
    }
    terms["total"] = (
        w1.w_c * terms["phoneme_ce"]
        + w1.w_q * terms["landmark_l1"]
        + w1.w_q_prime * terms["landmark_smooth"]
        + w2.w_a * terms["activation_bce"]
        + w2.w_v * terms["rig_l1"]
        + w2.w_j * terms["jali_l1"]
        + w2.w_v_prime * terms["rig_smooth"]
        + w2.w_j_prime * terms["jali_smooth"]
    )
    return terms


def joint_loss(
    phoneme_probs, labels, q, q_hat,
    act_probs, m_hat, v, v_hat, y, y_hat,
    w1: PretrainWeights, w2: JointWeights,
) -> float:
    return joint_loss_terms(
        phoneme_probs, labels, q, q_hat, act_probs, m_hat, v, v_hat, y, y_hat, w1, w2
    )["total"]
