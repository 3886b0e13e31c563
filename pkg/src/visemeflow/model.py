"""Network assembly: shared recurrent stack, phoneme/landmark decoders,
and three independent recurrent stacks for the viseme-level heads.

Dimensional contract per frame: 65 features -> 1560 context -> {20 phoneme
logits, 76 landmark displacements} -> 161 viseme-stage input -> {29
activation probabilities, 29 rig values, 2 style-field values}.

Ablation variants drop the phoneme and/or landmark paths; the viseme-stage
input shrinks accordingly (85 / 141 / 65 dims).
"""

from dataclasses import dataclass, field

import numpy as np

from . import net_core
from .audio_features import (
    CENTER_SLICE,
    CONTEXT_DIM,
    FEATURE_DIM,
    AudioClip,
    FeatureStats,
    extract_features,
    normalize_features,
    stack_all_contexts,
)
from .errors import ShapeError
from .net_core import DenseParams, LstmLayerParams

N_GROUPS = 20
LANDMARK_DIM = 76
N_RIG = 29
N_JALI = 2
N_LSTM_LAYERS = 3
DECODER_HIDDEN = 256

CONDITIONS = ("full", "landmark-based", "phoneme-based", "audio-based", "no-transfer")


@dataclass(frozen=True)
class ArchConfig:
    """Which intermediate stages exist; "no-transfer" keeps both."""

    use_phoneme: bool = True
    use_landmark: bool = True

    @property
    def has_shared(self) -> bool:
        return self.use_phoneme or self.use_landmark

    @property
    def viseme_input_dim(self) -> int:
        return (
            FEATURE_DIM
            + (N_GROUPS if self.use_phoneme else 0)
            + (LANDMARK_DIM if self.use_landmark else 0)
        )

    @staticmethod
    def for_condition(condition: str) -> "ArchConfig":
        if condition in ("full", "no-transfer"):
            return ArchConfig(True, True)
        if condition == "phoneme-based":
            return ArchConfig(True, False)
        if condition == "landmark-based":
            return ArchConfig(False, True)
        if condition == "audio-based":
            return ArchConfig(False, False)
        raise ValueError(f"unknown condition {condition!r}")


@dataclass
class Decoder:
    fc1: DenseParams
    fc2: DenseParams


@dataclass
class ModelParams:
    arch: ArchConfig
    shared: list  # 3 LstmLayerParams, or [] when no shared stack
    phoneme_dec: Decoder | None
    landmark_dec: Decoder | None
    act_lstm: list
    act_dec: Decoder
    rig_lstm: list
    rig_dec: Decoder
    jali_lstm: list
    jali_dec: Decoder
    stats: FeatureStats
    neutral_face: np.ndarray = field(default_factory=lambda: np.zeros(LANDMARK_DIM, np.float32))
    thresholds: np.ndarray = field(default_factory=lambda: np.full(N_RIG, 0.5, np.float32))


def _init_decoder(rng, in_dim, out_dim, dtype) -> Decoder:
    return Decoder(
        net_core.init_dense(rng, in_dim, DECODER_HIDDEN, dtype),
        net_core.init_dense(rng, DECODER_HIDDEN, out_dim, dtype),
    )


def _init_stack(rng, in_dim, hidden, dtype):
    layers = []
    for _ in range(N_LSTM_LAYERS):
        layers.append(net_core.init_lstm_layer(rng, in_dim, hidden, dtype))
        in_dim = hidden
    return layers


def init_model_params(
    rng: np.random.Generator,
    arch: ArchConfig = ArchConfig(),
    hidden: int = net_core.HIDDEN_SIZE,
    dtype=np.float32,
) -> ModelParams:
    """Fresh parameters; the rng draw order is fixed per architecture."""
    shared = _init_stack(rng, CONTEXT_DIM, hidden, dtype) if arch.has_shared else []
    phoneme_dec = _init_decoder(rng, hidden, N_GROUPS, dtype) if arch.use_phoneme else None
    landmark_dec = _init_decoder(rng, hidden, LANDMARK_DIM, dtype) if arch.use_landmark else None
    vis_in = arch.viseme_input_dim
    act_lstm = _init_stack(rng, vis_in, hidden, dtype)
    act_dec = _init_decoder(rng, hidden, N_RIG, dtype)
    rig_lstm = _init_stack(rng, vis_in, hidden, dtype)
    rig_dec = _init_decoder(rng, hidden, N_RIG, dtype)
    jali_lstm = _init_stack(rng, vis_in, hidden, dtype)
    jali_dec = _init_decoder(rng, hidden, N_JALI, dtype)
    stats = FeatureStats(np.zeros(FEATURE_DIM), np.ones(FEATURE_DIM))
    return ModelParams(
        arch, shared, phoneme_dec, landmark_dec,
        act_lstm, act_dec, rig_lstm, rig_dec, jali_lstm, jali_dec, stats,
    )


def _stack_tensors(prefix, layers, out):
    for i, layer in enumerate(layers):
        out[f"{prefix}.{i}.fused"] = layer.fused
        out[f"{prefix}.{i}.bias"] = layer.bias


def _decoder_tensors(prefix, dec, out):
    out[f"{prefix}.fc1.weight"] = dec.fc1.weight
    out[f"{prefix}.fc1.bias"] = dec.fc1.bias
    out[f"{prefix}.fc2.weight"] = dec.fc2.weight
    out[f"{prefix}.fc2.bias"] = dec.fc2.bias


def named_parameters(params: ModelParams) -> dict:
    """All learnable tensors keyed by stable names (views, not copies)."""
    out: dict = {}
    if params.shared:
        _stack_tensors("shared", params.shared, out)
    if params.phoneme_dec is not None:
        _decoder_tensors("phoneme", params.phoneme_dec, out)
    if params.landmark_dec is not None:
        _decoder_tensors("landmark", params.landmark_dec, out)
    _stack_tensors("vis_act", params.act_lstm, out)
    _decoder_tensors("vis_act", params.act_dec, out)
    _stack_tensors("vis_rig", params.rig_lstm, out)
    _decoder_tensors("vis_rig", params.rig_dec, out)
    _stack_tensors("vis_jali", params.jali_lstm, out)
    _decoder_tensors("vis_jali", params.jali_dec, out)
    return out


def pretrained_parameter_names(params: ModelParams) -> list:
    """Tensors covered by the first training phase (shared + decoders)."""
    out: dict = {}
    if params.shared:
        _stack_tensors("shared", params.shared, out)
    if params.phoneme_dec is not None:
        _decoder_tensors("phoneme", params.phoneme_dec, out)
    if params.landmark_dec is not None:
        _decoder_tensors("landmark", params.landmark_dec, out)
    return list(out)


# ---------------------------------------------------------------------------
# per-frame stepping path (inference, streaming, and the stage functions)


class SequentialRunner:
    """Stateful frame-by-frame evaluator shared by batch and streaming
    inference, which is what makes the two bit-identical."""

    def __init__(self, params: ModelParams):
        self.params = params
        dtype = params.act_dec.fc1.weight.dtype
        self.dtype = dtype
        self._states = {}
        for name, stack in (
            ("shared", params.shared),
            ("act", params.act_lstm),
            ("rig", params.rig_lstm),
            ("jali", params.jali_lstm),
        ):
            self._states[name] = [
                (np.zeros(p.hidden, dtype=dtype), np.zeros(p.hidden, dtype=dtype))
                for p in stack
            ]

    def reset(self) -> None:
        for states in self._states.values():
            for h, c in states:
                h.fill(0)
                c.fill(0)

    def step(self, context: np.ndarray):
        """Advance one frame.

        Returns (z logits or None, q displacements or None, activation
        probabilities, raw rig values, raw style-field values).
        """
        p = self.params
        z = q = None
        if p.arch.has_shared:
            h_top = net_core.stack_step(p.shared, self._states["shared"], context)
            if p.phoneme_dec is not None:
                z, _ = net_core.decoder_core_forward(h_top, p.phoneme_dec.fc1, p.phoneme_dec.fc2)
            if p.landmark_dec is not None:
                q, _ = net_core.decoder_core_forward(h_top, p.landmark_dec.fc1, p.landmark_dec.fc2)
        x = context[CENTER_SLICE]
        parts = [v for v in (z, q, x) if v is not None]
        vis_in = parts[0] if len(parts) == 1 else np.concatenate(parts)
        h_act = net_core.stack_step(p.act_lstm, self._states["act"], vis_in)
        h_rig = net_core.stack_step(p.rig_lstm, self._states["rig"], vis_in)
        h_jali = net_core.stack_step(p.jali_lstm, self._states["jali"], vis_in)
        act_pre, _ = net_core.decoder_core_forward(h_act, p.act_dec.fc1, p.act_dec.fc2)
        v_raw, _ = net_core.decoder_core_forward(h_rig, p.rig_dec.fc1, p.rig_dec.fc2)
        y_raw, _ = net_core.decoder_core_forward(h_jali, p.jali_dec.fc1, p.jali_dec.fc2)
        return z, q, net_core.sigmoid(act_pre), v_raw, y_raw


@dataclass
class RigOutput:
    """Per-frame viseme-level outputs after activation gating."""

    activation_probs: np.ndarray  # [T, 29] in (0, 1)
    active: np.ndarray  # [T, 29] bool, prob > threshold (strict)
    values: np.ndarray  # [T, 29] in [0, 1], zero where inactive
    jali: np.ndarray  # [T, 2] in [0, 1]


@dataclass
class FullForwardResult:
    phoneme_probs: np.ndarray | None  # [T, 20]
    landmarks: np.ndarray | None  # [T, 76]
    rig: RigOutput


def gate_rig(act_probs: np.ndarray, v_raw: np.ndarray, y_raw: np.ndarray,
             thresholds: np.ndarray) -> RigOutput:
    """Inference-side output shaping: clamp to [0,1], zero inactive tracks."""
    active = act_probs > thresholds
    values = np.clip(v_raw, 0.0, 1.0) * active
    jali = np.clip(y_raw, 0.0, 1.0)
    return RigOutput(act_probs, active, values, jali)


def prepare_contexts(clip: AudioClip, stats: FeatureStats, dtype=np.float32) -> np.ndarray:
    """extract -> normalize -> stack, as one [T, 1560] array."""
    feats = extract_features(clip)
    return stack_all_contexts(normalize_features(feats, stats)).astype(dtype)


def contexts_forward(contexts: np.ndarray, params: ModelParams) -> FullForwardResult:
    """Stepping-path evaluation of prepared context vectors."""
    T = contexts.shape[0]
    runner = SequentialRunner(params)
    z_seq = np.empty((T, N_GROUPS), dtype=runner.dtype) if params.arch.use_phoneme else None
    q_seq = np.empty((T, LANDMARK_DIM), dtype=runner.dtype) if params.arch.use_landmark else None
    act = np.empty((T, N_RIG), dtype=runner.dtype)
    v = np.empty((T, N_RIG), dtype=runner.dtype)
    y = np.empty((T, N_JALI), dtype=runner.dtype)
    for t in range(T):
        z, q, a_t, v_t, y_t = runner.step(contexts[t])
        if z_seq is not None:
            z_seq[t] = z
        if q_seq is not None:
            q_seq[t] = q
        act[t] = a_t
        v[t] = v_t
        y[t] = y_t
    probs = net_core.softmax(z_seq) if z_seq is not None else None
    return FullForwardResult(probs, q_seq, gate_rig(act, v, y, params.thresholds))


def full_forward(clip: AudioClip, params: ModelParams) -> FullForwardResult:
    """Whole pipeline on one clip; all outputs share the frame count."""
    return contexts_forward(prepare_contexts(clip, params.stats), params)


def animated_landmarks(params: ModelParams, displacements: np.ndarray) -> np.ndarray:
    """Absolute landmark positions: neutral face plus predicted offsets."""
    return params.neutral_face + displacements


# --- stage functions on prepared inputs ------------------------------------


def phoneme_stage(contexts: np.ndarray, shared, phoneme_dec: Decoder) -> np.ndarray:
    """Per-frame phoneme-group distributions, [T, 20]."""
    h = net_core.lstm_stack_forward(contexts, shared)
    logits, _ = net_core.decoder_core_forward(h, phoneme_dec.fc1, phoneme_dec.fc2)
    return net_core.softmax(logits)


def landmark_stage(contexts: np.ndarray, shared, landmark_dec: Decoder) -> np.ndarray:
    """Per-frame landmark displacements, [T, 76]."""
    h = net_core.lstm_stack_forward(contexts, shared)
    q, _ = net_core.decoder_core_forward(h, landmark_dec.fc1, landmark_dec.fc2)
    return q


def viseme_stage(z: np.ndarray | None, q: np.ndarray | None, x: np.ndarray,
                 params: ModelParams, thresholds: np.ndarray | None = None) -> RigOutput:
    """Viseme-level heads on pre-softmax logits, displacements and features.

    Inputs must share the frame count; they are concatenated per frame.
    When ``thresholds`` is None, every parameter is reported (no gating).
    """
    parts = [p for p in (z, q, x) if p is not None]
    lengths = {p.shape[0] for p in parts}
    if len(lengths) != 1:
        raise ShapeError(f"stage inputs disagree on frame count: {sorted(lengths)}")
    vis_in = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=1)
    if vis_in.shape[1] != params.arch.viseme_input_dim:
        raise ShapeError(
            f"viseme input dim {vis_in.shape[1]} != {params.arch.viseme_input_dim}"
        )
    vis_in = vis_in.astype(params.act_dec.fc1.weight.dtype)
    h_act = net_core.lstm_stack_forward(vis_in, params.act_lstm)
    h_rig = net_core.lstm_stack_forward(vis_in, params.rig_lstm)
    h_jali = net_core.lstm_stack_forward(vis_in, params.jali_lstm)
    act_pre, _ = net_core.decoder_core_forward(h_act, params.act_dec.fc1, params.act_dec.fc2)
    v_raw, _ = net_core.decoder_core_forward(h_rig, params.rig_dec.fc1, params.rig_dec.fc2)
    y_raw, _ = net_core.decoder_core_forward(h_jali, params.jali_dec.fc1, params.jali_dec.fc2)
    probs = net_core.sigmoid(act_pre)
    if thresholds is None:
        active = np.ones_like(probs, dtype=bool)
        return RigOutput(probs, active, np.clip(v_raw, 0.0, 1.0), np.clip(y_raw, 0.0, 1.0))
    return gate_rig(probs, v_raw, y_raw, thresholds)


# ---------------------------------------------------------------------------
# batched training path


@dataclass
class TrainingOutputs:
    """Raw per-frame outputs of a batched forward pass, [B, L, ...]."""

    z: np.ndarray | None
    q: np.ndarray | None
    act_pre: np.ndarray | None  # pre-sigmoid activation logits
    act_probs: np.ndarray | None
    v: np.ndarray | None  # raw rig values (no clamp during training)
    y: np.ndarray | None


class TrainingCache:
    __slots__ = (
        "contexts", "with_viseme", "shared_caches", "h_top",
        "phoneme_cache", "landmark_cache",
        "vis_in", "act_caches", "rig_caches", "jali_caches",
        "act_dec_cache", "rig_dec_cache", "jali_dec_cache", "outputs",
    )


def training_forward(params: ModelParams, contexts: np.ndarray, with_viseme: bool = True):
    """Forward over [B, L, 1560] contexts with caches for the backward pass.

    ``with_viseme=False`` skips the three viseme-level stacks (the
    pre-training phase only needs the shared stack and its decoders).
    """
    p = params
    cache = TrainingCache()
    cache.contexts = contexts
    cache.with_viseme = with_viseme
    z = q = None
    cache.shared_caches = cache.phoneme_cache = cache.landmark_cache = None
    if p.arch.has_shared:
        h_top, cache.shared_caches = net_core.lstm_stack_forward_batch(contexts, p.shared)
        cache.h_top = h_top
        if p.phoneme_dec is not None:
            z, cache.phoneme_cache = net_core.decoder_core_forward(
                h_top, p.phoneme_dec.fc1, p.phoneme_dec.fc2
            )
        if p.landmark_dec is not None:
            q, cache.landmark_cache = net_core.decoder_core_forward(
                h_top, p.landmark_dec.fc1, p.landmark_dec.fc2
            )
    if not with_viseme:
        outputs = TrainingOutputs(z, q, None, None, None, None)
        cache.outputs = outputs
        return outputs, cache
    x = contexts[:, :, CENTER_SLICE]
    parts = [v for v in (z, q, x) if v is not None]
    vis_in = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=2)
    cache.vis_in = vis_in
    h_act, cache.act_caches = net_core.lstm_stack_forward_batch(vis_in, p.act_lstm)
    h_rig, cache.rig_caches = net_core.lstm_stack_forward_batch(vis_in, p.rig_lstm)
    h_jali, cache.jali_caches = net_core.lstm_stack_forward_batch(vis_in, p.jali_lstm)
    act_pre, cache.act_dec_cache = net_core.decoder_core_forward(h_act, p.act_dec.fc1, p.act_dec.fc2)
    v, cache.rig_dec_cache = net_core.decoder_core_forward(h_rig, p.rig_dec.fc1, p.rig_dec.fc2)
    y, cache.jali_dec_cache = net_core.decoder_core_forward(h_jali, p.jali_dec.fc1, p.jali_dec.fc2)
    outputs = TrainingOutputs(z, q, act_pre, net_core.sigmoid(act_pre), v, y)
    cache.outputs = outputs
    return outputs, cache


def _add_stack_grads(prefix, grads_list, tape):
    for i, g in enumerate(grads_list):
        tape[f"{prefix}.{i}.fused"] = g["fused"]
        tape[f"{prefix}.{i}.bias"] = g["bias"]


def _add_decoder_grads(prefix, grads, tape):
    for key, g in grads.items():
        tape[f"{prefix}.{key}"] = g


def training_backward(
    params: ModelParams,
    cache: TrainingCache,
    d_z: np.ndarray | None,
    d_q: np.ndarray | None,
    d_act_pre: np.ndarray | None,
    d_v: np.ndarray | None,
    d_y: np.ndarray | None,
) -> dict:
    """Reverse pass from loss gradients w.r.t. the raw outputs.

    Viseme-head gradients flow back through the stage inputs into the
    phoneme/landmark decoders and the shared stack, so one call yields the
    complete gradient tape for the joint objective.
    """
    p = params
    tape: dict = {}
    d_vis_in = None
    if cache.with_viseme:
        B, L, _ = cache.vis_in.shape
        dtype = cache.vis_in.dtype
        d_vis_in = np.zeros_like(cache.vis_in)
        head_specs = (
            (d_act_pre, p.act_dec, cache.act_dec_cache, p.act_lstm, cache.act_caches, "vis_act"),
            (d_v, p.rig_dec, cache.rig_dec_cache, p.rig_lstm, cache.rig_caches, "vis_rig"),
            (d_y, p.jali_dec, cache.jali_dec_cache, p.jali_lstm, cache.jali_caches, "vis_jali"),
        )
        for d_head, dec, dec_cache, stack, stack_caches, prefix in head_specs:
            if d_head is None:
                d_head = np.zeros((B, L, dec.fc2.out_dim), dtype=dtype)
            dh, dec_grads = net_core.decoder_core_backward(dec_cache, dec.fc1, dec.fc2, d_head)
            dx, stack_grads = net_core.lstm_stack_backward_batch(stack, stack_caches, dh)
            d_vis_in += dx
            _add_decoder_grads(prefix, dec_grads, tape)
            _add_stack_grads(prefix, stack_grads, tape)

    offset = 0
    d_z_total = None
    d_q_total = None
    if p.arch.use_phoneme:
        if d_vis_in is not None:
            d_z_total = d_vis_in[:, :, offset : offset + N_GROUPS]
            if d_z is not None:
                d_z_total = d_z_total + d_z
        else:
            d_z_total = d_z
        offset += N_GROUPS
    if p.arch.use_landmark:
        if d_vis_in is not None:
            d_q_total = d_vis_in[:, :, offset : offset + LANDMARK_DIM]
            if d_q is not None:
                d_q_total = d_q_total + d_q
        else:
            d_q_total = d_q
        offset += LANDMARK_DIM

    if p.arch.has_shared:
        dh_top = np.zeros_like(cache.h_top)
        if d_z_total is not None:
            dh, dec_grads = net_core.decoder_core_backward(
                cache.phoneme_cache, p.phoneme_dec.fc1, p.phoneme_dec.fc2, d_z_total
            )
            dh_top += dh
            _add_decoder_grads("phoneme", dec_grads, tape)
        if d_q_total is not None:
            dh, dec_grads = net_core.decoder_core_backward(
                cache.landmark_cache, p.landmark_dec.fc1, p.landmark_dec.fc2, d_q_total
            )
            dh_top += dh
            _add_decoder_grads("landmark", dec_grads, tape)
        _, stack_grads = net_core.lstm_stack_backward_batch(p.shared, cache.shared_caches, dh_top)
        _add_stack_grads("shared", stack_grads, tape)
    return tape
