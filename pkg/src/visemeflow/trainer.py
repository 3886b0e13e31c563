"""Two-phase training.

Phase one fits the shared stack plus phoneme/landmark decoders on clips
carrying group labels and landmark displacements.  Phase two starts from
those weights and fits everything, including the viseme-level stacks, on
fully annotated clips; gradients from the viseme-level terms flow back
through the predicted logits and displacements into the shared stack.

The batch unit is a fixed-length subsequence sampled uniformly over clips
and offsets, with recurrent state starting at zero; context stacking may
read frames outside the subsequence but never outside the clip.  After
joint training, per-parameter activation thresholds are fitted by dense
grid search on a held-out split.
"""

import csv
import dataclasses
import os
from dataclasses import dataclass, field

import numpy as np

from . import losses, model, net_core
from .audio_features import (
    CONTEXT_FUTURE,
    CONTEXT_PAST,
    FeatureStats,
    compute_feature_stats,
    extract_features,
    normalize_features,
)
from .errors import ConfigError, DataFormatError
from .losses import JointWeights, PretrainWeights
from .model import ArchConfig, ModelParams

THRESHOLD_GRID = np.round(np.arange(1, 100) * 0.01, 2)


@dataclass
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 1e-5
    momentum: float = 0.9
    pretrain_iters: int = 20000
    joint_iters: int = 5000
    subsequence_len: int = 96
    seed: int = 0
    holdout_fraction: float = 0.10
    pretrain_weights: PretrainWeights = field(default_factory=PretrainWeights)
    joint_weights: JointWeights = field(default_factory=JointWeights)
    log_every: int = 100
    checkpoint_every: int = 0  # 0: final checkpoint only

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must be in (0, 1)")
        if self.subsequence_len <= 24:
            raise ConfigError("subsequence_len must exceed the 24-frame context")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


# ---------------------------------------------------------------------------
# clip preparation


@dataclass
class PreparedClip:
    clip_id: str
    speaker_id: str
    features: np.ndarray  # [T, 65] normalized, float32
    phoneme: np.ndarray | None  # [T] int64
    landmarks: np.ndarray | None  # [T, 76] float32
    rig: np.ndarray | None  # [T, 29] float32
    activations: np.ndarray | None  # [T, 29] bool
    jali: np.ndarray | None  # [T, 2] float32

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]


def compute_normalization(records) -> FeatureStats:
    return compute_feature_stats([extract_features(r.audio_clip()) for r in records])


def prepare_clips(records, stats: FeatureStats) -> list:
    out = []
    for r in records:
        feats = normalize_features(extract_features(r.audio_clip()), stats).astype(np.float32)
        out.append(
            PreparedClip(
                clip_id=r.clip_id,
                speaker_id=r.speaker_id,
                features=feats,
                phoneme=None if r.phoneme_groups is None else r.phoneme_groups.astype(np.int64),
                landmarks=None if r.landmarks is None else r.landmarks.astype(np.float32),
                rig=None if r.rig is None else r.rig.astype(np.float32),
                activations=None if r.activations is None else r.activations.astype(bool),
                jali=None if r.jali is None else r.jali.astype(np.float32),
            )
        )
    return out


def _require_sections(records, arch: ArchConfig, viseme: bool, phase: str) -> None:
    for r in records:
        missing = []
        if arch.use_phoneme and r.phoneme_groups is None:
            missing.append("phoneme labels")
        if arch.use_phoneme and r.phoneme_groups is not None and (r.phoneme_groups < 0).any():
            missing.append("complete phoneme labels (unlabeled frames present)")
        if arch.use_landmark and r.landmarks is None:
            missing.append("landmark displacements")
        if viseme:
            if r.rig is None or r.activations is None:
                missing.append("rig values/activations")
            if r.jali is None:
                missing.append("style-field values")
        if missing:
            raise DataFormatError(
                f"clip {r.clip_id!r} lacks {', '.join(missing)} required for {phase}"
            )


# ---------------------------------------------------------------------------
# batch sampling


@dataclass
class Batch:
    contexts: np.ndarray  # [B, L, 1560] float32
    phoneme: np.ndarray | None  # [B, L]
    landmarks: np.ndarray | None
    rig: np.ndarray | None
    activations: np.ndarray | None
    jali: np.ndarray | None


def _subsequence_contexts(feats: np.ndarray, offset: int, length: int) -> np.ndarray:
    t_idx = offset + np.arange(length)
    idx = t_idx[:, None] + np.arange(-CONTEXT_PAST, CONTEXT_FUTURE + 1)[None, :]
    np.clip(idx, 0, feats.shape[0] - 1, out=idx)
    return feats[idx].reshape(length, -1)


def make_batches(clips, cfg: TrainConfig, rng: np.random.Generator, viseme: bool):
    """Endless stream of fixed-length subsequence batches."""
    L = cfg.subsequence_len
    for c in clips:
        if c.num_frames < L:
            raise ConfigError(
                f"clip {c.clip_id!r} has {c.num_frames} frames < subsequence_len {L}"
            )
    want_phon = all(c.phoneme is not None for c in clips)
    want_land = all(c.landmarks is not None for c in clips)
    while True:
        ctx = np.empty((cfg.batch_size, L, clips[0].features.shape[1] * 24), np.float32)
        phon = np.empty((cfg.batch_size, L), np.int64) if want_phon else None
        land = np.empty((cfg.batch_size, L, 76), np.float32) if want_land else None
        rig = np.empty((cfg.batch_size, L, 29), np.float32) if viseme else None
        act = np.empty((cfg.batch_size, L, 29), bool) if viseme else None
        jali = np.empty((cfg.batch_size, L, 2), np.float32) if viseme else None
        for b in range(cfg.batch_size):
            c = clips[int(rng.integers(len(clips)))]
            off = int(rng.integers(c.num_frames - L + 1))
            ctx[b] = _subsequence_contexts(c.features, off, L)
            sl = slice(off, off + L)
            if want_phon:
                phon[b] = c.phoneme[sl]
            if want_land:
                land[b] = c.landmarks[sl]
            if viseme:
                rig[b] = c.rig[sl]
                act[b] = c.activations[sl]
                jali[b] = c.jali[sl]
        yield Batch(ctx, phon, land, rig, act, jali)


# ---------------------------------------------------------------------------
# loss + gradient assembly on one batch


def batch_loss_and_grads(
    params: ModelParams,
    contexts: np.ndarray,
    labels, q_hat, m_hat, v_hat, y_hat,
    w1: PretrainWeights, w2: JointWeights,
    with_viseme: bool,
    want_grads: bool = True,
):
    """Forward + losses (+ gradient tape) for one batch of subsequences.

    Each batch item counts as one clip in the loss averages.
    """
    outputs, cache = model.training_forward(params, contexts, with_viseme)
    terms = {}
    probs = None
    d_z = d_q = d_act = d_v = d_y = None

    if outputs.z is not None:
        probs = net_core.softmax(outputs.z)
        probs_list, labels_list = list(probs), list(labels)
        terms["phoneme_ce"] = losses.phoneme_ce_loss(probs_list, labels_list)
        if want_grads:
            d_z = np.stack(losses.phoneme_ce_grad(probs_list, labels_list)) * w1.w_c
    if outputs.q is not None:
        q_list, qh_list = list(outputs.q), list(q_hat)
        terms["landmark_l1"] = losses.landmark_l1_loss(q_list, qh_list)
        terms["landmark_smooth"] = losses.landmark_smoothness_loss(q_list)
        if want_grads:
            d_q = np.stack(losses.landmark_l1_grad(q_list, qh_list)) * w1.w_q
            d_q += np.stack(losses.landmark_smoothness_grad(q_list)) * w1.w_q_prime
    if with_viseme:
        p_list, m_list = list(outputs.act_probs), list(m_hat)
        v_list, vh_list = list(outputs.v), list(v_hat)
        y_list, yh_list = list(outputs.y), list(y_hat)
        terms["activation_bce"] = losses.activation_bce_loss(p_list, m_list)
        terms["rig_l1"] = losses.masked_rig_l1_loss(v_list, vh_list, m_list)
        terms["rig_smooth"] = losses.rig_smoothness_loss(v_list, m_list)
        terms["jali_l1"] = losses.jali_l1_loss(y_list, yh_list)
        terms["jali_smooth"] = losses.jali_smoothness_loss(y_list)
        if want_grads:
            d_act = np.stack(losses.activation_bce_grad(p_list, m_list)) * w2.w_a
            d_v = np.stack(losses.masked_rig_l1_grad(v_list, vh_list, m_list)) * w2.w_v
            d_v += np.stack(losses.rig_smoothness_grad(v_list, m_list)) * w2.w_v_prime
            d_y = np.stack(losses.jali_l1_grad(y_list, yh_list)) * w2.w_j
            d_y += np.stack(losses.jali_smoothness_grad(y_list)) * w2.w_j_prime

    total = (
        w1.w_c * terms.get("phoneme_ce", 0.0)
        + w1.w_q * terms.get("landmark_l1", 0.0)
        + w1.w_q_prime * terms.get("landmark_smooth", 0.0)
        + w2.w_a * terms.get("activation_bce", 0.0)
        + w2.w_v * terms.get("rig_l1", 0.0)
        + w2.w_j * terms.get("jali_l1", 0.0)
        + w2.w_v_prime * terms.get("rig_smooth", 0.0)
        + w2.w_j_prime * terms.get("jali_smooth", 0.0)
    )
    terms["total"] = total
    if not want_grads:
        return terms, None
    tape = model.training_backward(params, cache, d_z, d_q, d_act, d_v, d_y)
    return terms, tape


# ---------------------------------------------------------------------------
# run directory logging


class RunLogger:
    def __init__(self, run_dir, cfg: TrainConfig, extra: dict | None = None):
        self.run_dir = run_dir
        self._csv = None
        self._writer = None
        self._fields = None
        if run_dir is None:
            return
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, "config.txt"), "w") as fh:
            for key, value in sorted(resolved_config(cfg, extra).items()):
                fh.write(f"{key}={value}\n")

    def log(self, iteration: int, terms: dict) -> None:
        if self.run_dir is None:
            return
        if self._writer is None:
            self._fields = ["iter"] + sorted(k for k in terms if k != "total") + ["total"]
            self._csv = open(os.path.join(self.run_dir, "loss_log.csv"), "w", newline="")
            self._writer = csv.writer(self._csv)
            self._writer.writerow(self._fields)
        row = [iteration] + [float(terms.get(k, 0.0)) for k in self._fields[1:]]
        self._writer.writerow(row)
        self._csv.flush()

    def checkpoint(self, params: ModelParams, name: str) -> None:
        if self.run_dir is None:
            return
        from .checkpoint import save_checkpoint

        save_checkpoint(os.path.join(self.run_dir, name), params)

    def close(self) -> None:
        if self._csv is not None:
            self._csv.close()
            self._csv = None
            self._writer = None


def resolved_config(cfg: TrainConfig, extra: dict | None = None) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            for sub in dataclasses.fields(value):
                out[f"{f.name}.{sub.name}"] = getattr(value, sub.name)
        else:
            out[f.name] = value
    if extra:
        out.update(extra)
    return out


# ---------------------------------------------------------------------------
# training phases


def _rngs(seed: int):
    init_ss, batch_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(batch_ss)


def _train_loop(params, clips, cfg, viseme, iters, param_names, logger, rng_batch,
                loss_history=None):
    named = model.named_parameters(params)
    subset = {k: named[k] for k in param_names}
    velocity = {k: np.zeros_like(v) for k, v in subset.items()}
    w1, w2 = cfg.pretrain_weights, cfg.joint_weights
    batches = make_batches(clips, cfg, rng_batch, viseme)
    for it in range(iters):
        batch = next(batches)
        terms, tape = batch_loss_and_grads(
            params, batch.contexts, batch.phoneme, batch.landmarks,
            batch.activations, batch.rig, batch.jali, w1, w2, viseme,
        )
        grads = {k: tape[k] for k in subset}
        net_core.sgd_momentum_step(subset, grads, velocity, cfg.learning_rate, cfg.momentum)
        if loss_history is not None:
            loss_history.append(terms["total"])
        if logger is not None and (it % cfg.log_every == 0 or it == iters - 1):
            logger.log(it, terms)
        if logger is not None and cfg.checkpoint_every and it and it % cfg.checkpoint_every == 0:
            logger.checkpoint(params, f"checkpoint_{it:07d}.vnck")


def pretrain(records, cfg: TrainConfig, arch: ArchConfig = ArchConfig(),
             run_dir=None, loss_history=None) -> ModelParams:
    """First phase: fit shared stack + phoneme/landmark decoders."""
    cfg.validate()
    if not arch.has_shared:
        raise ConfigError("pre-training requires at least one intermediate stage")
    if not records:
        raise DataFormatError("empty training dataset")
    _require_sections(records, arch, viseme=False, phase="pre-training")
    stats = compute_normalization(records)
    rng_init, rng_batch = _rngs(cfg.seed)
    params = model.init_model_params(rng_init, arch)
    params.stats = stats
    if arch.use_landmark:
        params.neutral_face = np.mean(
            np.concatenate([r.landmarks for r in records]), axis=0
        ).astype(np.float32)
    clips = prepare_clips(records, stats)
    logger = RunLogger(run_dir, cfg, {"phase": "pretrain"})
    _train_loop(params, clips, cfg, False, cfg.pretrain_iters,
                model.pretrained_parameter_names(params), logger, rng_batch, loss_history)
    logger.checkpoint(params, "pretrained.vnck")
    logger.close()
    return params


def joint_train(records, cfg: TrainConfig, init: ModelParams | None = None,
                arch: ArchConfig = ArchConfig(), run_dir=None,
                loss_history=None) -> ModelParams:
    """Second phase: fit the whole network on fully annotated clips.

    ``init`` carries pre-trained weights; None trains from scratch
    (the no-transfer condition).
    """
    cfg.validate()
    if not records:
        raise DataFormatError("empty training dataset")
    if init is not None:
        arch = init.arch
    _require_sections(records, arch, viseme=True, phase="joint training")
    rng_init, rng_batch = _rngs(cfg.seed)
    if init is None:
        params = model.init_model_params(rng_init, arch)
        params.stats = compute_normalization(records)
        if arch.use_landmark:
            params.neutral_face = np.mean(
                np.concatenate([r.landmarks for r in records]), axis=0
            ).astype(np.float32)
    else:
        params = copy_model_params(init)
    clips = prepare_clips(records, params.stats)
    logger = RunLogger(run_dir, cfg, {"phase": "joint"})
    names = list(model.named_parameters(params))
    _train_loop(params, clips, cfg, True, cfg.joint_iters, names, logger, rng_batch,
                loss_history)
    logger.checkpoint(params, "joint.vnck")
    logger.close()
    return params


def copy_model_params(params: ModelParams) -> ModelParams:
    import copy

    return copy.deepcopy(params)


# ---------------------------------------------------------------------------
# hold-out split and threshold calibration


def holdout_split(records, fraction: float, seed: int):
    """Split by clip (never by frame); deterministic for a given seed."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"holdout fraction must be in (0, 1), got {fraction}")
    n = len(records)
    if n < 2:
        raise ConfigError("need at least two clips to split")
    n_holdout = min(max(1, int(round(n * fraction))), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    holdout_idx = set(perm[:n_holdout].tolist())
    train = [r for i, r in enumerate(records) if i not in holdout_idx]
    holdout = [r for i, r in enumerate(records) if i in holdout_idx]
    return train, holdout


def threshold_f1(probs: np.ndarray, gt: np.ndarray, thr: float) -> float:
    """F1 of thresholded activations (predicted active when prob >= thr)."""
    pred = probs >= thr
    tp = int(np.count_nonzero(pred & gt))
    if tp == 0:
        return 0.0
    precision = tp / int(np.count_nonzero(pred))
    recall = tp / int(np.count_nonzero(gt))
    return 2.0 * precision * recall / (precision + recall)


def fit_threshold_grid(probs: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Per-parameter threshold by dense grid search on F1.

    ``probs``/``gt`` are [frames, params] pooled over the hold-out clips.
    The candidate grid is 0.01..0.99 in 0.01 steps; ties resolve to the
    lowest threshold; parameters never active in the hold-out data keep
    the 0.5 default.
    """
    n_params = probs.shape[1]
    thresholds = np.full(n_params, 0.5, dtype=np.float32)
    for a in range(n_params):
        if not gt[:, a].any():
            continue
        best_f1 = -1.0
        best_thr = 0.5
        for thr in THRESHOLD_GRID:
            f1 = threshold_f1(probs[:, a], gt[:, a], thr)
            if f1 > best_f1:
                best_f1 = f1
                best_thr = thr
        thresholds[a] = best_thr
    return thresholds


def calibrate_thresholds(params: ModelParams, holdout_records) -> np.ndarray:
    """Fit per-parameter activation thresholds on held-out clips."""
    if not holdout_records:
        raise ConfigError("empty hold-out set for threshold calibration")
    probs = []
    gt = []
    for r in holdout_records:
        if r.activations is None:
            raise DataFormatError(f"clip {r.clip_id!r} lacks activations for calibration")
        result = model.full_forward(r.audio_clip(), params)
        probs.append(result.rig.activation_probs)
        gt.append(r.activations.astype(bool))
    return fit_threshold_grid(np.concatenate(probs), np.concatenate(gt))
