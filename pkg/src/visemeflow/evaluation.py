"""Evaluation metrics and the condition/ablation harness.

Activation precision is true-positive activations over all predicted
activations, pooled across parameters and frames; recall divides by the
ground-truth activations instead.  Empty denominators yield None (an
explicit "undefined" sentinel, excluded from averages, never 0 or 100).
Motion-curve difference is the mean absolute value error, as a percentage,
over cells where the parameter is active in the ground truth or in the
prediction; the two style-field parameters count as always active.

The harness trains a requested condition (full, landmark-based,
phoneme-based, audio-based, no-transfer) end to end on supplied datasets,
calibrates thresholds on a hold-out split, and reports the metrics above,
optionally in a leave-one-speaker-out rotation.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import model, trainer
from .errors import ConfigError
from .model import ArchConfig, ModelParams
from .trainer import TrainConfig

CONDITIONS = ("full", "landmark-based", "phoneme-based", "audio-based", "no-transfer")


def _aslist(x):
    if isinstance(x, np.ndarray) and x.ndim == 2:
        return [x]
    return list(x)


def activation_precision(pred, gt):
    """Percent of predicted activations that are correct; None if nothing
    was predicted active."""
    pred, gt = _aslist(pred), _aslist(gt)
    tp = sum(int(np.count_nonzero(p & g)) for p, g in zip(pred, gt))
    predicted = sum(int(np.count_nonzero(p)) for p in pred)
    if predicted == 0:
        return None
    return 100.0 * tp / predicted


def activation_recall(pred, gt):
    """Percent of ground-truth activations recovered; None if the ground
    truth has none."""
    pred, gt = _aslist(pred), _aslist(gt)
    tp = sum(int(np.count_nonzero(p & g)) for p, g in zip(pred, gt))
    actual = sum(int(np.count_nonzero(g)) for g in gt)
    if actual == 0:
        return None
    return 100.0 * tp / actual


def motion_curve_difference(pred, gt, pred_mask, gt_mask):
    """Mean 100*|pred - gt| over union-of-mask cells; None if no cell is
    active on either side."""
    pred, gt = _aslist(pred), _aslist(gt)
    pred_mask, gt_mask = _aslist(pred_mask), _aslist(gt_mask)
    total = 0.0
    count = 0
    for p, g, pm, gm in zip(pred, gt, pred_mask, gt_mask):
        union = pm.astype(bool) | gm.astype(bool)
        total += float(np.abs(p - g)[union].sum())
        count += int(union.sum())
    if count == 0:
        return None
    return 100.0 * total / count


def _with_jali(values, jali):
    return np.concatenate([values, jali], axis=1)


def _jali_mask(mask):
    t = mask.shape[0]
    return np.concatenate([mask, np.ones((t, 2), dtype=bool)], axis=1)


def phoneme_frame_accuracy(params: ModelParams, records) -> float:
    """Fraction of frames whose predicted group matches the label."""
    if not params.arch.use_phoneme:
        raise ConfigError("model has no phoneme path")
    hits = 0
    total = 0
    for r in records:
        result = model.full_forward(r.audio_clip(), params)
        pred = result.phoneme_probs.argmax(axis=1)
        hits += int(np.count_nonzero(pred == r.phoneme_groups))
        total += pred.shape[0]
    return hits / total


@dataclass
class EvalReport:
    condition: str
    precision: float | None
    recall: float | None
    curve_difference: float | None
    per_speaker: dict = field(default_factory=dict)  # speaker -> metric dict
    precision_sd: float | None = None
    recall_sd: float | None = None
    curve_difference_sd: float | None = None
    phoneme_accuracy: float | None = None

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "precision": self.precision,
            "recall": self.recall,
            "curve_difference": self.curve_difference,
            "precision_sd": self.precision_sd,
            "recall_sd": self.recall_sd,
            "curve_difference_sd": self.curve_difference_sd,
            "phoneme_accuracy": self.phoneme_accuracy,
            "per_speaker": self.per_speaker,
        }


def evaluate_model(params: ModelParams, test_records, condition: str = "full") -> EvalReport:
    """Inference on every test clip, pooled metrics plus per-speaker rows."""
    per_clip = []
    for r in test_records:
        result = model.full_forward(r.audio_clip(), params)
        per_clip.append(
            {
                "speaker": r.speaker_id,
                "pred_act": result.rig.active,
                "gt_act": r.activations.astype(bool),
                "pred_curves": _with_jali(result.rig.values, result.rig.jali),
                "gt_curves": _with_jali(r.rig, r.jali),
            }
        )

    def pooled(items):
        pred = [c["pred_act"] for c in items]
        gt = [c["gt_act"] for c in items]
        curves_p = [c["pred_curves"] for c in items]
        curves_g = [c["gt_curves"] for c in items]
        masks_p = [_jali_mask(c["pred_act"]) for c in items]
        masks_g = [_jali_mask(c["gt_act"]) for c in items]
        return {
            "precision": activation_precision(pred, gt),
            "recall": activation_recall(pred, gt),
            "curve_difference": motion_curve_difference(curves_p, curves_g, masks_p, masks_g),
        }

    overall = pooled(per_clip)
    speakers = sorted({c["speaker"] for c in per_clip})
    per_speaker = {
        s: pooled([c for c in per_clip if c["speaker"] == s]) for s in speakers
    }

    def sd(key):
        vals = [m[key] for m in per_speaker.values() if m[key] is not None]
        return float(np.std(vals)) if len(vals) > 1 else None

    report = EvalReport(
        condition=condition,
        precision=overall["precision"],
        recall=overall["recall"],
        curve_difference=overall["curve_difference"],
        per_speaker=per_speaker,
        precision_sd=sd("precision"),
        recall_sd=sd("recall"),
        curve_difference_sd=sd("curve_difference"),
    )
    if params.arch.use_phoneme and all(r.phoneme_groups is not None for r in test_records):
        report.phoneme_accuracy = phoneme_frame_accuracy(params, test_records)
    return report


# ---------------------------------------------------------------------------
# condition harness


@dataclass
class EvalDatasets:
    pretrain: list  # clips with phoneme + landmark labels
    joint: list  # fully annotated clips
    test: list  # fully annotated clips, unseen speaker(s)


def split_corpus(records, test_speakers, joint_per_speaker: int | None = None) -> EvalDatasets:
    """Hold out the given speakers; optionally limit the annotated subset
    used for joint training (the pre-training corpus keeps all clips)."""
    test_speakers = set(test_speakers)
    train = [r for r in records if r.speaker_id not in test_speakers]
    test = [r for r in records if r.speaker_id in test_speakers]
    if not train or not test:
        raise ConfigError("both train and test splits need at least one clip")
    if joint_per_speaker is None:
        joint = list(train)
    else:
        joint = []
        seen: dict = {}
        for r in sorted(train, key=lambda r: r.clip_id):
            if seen.get(r.speaker_id, 0) < joint_per_speaker:
                joint.append(r)
                seen[r.speaker_id] = seen.get(r.speaker_id, 0) + 1
    return EvalDatasets(pretrain=train, joint=joint, test=test)


def run_condition(condition: str, datasets: EvalDatasets, cfg: TrainConfig,
                  run_dir=None) -> EvalReport:
    """Train the requested architecture/protocol and evaluate it."""
    if condition not in CONDITIONS:
        raise ConfigError(f"unknown condition {condition!r}; pick from {CONDITIONS}")
    arch = ArchConfig.for_condition(condition)
    init = None
    if condition in ("full", "landmark-based", "phoneme-based"):
        init = trainer.pretrain(datasets.pretrain, cfg, arch, run_dir=run_dir)
    joint_train_records, holdout = trainer.holdout_split(
        datasets.joint, cfg.holdout_fraction, cfg.seed
    )
    params = trainer.joint_train(joint_train_records, cfg, init=init, arch=arch,
                                 run_dir=run_dir)
    params.thresholds = trainer.calibrate_thresholds(params, holdout)
    return evaluate_model(params, datasets.test, condition)


def leave_one_speaker_out(records, cfg: TrainConfig, condition: str = "full",
                          joint_per_speaker: int | None = None):
    """One split per speaker; returns (aggregate report, per-split reports)."""
    speakers = sorted({r.speaker_id for r in records})
    if len(speakers) < 2:
        raise ConfigError("leave-one-speaker-out needs at least two speakers")
    split_reports = {}
    for s in speakers:
        datasets = split_corpus(records, {s}, joint_per_speaker)
        split_reports[s] = run_condition(condition, datasets, cfg)
    agg = aggregate_reports(list(split_reports.values()), condition)
    agg.per_speaker = {s: r.to_dict() for s, r in split_reports.items()}
    return agg, split_reports


def aggregate_reports(reports, condition: str) -> EvalReport:
    """Mean and standard deviation across splits (None values excluded)."""

    def collect(key):
        return [getattr(r, key) for r in reports if getattr(r, key) is not None]

    def mean(vals):
        return float(np.mean(vals)) if vals else None

    def sd(vals):
        return float(np.std(vals)) if len(vals) > 1 else None

    p, r, d = collect("precision"), collect("recall"), collect("curve_difference")
    acc = collect("phoneme_accuracy")
    return EvalReport(
        condition=condition,
        precision=mean(p),
        recall=mean(r),
        curve_difference=mean(d),
        precision_sd=sd(p),
        recall_sd=sd(r),
        curve_difference_sd=sd(d),
        phoneme_accuracy=mean(acc),
    )


# ---------------------------------------------------------------------------
# report output


def report_table(report: EvalReport) -> str:
    def fmt(v, suffix="%"):
        return "undefined" if v is None else f"{v:.2f}{suffix}"

    lines = [
        f"condition:        {report.condition}",
        f"precision:        {fmt(report.precision)}"
        + (f" (sd {report.precision_sd:.2f})" if report.precision_sd is not None else ""),
        f"recall:           {fmt(report.recall)}"
        + (f" (sd {report.recall_sd:.2f})" if report.recall_sd is not None else ""),
        f"curve difference: {fmt(report.curve_difference)}"
        + (
            f" (sd {report.curve_difference_sd:.2f})"
            if report.curve_difference_sd is not None
            else ""
        ),
    ]
    if report.phoneme_accuracy is not None:
        lines.append(f"phoneme accuracy: {100.0 * report.phoneme_accuracy:.2f}%")
    if report.per_speaker:
        lines.append("per speaker:")
        for s, m in sorted(report.per_speaker.items()):
            lines.append(
                f"  {s}: precision={fmt(m.get('precision'))} recall={fmt(m.get('recall'))} "
                f"diff={fmt(m.get('curve_difference'))}"
            )
    return "\n".join(lines)


def report_to_json(report: EvalReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=1)


def report_to_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["condition", "scope", "precision", "recall", "curve_difference"])
        writer.writerow(
            [report.condition, "overall", report.precision, report.recall,
             report.curve_difference]
        )
        for s, m in sorted(report.per_speaker.items()):
            writer.writerow(
                [report.condition, s, m.get("precision"), m.get("recall"),
                 m.get("curve_difference")]
            )
