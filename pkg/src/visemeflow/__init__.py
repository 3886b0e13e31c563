"""Audio-driven viseme motion curves.

Pipeline: 65-dim spectral features at 100 FPS -> 24-frame context vectors
-> shared recurrent stack with phoneme-group and landmark decoders ->
three independent recurrent stacks producing activation probabilities,
rig values, and a 2-D style field -> thresholded, clamped curve tracks.
Training is two-phase (intermediate supervision first, then joint
multi-task fine-tuning); inference runs batch or streaming with a 120 ms
lookahead and identical output either way.
"""

from .audio_features import (
    AudioClip,
    FeatureStats,
    extract_features,
    normalize_features,
    stack_context,
)
from .backend import NUMBA_ENABLED, backend_name
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import ClipRecord, load_dataset, save_dataset
from .evaluation import (
    EvalReport,
    activation_precision,
    activation_recall,
    leave_one_speaker_out,
    motion_curve_difference,
    run_condition,
)
from .inference import CurveTrack, StreamState, export_curves, infer_clip
from .model import ArchConfig, ModelParams, full_forward, init_model_params
from .phoneme_table import PhonemeGroupTable, phoneme_table_load
from .synth import generate_corpus
from .trainer import (
    TrainConfig,
    calibrate_thresholds,
    holdout_split,
    joint_train,
    pretrain,
)

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "ArchConfig",
    "ClipRecord",
    "CurveTrack",
    "EvalReport",
    "FeatureStats",
    "ModelParams",
    "NUMBA_ENABLED",
    "PhonemeGroupTable",
    "StreamState",
    "TrainConfig",
    "activation_precision",
    "activation_recall",
    "backend_name",
    "calibrate_thresholds",
    "export_curves",
    "extract_features",
    "full_forward",
    "generate_corpus",
    "holdout_split",
    "infer_clip",
    "init_model_params",
    "joint_train",
    "leave_one_speaker_out",
    "load_checkpoint",
    "load_dataset",
    "motion_curve_difference",
    "normalize_features",
    "phoneme_table_load",
    "pretrain",
    "run_condition",
    "save_checkpoint",
    "save_dataset",
    "stack_context",
]
