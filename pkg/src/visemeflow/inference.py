"""Batch and streaming viseme-curve inference.

Streaming consumes 16-bit PCM chunks of arbitrary size and emits the
output for frame t exactly when the audio through frame t+11 has arrived
(the 12-frame / 120 ms lookahead); :func:`flush` drains the tail using
last-frame replication.  Batch inference pushes the whole clip through the
same engine, so the two are bit-identical for every chunking.

Rig track a is nonzero only where its activation probability strictly
exceeds the calibrated threshold; the two style-field tracks are always
present.  No temporal smoothing is applied by default (smoothness is a
training objective); an optional median filter exists for post-hoc use.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .audio_features import (
    CONTEXT_FUTURE,
    CONTEXT_PAST,
    HOP_SIZE,
    PREEMPHASIS,
    WINDOW_SIZE,
    AudioClip,
    frame_features,
)
from .errors import AudioFormatError, DataFormatError, ShapeError
from .model import N_JALI, N_RIG, ModelParams, SequentialRunner

TRACK_NAMES = [f"viseme_{i:02d}" for i in range(20)] + [
    f"coart_{i}" for i in range(9)
] + ["jali_jaw", "jali_lip"]
N_TRACKS = N_RIG + N_JALI
FPS = 100.0


@dataclass
class FrameOutput:
    """One emitted frame of gated rig state."""

    frame: int
    activation_probs: np.ndarray  # [29]
    active: np.ndarray  # [29] bool
    values: np.ndarray  # [29], zero where inactive
    jali: np.ndarray  # [2]


class StreamState:
    """Single-owner incremental decoder over one audio stream."""

    def __init__(self, params: ModelParams):
        self.params = params
        self.runner = SequentialRunner(params)
        self._mean = params.stats.mean
        self._std = params.stats.std
        self._emphasized = np.empty(0, dtype=np.float64)
        self._consumed = 0  # samples dropped from the front of _emphasized
        self._last_raw = None  # final raw sample of the previous chunk
        self._features: list = []  # normalized float32 frames, windowed
        self._feat_base = 0  # absolute index of _features[0]
        self._n_feat = 0  # feature frames computed so far
        self._n_emitted = 0
        self._total_samples = 0
        self._finished = False

    # -- internals ----------------------------------------------------------

    def _ingest(self, chunk: np.ndarray) -> None:
        chunk = np.asarray(chunk)
        if chunk.dtype != np.int16:
            raise AudioFormatError(f"stream chunks must be int16 PCM, got {chunk.dtype}")
        if chunk.ndim != 1:
            raise AudioFormatError("stream chunks must be 1-D")
        if chunk.size == 0:
            return
        x = chunk.astype(np.float64)
        y = np.empty_like(x)
        if self._last_raw is None:
            y[0] = x[0]
        else:
            y[0] = x[0] - PREEMPHASIS * self._last_raw
        y[1:] = x[1:] - PREEMPHASIS * x[:-1]
        self._last_raw = float(x[-1])
        self._emphasized = np.concatenate([self._emphasized, y])
        self._total_samples += chunk.size

    def _extract_ready_frames(self) -> None:
        while self._n_feat * HOP_SIZE + WINDOW_SIZE <= self._total_samples:
            start = self._n_feat * HOP_SIZE - self._consumed
            window = self._emphasized[start : start + WINDOW_SIZE]
            feats = (frame_features(window) - self._mean) / self._std
            self._features.append(feats.astype(np.float32))
            self._n_feat += 1
        # drop audio no future window can need
        keep_from = self._n_feat * HOP_SIZE
        if keep_from - self._consumed > 4 * WINDOW_SIZE:
            self._emphasized = self._emphasized[keep_from - self._consumed :]
            self._consumed = keep_from

    def _context(self, t: int) -> np.ndarray:
        idx = np.clip(
            np.arange(t - CONTEXT_PAST, t + CONTEXT_FUTURE + 1), 0, self._n_feat - 1
        )
        rows = [self._features[i - self._feat_base] for i in idx]
        return np.concatenate(rows)

    def _emit_ready(self, drain: bool) -> list:
        out = []
        thr = self.params.thresholds
        while True:
            t = self._n_emitted
            if not drain and self._n_feat < t + CONTEXT_FUTURE + 1:
                break
            if drain and t >= self._n_feat:
                break
            _, _, probs, v_raw, y_raw = self.runner.step(self._context(t))
            active = probs > thr
            values = np.clip(v_raw, 0.0, 1.0) * active
            jali = np.clip(y_raw, 0.0, 1.0)
            out.append(FrameOutput(t, probs, active, values, jali))
            self._n_emitted += 1
            # frames older than the context window of the next emit can go
            drop_before = self._n_emitted - CONTEXT_PAST
            while self._feat_base < drop_before:
                self._features.pop(0)
                self._feat_base += 1
        return out

    # -- public API ---------------------------------------------------------

    @property
    def frames_emitted(self) -> int:
        return self._n_emitted

    @property
    def samples_consumed(self) -> int:
        return self._total_samples

    def push(self, chunk: np.ndarray) -> list:
        """Feed PCM samples; returns the frames that became emittable."""
        if self._finished:
            raise AudioFormatError("stream already flushed; chunks out of order")
        self._ingest(chunk)
        self._extract_ready_frames()
        return self._emit_ready(drain=False)

    def flush(self) -> list:
        """End of stream: emit remaining frames with end replication."""
        if self._finished:
            return []
        self._finished = True
        if self._n_feat == 0:
            if self._total_samples < WINDOW_SIZE:
                raise AudioFormatError(
                    f"stream ended after {self._total_samples} samples; need at "
                    f"least one {WINDOW_SIZE}-sample window"
                )
        return self._emit_ready(drain=True)


# ---------------------------------------------------------------------------
# curve tracks


@dataclass
class CurveTrack:
    parameter_id: int  # 0..28 rig, 29..30 style field
    name: str
    values: np.ndarray  # [T] float32 in [0, 1]
    active_runs: list = field(default_factory=list)  # [start, end) frame spans

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.shape[0]) / FPS


def _runs_from_mask(mask: np.ndarray) -> list:
    runs = []
    start = None
    for t, on in enumerate(mask):
        if on and start is None:
            start = t
        elif not on and start is not None:
            runs.append((start, t))
            start = None
    if start is not None:
        runs.append((start, len(mask)))
    return runs


def tracks_from_frames(frames: list) -> list:
    """Assemble 31 curve tracks from emitted per-frame outputs."""
    t = len(frames)
    values = np.zeros((t, N_RIG), dtype=np.float32)
    active = np.zeros((t, N_RIG), dtype=bool)
    probs = np.zeros((t, N_RIG), dtype=np.float32)
    jali = np.zeros((t, N_JALI), dtype=np.float32)
    for i, fr in enumerate(frames):
        values[i] = fr.values
        active[i] = fr.active
        probs[i] = fr.activation_probs
        jali[i] = fr.jali
    tracks = []
    for a in range(N_RIG):
        tracks.append(
            CurveTrack(a, TRACK_NAMES[a], values[:, a], _runs_from_mask(active[:, a]))
        )
    for j in range(N_JALI):
        runs = [(0, t)] if t else []
        tracks.append(CurveTrack(N_RIG + j, TRACK_NAMES[N_RIG + j], jali[:, j], runs))
    return tracks, active, probs


def infer_clip(clip: AudioClip, params: ModelParams):
    """Whole-clip inference; returns (tracks, activation bits, probabilities)."""
    clip.validate()
    stream = StreamState(params)
    frames = stream.push(clip.samples)
    frames += stream.flush()
    return tracks_from_frames(frames)


# ---------------------------------------------------------------------------
# export formats


def _track_matrix(tracks) -> tuple:
    by_id = {t.parameter_id: t for t in tracks}
    if sorted(by_id) != list(range(N_TRACKS)):
        raise ShapeError(f"expected track ids 0..{N_TRACKS - 1}")
    n = by_id[0].values.shape[0]
    rig = np.stack([by_id[a].values for a in range(N_RIG)], axis=1) if n else np.zeros((0, N_RIG))
    jali = (
        np.stack([by_id[N_RIG + j].values for j in range(N_JALI)], axis=1)
        if n
        else np.zeros((0, N_JALI))
    )
    act = np.zeros((n, N_RIG), dtype=bool)
    for a in range(N_RIG):
        for start, end in by_id[a].active_runs:
            act[start:end, a] = True
    return rig, jali, act


CSV_HEADER = (
    ["frame", "time_s"]
    + [f"rig_{a:02d}" for a in range(N_RIG)]
    + ["jali_jaw", "jali_lip"]
    + [f"act_{a:02d}" for a in range(N_RIG)]
)


def export_curves_csv(tracks, path) -> None:
    rig, jali, act = _track_matrix(tracks)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for t in range(rig.shape[0]):
            row = [t, repr(t / FPS)]
            row += [repr(float(v)) for v in rig[t]]
            row += [repr(float(v)) for v in jali[t]]
            row += [int(b) for b in act[t]]
            writer.writerow(row)


def import_curves_csv(path) -> list:
    """Inverse of :func:`export_curves_csv` (exact round trip)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise DataFormatError(f"unexpected curve CSV header in {path}")
        rows = list(reader)
    n = len(rows)
    rig = np.zeros((n, N_RIG), dtype=np.float32)
    jali = np.zeros((n, N_JALI), dtype=np.float32)
    act = np.zeros((n, N_RIG), dtype=bool)
    for i, row in enumerate(rows):
        rig[i] = [np.float32(float(v)) for v in row[2 : 2 + N_RIG]]
        jali[i] = [np.float32(float(v)) for v in row[2 + N_RIG : 2 + N_RIG + N_JALI]]
        act[i] = [bool(int(v)) for v in row[2 + N_RIG + N_JALI :]]
    tracks = []
    for a in range(N_RIG):
        tracks.append(CurveTrack(a, TRACK_NAMES[a], rig[:, a], _runs_from_mask(act[:, a])))
    for j in range(N_JALI):
        runs = [(0, n)] if n else []
        tracks.append(CurveTrack(N_RIG + j, TRACK_NAMES[N_RIG + j], jali[:, j], runs))
    return tracks


def _run_keyframes(values: np.ndarray, start: int, end: int) -> list:
    """Sparse keys: run boundaries plus slope-change frames inside the run."""
    keys = [start]
    for t in range(start + 1, end - 1):
        dl = float(values[t]) - float(values[t - 1])
        dr = float(values[t + 1]) - float(values[t])
        if np.sign(dl) != np.sign(dr):
            keys.append(t)
    if end - 1 != start:
        keys.append(end - 1)
    return keys


def export_curves_keyframes(tracks, path) -> None:
    doc = {"version": 1, "fps": int(FPS), "tracks": []}
    for track in sorted(tracks, key=lambda t: t.parameter_id):
        keys = []
        for start, end in track.active_runs:
            for frame in _run_keyframes(track.values, start, end):
                keys.append(
                    {
                        "frame": int(frame),
                        "time_s": frame / FPS,
                        "value": float(track.values[frame]),
                    }
                )
        doc["tracks"].append(
            {"parameter_id": track.parameter_id, "name": track.name, "keys": keys}
        )
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def export_curves(tracks, path, format: str = "csv") -> None:
    if format == "csv":
        export_curves_csv(tracks, path)
    elif format == "keyframe-json":
        export_curves_keyframes(tracks, path)
    else:
        raise ValueError(f"unknown export format {format!r}")


def median_filter_tracks(tracks, width: int = 5) -> list:
    """Optional post-hoc smoothing (off by default everywhere)."""
    if width % 2 != 1 or width < 3:
        raise ValueError("median filter width must be an odd integer >= 3")
    out = []
    half = width // 2
    for track in tracks:
        v = track.values
        if v.shape[0] >= width:
            padded = np.pad(v, half, mode="edge")
            windows = np.lib.stride_tricks.sliding_window_view(padded, width)
            v = np.median(windows, axis=1).astype(np.float32)
        out.append(CurveTrack(track.parameter_id, track.name, v, list(track.active_runs)))
    return out
