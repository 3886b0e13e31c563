"""Spectral front end: 65-dim per-frame features at 100 FPS.

Each frame concatenates 13 cepstral coefficients, 26 log mel filterbank
energies, and 26 normalized subband centroids, computed over 25 ms Hamming
windows hopped every 10 ms on 16 kHz mono PCM.  Frames are stacked into
24-frame context vectors (12 past, current, 11 future) for the network.

Feature extraction is deliberately per-frame (no batched FFT): the
streaming path reuses :func:`frame_features` on identical windows, which
makes batch and streaming output bit-identical.
"""

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .errors import AudioFormatError, DataFormatError, ShapeError

SAMPLE_RATE = 16000
WINDOW_SIZE = 400  # 25 ms
HOP_SIZE = 160  # 10 ms
NFFT = 512
N_MELS = 26
N_MFCC = 13
PREEMPHASIS = 0.97
ENERGY_FLOOR = 1e-10
FEATURE_DIM = 65
CONTEXT_PAST = 12
CONTEXT_FUTURE = 11
CONTEXT_FRAMES = CONTEXT_PAST + 1 + CONTEXT_FUTURE
CONTEXT_DIM = FEATURE_DIM * CONTEXT_FRAMES
CENTER_SLICE = slice(CONTEXT_PAST * FEATURE_DIM, (CONTEXT_PAST + 1) * FEATURE_DIM)

MFCC_SLICE = slice(0, 13)
MFB_SLICE = slice(13, 39)
SSC_SLICE = slice(39, 65)

_FEATURE_MAGIC = b"VNFT"
_FEATURE_VERSION = 1


@dataclass
class AudioClip:
    """Mono 16-bit PCM audio at 16 kHz."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def validate(self) -> None:
        if self.sample_rate != SAMPLE_RATE:
            raise AudioFormatError(
                f"sample rate {self.sample_rate} Hz unsupported; expected "
                f"{SAMPLE_RATE} Hz — resample externally"
            )
        if self.samples.ndim != 1:
            raise AudioFormatError("audio must be mono (1-D sample array)")
        if self.samples.dtype != np.int16:
            raise AudioFormatError(f"expected int16 PCM samples, got {self.samples.dtype}")
        if len(self.samples) < WINDOW_SIZE:
            raise AudioFormatError(
                f"clip has {len(self.samples)} samples; need at least one "
                f"{WINDOW_SIZE}-sample analysis window"
            )


def num_frames(num_samples: int) -> int:
    return (num_samples - WINDOW_SIZE) // HOP_SIZE + 1


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + f / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def _build_filterbank():
    """Triangular mel filters on integer FFT bins, 0 Hz to Nyquist."""
    mel_points = np.linspace(_hz_to_mel(0.0), _hz_to_mel(SAMPLE_RATE / 2.0), N_MELS + 2)
    bins = np.floor((NFFT + 1) * _mel_to_hz(mel_points) / SAMPLE_RATE).astype(int)
    if np.any(np.diff(bins) < 1):
        raise AssertionError("mel boundaries collapsed onto the same FFT bin")
    fbank = np.zeros((N_MELS, NFFT // 2 + 1))
    for m in range(N_MELS):
        lo, mid, hi = bins[m], bins[m + 1], bins[m + 2]
        for i in range(lo, mid):
            fbank[m, i] = (i - lo) / (mid - lo)
        for i in range(mid, hi):
            fbank[m, i] = (hi - i) / (hi - mid)
    return fbank, bins


_FBANK, _MEL_BINS = _build_filterbank()
# Normalized apex frequency of each band; the centroid fallback for silent bands.
_BAND_CENTERS = _MEL_BINS[1 : N_MELS + 1] / (NFFT // 2)
_FREQS_NORM = np.arange(NFFT // 2 + 1) / (NFFT // 2)
_HAMMING = np.hamming(WINDOW_SIZE)


def _build_dct_matrix():
    """Orthonormal DCT-II matrix taking 26 log energies to 13 coefficients."""
    n = np.arange(N_MELS)
    k = np.arange(N_MFCC)[:, None]
    mat = np.cos(np.pi * k * (2 * n + 1) / (2 * N_MELS))
    mat *= np.sqrt(2.0 / N_MELS)
    mat[0] *= np.sqrt(0.5)
    return mat


_DCT = _build_dct_matrix()


def preemphasize(samples: np.ndarray) -> np.ndarray:
    """y[0] = x[0]; y[n] = x[n] - 0.97 x[n-1]."""
    x = samples.astype(np.float64)
    y = np.empty_like(x)
    y[0] = x[0]
    y[1:] = x[1:] - PREEMPHASIS * x[:-1]
    return y


def frame_features(window: np.ndarray) -> np.ndarray:
    """65-dim feature vector from one pre-emphasized 400-sample window."""
    spec = np.fft.rfft(window * _HAMMING, NFFT)
    power = (spec.real * spec.real + spec.imag * spec.imag) / NFFT
    band_energy = _FBANK @ power
    mfb = np.log(np.maximum(band_energy, ENERGY_FLOOR))
    mfcc = _DCT @ mfb
    num = _FBANK @ (power * _FREQS_NORM)
    ssc = np.where(band_energy > 0.0, num / np.where(band_energy > 0.0, band_energy, 1.0), _BAND_CENTERS)
    out = np.empty(FEATURE_DIM)
    out[MFCC_SLICE] = mfcc
    out[MFB_SLICE] = mfb
    out[SSC_SLICE] = ssc
    return out


def extract_features(clip: AudioClip) -> np.ndarray:
    """Per-frame features for a whole clip, shape [num_frames, 65]."""
    clip.validate()
    emphasized = preemphasize(clip.samples)
    n = num_frames(len(clip.samples))
    feats = np.empty((n, FEATURE_DIM))
    for t in range(n):
        start = t * HOP_SIZE
        feats[t] = frame_features(emphasized[start : start + WINDOW_SIZE])
    return feats


def context_indices(n: int) -> np.ndarray:
    """[n, 24] frame indices with edge replication at clip boundaries."""
    offsets = np.arange(-CONTEXT_PAST, CONTEXT_FUTURE + 1)
    idx = np.arange(n)[:, None] + offsets[None, :]
    return np.clip(idx, 0, n - 1)


def stack_context(features: np.ndarray, t: int) -> np.ndarray:
    """Concatenate frames t-12 .. t+11 (edges replicated) into one vector."""
    if features.ndim != 2 or features.shape[0] == 0:
        raise ShapeError("features must be a nonempty [T, dim] array")
    n = features.shape[0]
    if not 0 <= t < n:
        raise ShapeError(f"frame index {t} outside [0, {n})")
    idx = np.clip(np.arange(t - CONTEXT_PAST, t + CONTEXT_FUTURE + 1), 0, n - 1)
    return features[idx].reshape(-1)


def stack_all_contexts(features: np.ndarray) -> np.ndarray:
    """Context vectors for every frame, shape [T, 24 * dim]."""
    if features.ndim != 2 or features.shape[0] == 0:
        raise ShapeError("features must be a nonempty [T, dim] array")
    idx = context_indices(features.shape[0])
    return features[idx].reshape(features.shape[0], -1)


@dataclass
class FeatureStats:
    """Per-dimension normalization statistics (std floored at 1e-8).

    Values are quantized to single precision on construction: checkpoints
    store them as f32, and inference must be identical after a save/load
    round trip.
    """

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, np.float64).astype(np.float32).astype(np.float64)
        self.std = np.asarray(self.std, np.float64).astype(np.float32).astype(np.float64)


def compute_feature_stats(feature_arrays) -> FeatureStats:
    stacked = np.concatenate([np.asarray(f, dtype=np.float64) for f in feature_arrays], axis=0)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), 1e-8)
    return FeatureStats(mean, std)


def normalize_features(frames: np.ndarray, stats: FeatureStats) -> np.ndarray:
    if frames.shape[-1] != stats.mean.shape[0]:
        raise ShapeError(
            f"feature dim {frames.shape[-1]} != stats dim {stats.mean.shape[0]}"
        )
    return (frames - stats.mean) / stats.std


def denormalize_features(frames: np.ndarray, stats: FeatureStats) -> np.ndarray:
    if frames.shape[-1] != stats.mean.shape[0]:
        raise ShapeError(
            f"feature dim {frames.shape[-1]} != stats dim {stats.mean.shape[0]}"
        )
    return frames * stats.std + stats.mean


# ---------------------------------------------------------------------------
# feature dump formats


def write_feature_dump(path, features: np.ndarray) -> None:
    """Binary dump: magic, u32 version, u32 frames, u32 dim, f32 rows (LE)."""
    feats = np.ascontiguousarray(features, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_FEATURE_MAGIC)
        fh.write(struct.pack("<III", _FEATURE_VERSION, feats.shape[0], feats.shape[1]))
        fh.write(feats.tobytes())


def read_feature_dump(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _FEATURE_MAGIC:
            raise DataFormatError(f"bad feature dump magic {magic!r}")
        version, n, dim = struct.unpack("<III", fh.read(12))
        if version != _FEATURE_VERSION:
            raise DataFormatError(f"unsupported feature dump version {version}")
        data = np.frombuffer(fh.read(n * dim * 4), dtype="<f4")
        if data.size != n * dim:
            raise DataFormatError("feature dump truncated")
    return data.reshape(n, dim).astype(np.float32)


def write_feature_csv(path, features: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_index"] + [f"f{i}" for i in range(features.shape[1])])
        for t, row in enumerate(features):
            writer.writerow([t] + [repr(float(v)) for v in row])
