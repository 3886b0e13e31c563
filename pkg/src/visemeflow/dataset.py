"""On-disk dataset format.

A dataset is a directory of clip subdirectories, each holding:

* ``audio.wav``   mono 16-bit PCM at 16 kHz
* ``labels.bin``  magic "VNLB", little-endian; layout below
* ``meta.json``   schema version, ids, style tag, section list

``labels.bin`` layout: magic, u32 version, u32 num_frames, u32 section
flags, then the present sections in fixed order: phoneme groups (i32 per
frame, -1 = unlabeled), landmark displacements (f32 x 76 per frame), rig
values (f32 x 29), activations (one u32 per frame, bit a = parameter a),
style-field values (f32 x 2).  Label sections are optional per clip:
audiovisual-style clips lack the rig/activation/style sections.
"""

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .audio_features import AudioClip, num_frames
from .errors import DataFormatError
from .wav_io import read_wav, write_wav

_MAGIC = b"VNLB"
_VERSION = 1

_FLAG_PHONEME = 1
_FLAG_LANDMARKS = 2
_FLAG_RIG = 4
_FLAG_ACTIVATIONS = 8
_FLAG_JALI = 16

STYLES = ("neutral", "expressive")


@dataclass
class ClipRecord:
    clip_id: str
    speaker_id: str
    style: str
    samples: np.ndarray  # int16 PCM at 16 kHz
    phoneme_groups: np.ndarray | None = None  # [T] int32
    landmarks: np.ndarray | None = None  # [T, 76] float32
    rig: np.ndarray | None = None  # [T, 29] float32
    activations: np.ndarray | None = None  # [T, 29] bool
    jali: np.ndarray | None = None  # [T, 2] float32

    def audio_clip(self) -> AudioClip:
        return AudioClip(self.samples)

    @property
    def num_frames(self) -> int:
        return num_frames(len(self.samples))

    def validate(self) -> None:
        t = self.num_frames
        if self.style not in STYLES:
            raise DataFormatError(f"clip {self.clip_id!r}: unknown style {self.style!r}")
        for name, arr, shape in (
            ("phoneme_groups", self.phoneme_groups, (t,)),
            ("landmarks", self.landmarks, (t, 76)),
            ("rig", self.rig, (t, 29)),
            ("activations", self.activations, (t, 29)),
            ("jali", self.jali, (t, 2)),
        ):
            if arr is not None and arr.shape != shape:
                raise DataFormatError(
                    f"clip {self.clip_id!r}: {name} shape {arr.shape} does not match "
                    f"audio frame count {t}"
                )
        for name, arr in (("rig", self.rig), ("jali", self.jali)):
            if arr is not None and (arr.min() < 0.0 or arr.max() > 1.0):
                raise DataFormatError(f"clip {self.clip_id!r}: {name} values outside [0, 1]")


def _pack_bits(activations: np.ndarray) -> np.ndarray:
    t, a = activations.shape
    words = np.zeros(t, dtype=np.uint32)
    for bit in range(a):
        words |= activations[:, bit].astype(np.uint32) << np.uint32(bit)
    return words


def _unpack_bits(words: np.ndarray, a: int = 29) -> np.ndarray:
    bits = np.zeros((words.shape[0], a), dtype=bool)
    for bit in range(a):
        bits[:, bit] = (words >> np.uint32(bit)) & np.uint32(1)
    return bits


def save_clip(record: ClipRecord, clip_dir) -> None:
    record.validate()
    os.makedirs(clip_dir, exist_ok=True)
    write_wav(os.path.join(clip_dir, "audio.wav"), record.samples)
    flags = 0
    sections = []
    if record.phoneme_groups is not None:
        flags |= _FLAG_PHONEME
        sections.append("phoneme")
    if record.landmarks is not None:
        flags |= _FLAG_LANDMARKS
        sections.append("landmarks")
    if record.rig is not None:
        flags |= _FLAG_RIG
        sections.append("rig")
    if record.activations is not None:
        flags |= _FLAG_ACTIVATIONS
        sections.append("activations")
    if record.jali is not None:
        flags |= _FLAG_JALI
        sections.append("jali")
    t = record.num_frames
    with open(os.path.join(clip_dir, "labels.bin"), "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", _VERSION, t, flags))
        if record.phoneme_groups is not None:
            fh.write(np.ascontiguousarray(record.phoneme_groups, "<i4").tobytes())
        if record.landmarks is not None:
            fh.write(np.ascontiguousarray(record.landmarks, "<f4").tobytes())
        if record.rig is not None:
            fh.write(np.ascontiguousarray(record.rig, "<f4").tobytes())
        if record.activations is not None:
            fh.write(_pack_bits(record.activations).astype("<u4").tobytes())
        if record.jali is not None:
            fh.write(np.ascontiguousarray(record.jali, "<f4").tobytes())
    meta = {
        "schema_version": _VERSION,
        "clip_id": record.clip_id,
        "speaker_id": record.speaker_id,
        "style": record.style,
        "num_frames": t,
        "sections": sections,
    }
    with open(os.path.join(clip_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1)


def load_clip(clip_dir) -> ClipRecord:
    meta_path = os.path.join(clip_dir, "meta.json")
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"unreadable clip metadata at {meta_path}: {exc}") from exc
    if meta.get("schema_version") != _VERSION:
        raise DataFormatError(f"unsupported dataset schema in {meta_path}")
    clip_id = meta["clip_id"]
    clip = read_wav(os.path.join(clip_dir, "audio.wav"))
    t = num_frames(len(clip.samples))
    if meta["num_frames"] != t:
        raise DataFormatError(
            f"clip {clip_id!r}: metadata says {meta['num_frames']} frames but audio "
            f"yields {t}"
        )
    with open(os.path.join(clip_dir, "labels.bin"), "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise DataFormatError(f"clip {clip_id!r}: bad labels.bin magic")
        version, t_file, flags = struct.unpack("<III", fh.read(12))
        if version != _VERSION:
            raise DataFormatError(f"clip {clip_id!r}: unsupported labels version {version}")
        if t_file != t:
            raise DataFormatError(
                f"clip {clip_id!r}: labels carry {t_file} frames but audio yields {t}"
            )

        def read_array(dtype, cols):
            n = t * cols
            data = np.frombuffer(fh.read(n * 4), dtype=dtype)
            if data.size != n:
                raise DataFormatError(f"clip {clip_id!r}: labels.bin truncated")
            return data.reshape(t, cols) if cols > 1 else data

        phoneme = read_array("<i4", 1).astype(np.int32) if flags & _FLAG_PHONEME else None
        landmarks = read_array("<f4", 76).astype(np.float32) if flags & _FLAG_LANDMARKS else None
        rig = read_array("<f4", 29).astype(np.float32) if flags & _FLAG_RIG else None
        activations = None
        if flags & _FLAG_ACTIVATIONS:
            activations = _unpack_bits(read_array("<u4", 1))
        jali = read_array("<f4", 2).astype(np.float32) if flags & _FLAG_JALI else None
    record = ClipRecord(
        clip_id=clip_id,
        speaker_id=meta["speaker_id"],
        style=meta["style"],
        samples=clip.samples,
        phoneme_groups=phoneme,
        landmarks=landmarks,
        rig=rig,
        activations=activations,
        jali=jali,
    )
    record.validate()
    return record


def save_dataset(records, root) -> None:
    os.makedirs(root, exist_ok=True)
    for r in records:
        save_clip(r, os.path.join(root, r.clip_id))


def load_dataset(root) -> list:
    if not os.path.isdir(root):
        raise DataFormatError(f"dataset directory {root!r} does not exist")
    names = sorted(
        d for d in os.listdir(root)
        if os.path.isfile(os.path.join(root, d, "meta.json"))
    )
    if not names:
        raise DataFormatError(f"no clips found under {root!r}")
    return [load_clip(os.path.join(root, d)) for d in names]


def as_audiovisual(record: ClipRecord) -> ClipRecord:
    """Copy of a clip with the rig-level sections stripped (the kind of
    clip an audiovisual corpus provides)."""
    return ClipRecord(
        clip_id=record.clip_id,
        speaker_id=record.speaker_id,
        style=record.style,
        samples=record.samples,
        phoneme_groups=record.phoneme_groups,
        landmarks=record.landmarks,
    )
