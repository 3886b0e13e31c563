"""RIFF WAV reading/writing for mono 16-bit 16 kHz PCM."""

import wave

import numpy as np

from .audio_features import SAMPLE_RATE, AudioClip
from .errors import AudioFormatError


def read_wav(path) -> AudioClip:
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            rate = wf.getframerate()
            comptype = wf.getcomptype()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise AudioFormatError(f"not a readable RIFF WAV file: {exc}") from exc
    if comptype != "NONE":
        raise AudioFormatError(f"compressed WAV ({comptype}) unsupported; need PCM")
    if sampwidth != 2:
        raise AudioFormatError(f"{8 * sampwidth}-bit WAV unsupported; need 16-bit PCM")
    if channels != 1:
        raise AudioFormatError(f"{channels}-channel WAV unsupported; need mono")
    if rate != SAMPLE_RATE:
        raise AudioFormatError(
            f"sample rate {rate} Hz unsupported; expected {SAMPLE_RATE} Hz — "
            "resample externally"
        )
    samples = np.frombuffer(raw, dtype="<i2").astype(np.int16)
    clip = AudioClip(samples, rate)
    clip.validate()
    return clip


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    data = np.ascontiguousarray(samples, dtype="<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(data.tobytes())
