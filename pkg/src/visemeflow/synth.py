"""Synthetic audiovisual corpus generator.

Each clip is a continuous sequence of phoneme-group segments (80-320 ms
each).  Audio is two formant sinusoids per group (speaker-scaled, pitch
modulated, band-limited noise added for fricative groups), landmarks
follow a critically damped pull toward per-group pose targets, viseme rig
curves are trapezoids (40 ms attack, sustain, 60 ms decay) whose overlap
at boundaries drives the co-articulation parameters, and the style field
is a per-clip point with slow drift.  Activation bits are exactly
``value > 1e-3``.

Group order comes from a per-speaker shuffled deck, so any corpus with
roughly twenty segments per speaker covers all twenty groups.  Everything
derives deterministically from the corpus seed.
"""

import numpy as np

from .audio_features import HOP_SIZE, SAMPLE_RATE, WINDOW_SIZE
from .dataset import ClipRecord
from .errors import ConfigError

N_GROUPS = 20
N_RIG = 29
N_VISEME_PARAMS = 20
N_COART = 9
ACTIVATION_RULE_EPS = 1e-3

ATTACK_FRAMES = 4  # 40 ms
DECAY_FRAMES = 6  # 60 ms

_F1_CHOICES = np.array([260.0, 350.0, 440.0, 530.0, 620.0])
_F2_CHOICES = np.array([900.0, 1400.0, 1900.0, 2400.0])

# Noise bands (Hz) for the fricative-like groups.
_NOISE_BANDS = {1: (2000.0, 7000.0), 2: (1500.0, 6000.0), 4: (4000.0, 7800.0), 5: (2000.0, 4500.0)}


def group_formants(group: int) -> tuple:
    return float(_F1_CHOICES[group % 5]), float(_F2_CHOICES[group // 5])


def _articulation(group: int) -> tuple:
    """(jaw, round, stretch, press) pose coefficients for a group."""
    jaw = 0.25 + 0.17 * (group % 5)
    rnd = 0.8 - 0.25 * (group // 5)
    stretch = 0.1 + 0.22 * (group // 5)
    press = 0.7 if group in (0, 1) else 0.1
    return jaw, rnd, stretch, press


def _landmark_layout() -> np.ndarray:
    """Stylized lower-face landmark positions: 20 mouth ring, 10 jaw, 8 nose."""
    pts = []
    ring = np.linspace(0.0, 2.0 * np.pi, 20, endpoint=False)
    pts.extend([(0.45 * np.cos(a), 0.25 * np.sin(a) - 0.15) for a in ring])
    jaw = np.linspace(-np.pi * 0.8, -np.pi * 0.2, 10)
    pts.extend([(0.85 * np.cos(a), 0.75 * np.sin(a) - 0.1) for a in jaw])
    nose = np.linspace(-0.3, 0.3, 8)
    pts.extend([(x, 0.55) for x in nose])
    return np.array(pts)  # [38, 2]


def _pose_bases() -> np.ndarray:
    """Four 76-dim displacement patterns: jaw-open, round, stretch, press."""
    pts = _landmark_layout()
    n = pts.shape[0]
    jaw = np.zeros((n, 2))
    jaw[20:30, 1] = -1.0  # jaw line drops
    jaw[:20, 1] = np.where(pts[:20, 1] < -0.15, -0.6, -0.1)  # lower lip follows
    rnd = np.zeros((n, 2))
    rnd[:20, 0] = -0.8 * np.sign(pts[:20, 0])  # corners pull inward
    rnd[:20, 1] = 0.2
    stretch = np.zeros((n, 2))
    stretch[:20, 0] = 0.7 * np.sign(pts[:20, 0])
    press = np.zeros((n, 2))
    press[:20, 1] = np.where(pts[:20, 1] < -0.15, 0.5, -0.5)  # lips close together
    bases = np.stack([jaw.reshape(-1), rnd.reshape(-1), stretch.reshape(-1), press.reshape(-1)])
    return 0.25 * bases  # keep pose targets bounded well inside [-1, 1]


_POSE_BASES = _pose_bases()


class SynthSpeakerProfile:
    """Per-speaker voice and pose parameters."""

    def __init__(self, speaker_id: str, rng: np.random.Generator):
        self.speaker_id = speaker_id
        self.formant_scale = float(rng.uniform(0.92, 1.08))
        self.pitch = float(rng.uniform(85.0, 220.0))
        self.pose_gain = float(rng.uniform(0.85, 1.15))
        self.jali_neutral = np.array([rng.uniform(0.22, 0.42), rng.uniform(0.3, 0.5)])
        self.jali_expressive = np.array([rng.uniform(0.6, 0.85), rng.uniform(0.55, 0.8)])

    def formants(self, group: int) -> tuple:
        f1, f2 = group_formants(group)
        return f1 * self.formant_scale, f2 * self.formant_scale


def _segment_plan(rng, deck, target_frames):
    """(group, frames) segments drawn from the speaker's shuffled deck."""
    segments = []
    total = 0
    while total < target_frames:
        if not deck:
            refill = list(rng.permutation(N_GROUPS))
            if segments and refill[0] == segments[-1][0]:
                refill[0], refill[1] = refill[1], refill[0]
            deck.extend(refill)
        group = int(deck.pop(0))
        frames = int(rng.integers(8, 33))  # 80..320 ms
        segments.append((group, frames))
        total += frames
    return segments, total


def _bandlimited_noise(rng, n, lo_hz, hi_hz):
    noise = rng.standard_normal(n)
    spec = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
    spec[(freqs < lo_hz) | (freqs > hi_hz)] = 0.0
    shaped = np.fft.irfft(spec, n)
    peak = np.max(np.abs(shaped))
    return shaped / peak if peak > 0 else shaped


def _synthesize_audio(rng, segments, jali_jaw, seg_amp, profile):
    t_frames = sum(f for _, f in segments)
    n = t_frames * HOP_SIZE + (WINDOW_SIZE - HOP_SIZE)
    f1 = np.empty(n)
    f2 = np.empty(n)
    amp_frame = np.empty(t_frames)
    start = 0
    for k, (group, frames) in enumerate(segments):
        s1, s2 = profile.formants(group)
        lo = start * HOP_SIZE
        hi = min(n, (start + frames) * HOP_SIZE)
        f1[lo:hi] = s1
        f2[lo:hi] = s2
        amp_frame[start : start + frames] = seg_amp[k]
        start += frames
    f1[hi:] = s1
    f2[hi:] = s2

    phase1 = 2.0 * np.pi * np.cumsum(f1) / SAMPLE_RATE
    phase2 = 2.0 * np.pi * np.cumsum(f2) / SAMPLE_RATE
    wave = 0.6 * np.sin(phase1) + 0.4 * np.sin(phase2)

    # style-coupled loudness, smoothed to sample rate to avoid clicks
    env_frame = amp_frame * (0.7 + 0.3 * jali_jaw)
    env = np.repeat(env_frame, HOP_SIZE)
    env = np.concatenate([env, np.full(n - env.size, env[-1])])
    kernel = np.ones(320) / 320.0
    env = np.convolve(env, kernel, mode="same")
    voicing = 1.0 + 0.25 * np.sin(2.0 * np.pi * profile.pitch * np.arange(n) / SAMPLE_RATE)
    wave = wave * env * (voicing / 1.25)

    start = 0
    for k, (group, frames) in enumerate(segments):
        band = _NOISE_BANDS.get(group)
        lo = start * HOP_SIZE
        hi = min(n, (start + frames) * HOP_SIZE)
        if band is not None:
            noise = _bandlimited_noise(rng, hi - lo, band[0], band[1])
            wave[lo:hi] += 0.55 * seg_amp[k] * noise
        start += frames

    pcm = np.clip(wave * 0.55, -1.0, 1.0)
    return (pcm * 32767.0).astype(np.int16)


def _rig_curves(segments, jali_jaw, seg_amp, rng):
    t_frames = sum(f for _, f in segments)
    rig = np.zeros((t_frames, N_RIG))
    start = 0
    bounds = []
    for k, (group, frames) in enumerate(segments):
        end = start + frames
        peak = min(0.35 + 0.6 * seg_amp[k] * rng.uniform(0.9, 1.0), 1.0)
        for j in range(ATTACK_FRAMES):
            f = start + j
            if f < t_frames:
                rig[f, group] = max(rig[f, group], peak * (j + 1) / ATTACK_FRAMES)
        sustain = np.arange(start + ATTACK_FRAMES, min(end, t_frames))
        rig[sustain, group] = np.maximum(rig[sustain, group], peak)
        for j in range(DECAY_FRAMES):
            f = end + j
            if f < t_frames:
                rig[f, group] = max(rig[f, group], peak * (DECAY_FRAMES - 1 - j) / DECAY_FRAMES)
        if k > 0:
            bounds.append((start, segments[k - 1][0], group))
        start = end

    # co-articulation parameters rise on transitions, gated by style
    # intensity; the 0.45 gate sits above the neutral jaw range, so these
    # parameters are a cleanly style-dependent signal
    for frame, g_prev, g_next in bounds:
        idx = N_VISEME_PARAMS + (g_prev * 7 + g_next * 3) % N_COART
        strength = min(1.6 * max(jali_jaw[frame] - 0.45, 0.0), 0.85)
        if strength <= 0.0:
            continue
        for j in range(-5, 6):
            f = frame + j
            if 0 <= f < t_frames:
                value = strength * (1.0 - abs(j) / 6.0)
                rig[f, idx] = max(rig[f, idx], value)
    return np.clip(rig, 0.0, 1.0)


def _landmark_curves(segments, jali, seg_amp, profile, rng):
    t_frames = sum(f for _, f in segments)
    coeffs = np.empty((t_frames, 4))
    start = 0
    for k, (group, frames) in enumerate(segments):
        jaw_g, rnd_g, str_g, prs_g = _articulation(group)
        sl = slice(start, start + frames)
        jaw_fac = 0.5 + 0.9 * jali[sl, 0]
        lip_fac = 0.5 + 0.9 * jali[sl, 1]
        coeffs[sl, 0] = jaw_g * jaw_fac * seg_amp[k]
        coeffs[sl, 1] = rnd_g * lip_fac * seg_amp[k]
        coeffs[sl, 2] = str_g * seg_amp[k]
        coeffs[sl, 3] = prs_g * seg_amp[k]
        start += frames
    targets = profile.pose_gain * (coeffs @ _POSE_BASES)  # [T, 76]

    # critically damped tracking at 100 Hz
    omega, dt = 30.0, 0.01
    q = np.zeros(76)
    vel = np.zeros(76)
    out = np.empty_like(targets)
    for t in range(t_frames):
        vel += dt * (omega * omega * (targets[t] - q) - 2.0 * omega * vel)
        q = q + dt * vel
        out[t] = q
    out += rng.normal(0.0, 0.002, out.shape)
    return out


def generate_clip(clip_id: str, profile: SynthSpeakerProfile, style: str,
                  rng: np.random.Generator, deck: list,
                  min_frames: int = 250, max_frames: int = 380) -> ClipRecord:
    target = int(rng.integers(min_frames, max_frames + 1))
    segments, t_frames = _segment_plan(rng, deck, target)

    base = profile.jali_expressive if style == "expressive" else profile.jali_neutral
    tt = np.arange(t_frames)
    drift_phase = rng.uniform(0.0, 2.0 * np.pi, 2)
    jali = np.empty((t_frames, 2))
    jali[:, 0] = base[0] + 0.03 * np.sin(2.0 * np.pi * tt / t_frames + drift_phase[0])
    jali[:, 1] = base[1] + 0.03 * np.sin(4.0 * np.pi * tt / t_frames + drift_phase[1])
    jali = np.clip(jali, 0.0, 1.0)

    seg_amp = np.empty(len(segments))
    start = 0
    for k, (_, frames) in enumerate(segments):
        jaw_mean = jali[start : start + frames, 0].mean()
        seg_amp[k] = (0.55 + 0.45 * jaw_mean) * rng.uniform(0.85, 1.0)
        start += frames

    labels = np.concatenate(
        [np.full(frames, group, dtype=np.int32) for group, frames in segments]
    )
    samples = _synthesize_audio(rng, segments, jali[:, 0], seg_amp, profile)
    rig = _rig_curves(segments, jali[:, 0], seg_amp, rng).astype(np.float32)
    landmarks = _landmark_curves(segments, jali, seg_amp, profile, rng)
    record = ClipRecord(
        clip_id=clip_id,
        speaker_id=profile.speaker_id,
        style=style,
        samples=samples,
        phoneme_groups=labels,
        landmarks=landmarks.astype(np.float32),
        rig=rig,
        activations=rig > ACTIVATION_RULE_EPS,
        jali=jali.astype(np.float32),
    )
    record.validate()
    return record


def generate_corpus(num_speakers: int, clips_per_speaker: int, seed: int,
                    min_frames: int = 250, max_frames: int = 380) -> list:
    """Deterministic corpus: same seed, byte-identical clips."""
    if num_speakers < 1:
        raise ConfigError("num_speakers must be >= 1")
    if clips_per_speaker < 1:
        raise ConfigError("clips_per_speaker must be >= 1")
    records = []
    speaker_seeds = np.random.SeedSequence(seed).spawn(num_speakers)
    for s, speaker_seed in enumerate(speaker_seeds):
        streams = speaker_seed.spawn(clips_per_speaker + 1)
        profile = SynthSpeakerProfile(f"spk{s:02d}", np.random.default_rng(streams[0]))
        deck: list = []
        for c in range(clips_per_speaker):
            style = "neutral" if c % 2 == 0 else "expressive"
            rng = np.random.default_rng(streams[c + 1])
            records.append(
                generate_clip(
                    f"s{s:02d}_c{c:03d}", profile, style, rng, deck,
                    min_frames, max_frames,
                )
            )
    return records
