"""Benchmarks: streaming real-time budget and numba-vs-numpy kernel timings.

The real-time measurement streams synthetic audio through the full
pipeline (feature extraction + forward pass) in 10 ms chunks and reports
steady-state milliseconds per emitted frame.  The kernel benchmark times
the recurrent training kernels under the active backend;
``compare_backends`` runs it in two subprocesses, one per backend.
"""

import os
import subprocess
import sys
import time

import numpy as np

from . import model, net_core
from .audio_features import HOP_SIZE, SAMPLE_RATE
from .backend import backend_name
from .inference import StreamState
from .model import ArchConfig


def _benchmark_audio(seconds: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = int(seconds * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    wave = 0.4 * np.sin(2 * np.pi * 220.0 * t) + 0.25 * np.sin(2 * np.pi * 1400.0 * t)
    wave += 0.1 * rng.standard_normal(n)
    return (np.clip(wave, -1, 1) * 20000).astype(np.int16)


def realtime_benchmark(seconds: float = 60.0, seed: int = 0,
                       params: model.ModelParams | None = None,
                       warmup_seconds: float = 2.0) -> dict:
    """Stream `seconds` of audio; returns per-frame timing statistics (ms)."""
    if params is None:
        params = model.init_model_params(np.random.default_rng(seed), ArchConfig())
    stream = StreamState(params)
    stream.push(_benchmark_audio(warmup_seconds, seed + 1))  # compile + warm caches

    audio = _benchmark_audio(seconds, seed)
    frames_before = stream.frames_emitted
    chunk_times = []
    emitted = []
    start_all = time.perf_counter()
    for off in range(0, len(audio), HOP_SIZE):
        t0 = time.perf_counter()
        out = stream.push(audio[off : off + HOP_SIZE])
        chunk_times.append(time.perf_counter() - t0)
        emitted.append(len(out))
    total = time.perf_counter() - start_all
    frames = stream.frames_emitted - frames_before
    per_emit = [t / n for t, n in zip(chunk_times, emitted) if n > 0]
    return {
        "backend": backend_name(),
        "frames": frames,
        "seconds_audio": seconds,
        "ms_per_frame_mean": 1000.0 * total / frames,
        "ms_per_frame_p95": 1000.0 * float(np.percentile(per_emit, 95)),
        "ms_per_frame_max": 1000.0 * float(np.max(per_emit)),
        "realtime_factor": seconds / total,
    }


def kernel_benchmark(batch: int = 4, length: int = 96, in_dim: int = 1560,
                     hidden: int = 256, repeats: int = 5, seed: int = 0) -> dict:
    """Times the recurrent sequence kernels at a training-shaped workload."""
    rng = np.random.default_rng(seed)
    layer = net_core.init_lstm_layer(rng, in_dim, hidden)
    x = rng.standard_normal((batch, length, in_dim)).astype(np.float32)

    h_seq, cache = net_core.lstm_layer_forward_batch(x, layer)  # warm compile
    dh = rng.standard_normal(h_seq.shape).astype(np.float32)
    net_core.lstm_layer_backward_batch(layer, cache, dh)

    fwd = []
    bwd = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        h_seq, cache = net_core.lstm_layer_forward_batch(x, layer)
        fwd.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        net_core.lstm_layer_backward_batch(layer, cache, dh)
        bwd.append(time.perf_counter() - t0)

    states = [(np.zeros(hidden, np.float32), np.zeros(hidden, np.float32))]
    frame = rng.standard_normal(in_dim).astype(np.float32)
    net_core.stack_step([layer], states, frame)
    t0 = time.perf_counter()
    n_steps = 2000
    for _ in range(n_steps):
        net_core.stack_step([layer], states, frame)
    step = (time.perf_counter() - t0) / n_steps
    return {
        "backend": backend_name(),
        "seq_forward_ms": 1000.0 * float(np.median(fwd)),
        "seq_backward_ms": 1000.0 * float(np.median(bwd)),
        "step_us": 1e6 * step,
    }


def compare_backends(seconds: float = 5.0, seed: int = 0) -> list:
    """Run the benchmarks in one subprocess per backend; returns both rows."""
    rows = []
    code = (
        "import json; from visemeflow.bench import kernel_benchmark, realtime_benchmark;"
        f"k = kernel_benchmark(seed={seed}); r = realtime_benchmark(seconds={seconds}, seed={seed});"
        "print(json.dumps({**k, 'ms_per_frame_mean': r['ms_per_frame_mean']}))"
    )
    for flag in ("1", "0"):
        env = dict(os.environ, VISEMEFLOW_NUMBA=flag)
        out = subprocess.run(
            [sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True
        )
        import json

        rows.append(json.loads(out.stdout.strip().splitlines()[-1]))
    return rows


def format_backend_table(rows) -> str:
    lines = [
        f"{'backend':8s} {'seq fwd ms':>11s} {'seq bwd ms':>11s} {'step us':>9s} {'ms/frame':>9s}"
    ]
    for r in rows:
        lines.append(
            f"{r['backend']:8s} {r['seq_forward_ms']:11.2f} {r['seq_backward_ms']:11.2f} "
            f"{r['step_us']:9.1f} {r['ms_per_frame_mean']:9.2f}"
        )
    return "\n".join(lines)
