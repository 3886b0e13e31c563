"""Binary checkpoint format: magic "VNCK", version, named-tensor table.

Each entry is little-endian: u32 name length, UTF-8 name, u32 rank,
u32 dims, f32 data (row-major).  LSTM layers are stored as the four
per-gate weight matrices ``[hidden, in_dim+hidden]`` plus per-gate biases,
alongside normalization statistics, the neutral face, activation
thresholds, and architecture flags.
"""

import struct

import numpy as np

from .audio_features import FEATURE_DIM, FeatureStats
from .errors import DataFormatError
from .model import ArchConfig, Decoder, ModelParams, N_RIG, LANDMARK_DIM
from .net_core import DenseParams, LstmLayerParams

_MAGIC = b"VNCK"
_VERSION = 1

_GATES = ("input", "forget", "output", "candidate")


def _layer_entries(prefix: str, layer: LstmLayerParams) -> dict:
    h = layer.hidden
    out = {}
    for k, gate in enumerate(_GATES):
        out[f"{prefix}.w_{gate}"] = layer.fused[:, k * h : (k + 1) * h].T
        out[f"{prefix}.b_{gate}"] = layer.bias[k * h : (k + 1) * h]
    return out


def _stack_entries(prefix: str, layers) -> dict:
    out = {}
    for i, layer in enumerate(layers):
        out.update(_layer_entries(f"{prefix}.{i}", layer))
    return out


def _decoder_entries(prefix: str, dec: Decoder) -> dict:
    return {
        f"{prefix}.fc1.weight": dec.fc1.weight,
        f"{prefix}.fc1.bias": dec.fc1.bias,
        f"{prefix}.fc2.weight": dec.fc2.weight,
        f"{prefix}.fc2.bias": dec.fc2.bias,
    }


def checkpoint_tensors(params: ModelParams) -> dict:
    tensors = {
        "arch.use_phoneme": np.asarray(float(params.arch.use_phoneme)),
        "arch.use_landmark": np.asarray(float(params.arch.use_landmark)),
        "stats.mean": params.stats.mean,
        "stats.std": params.stats.std,
        "neutral_face": params.neutral_face,
        "thresholds": params.thresholds,
    }
    if params.shared:
        tensors.update(_stack_entries("shared", params.shared))
    if params.phoneme_dec is not None:
        tensors.update(_decoder_entries("phoneme", params.phoneme_dec))
    if params.landmark_dec is not None:
        tensors.update(_decoder_entries("landmark", params.landmark_dec))
    tensors.update(_stack_entries("vis_act", params.act_lstm))
    tensors.update(_decoder_entries("vis_act", params.act_dec))
    tensors.update(_stack_entries("vis_rig", params.rig_lstm))
    tensors.update(_decoder_entries("vis_rig", params.rig_dec))
    tensors.update(_stack_entries("vis_jali", params.jali_lstm))
    tensors.update(_decoder_entries("vis_jali", params.jali_dec))
    return tensors


def save_checkpoint(path, params: ModelParams) -> None:
    tensors = checkpoint_tensors(params)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(tensors)))
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def read_tensor_table(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise DataFormatError(f"bad checkpoint magic {magic!r}")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise DataFormatError(f"unsupported checkpoint version {version}")
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            n = int(np.prod(dims, dtype=np.int64)) if rank else 1
            data = np.frombuffer(fh.read(4 * n), dtype="<f4")
            if data.size != n:
                raise DataFormatError(f"checkpoint truncated in tensor {name!r}")
            tensors[name] = data.reshape(dims).astype(np.float32)
    return tensors


class _Table:
    def __init__(self, tensors):
        self.tensors = tensors

    def take(self, name):
        try:
            return self.tensors[name]
        except KeyError:
            raise DataFormatError(f"checkpoint missing tensor {name!r}") from None


def _load_layer(table: _Table, prefix: str) -> LstmLayerParams:
    w = [table.take(f"{prefix}.w_{g}") for g in _GATES]
    b = [table.take(f"{prefix}.b_{g}") for g in _GATES]
    hidden, total = w[0].shape
    in_dim = total - hidden
    fused = np.empty((total, 4 * hidden), dtype=np.float32)
    bias = np.empty(4 * hidden, dtype=np.float32)
    for k in range(4):
        fused[:, k * hidden : (k + 1) * hidden] = w[k].T
        bias[k * hidden : (k + 1) * hidden] = b[k]
    return LstmLayerParams(fused, bias, in_dim)


def _load_stack(table: _Table, prefix: str, n_layers: int = 3):
    return [_load_layer(table, f"{prefix}.{i}") for i in range(n_layers)]


def _load_decoder(table: _Table, prefix: str) -> Decoder:
    return Decoder(
        DenseParams(table.take(f"{prefix}.fc1.weight"), table.take(f"{prefix}.fc1.bias")),
        DenseParams(table.take(f"{prefix}.fc2.weight"), table.take(f"{prefix}.fc2.bias")),
    )


def load_checkpoint(path) -> ModelParams:
    table = _Table(read_tensor_table(path))
    arch = ArchConfig(
        use_phoneme=bool(table.take("arch.use_phoneme") > 0.5),
        use_landmark=bool(table.take("arch.use_landmark") > 0.5),
    )
    mean = table.take("stats.mean").astype(np.float64)
    std = table.take("stats.std").astype(np.float64)
    if mean.shape != (FEATURE_DIM,) or std.shape != (FEATURE_DIM,):
        raise DataFormatError("normalization statistics have wrong dimensions")
    params = ModelParams(
        arch=arch,
        shared=_load_stack(table, "shared") if arch.has_shared else [],
        phoneme_dec=_load_decoder(table, "phoneme") if arch.use_phoneme else None,
        landmark_dec=_load_decoder(table, "landmark") if arch.use_landmark else None,
        act_lstm=_load_stack(table, "vis_act"),
        act_dec=_load_decoder(table, "vis_act"),
        rig_lstm=_load_stack(table, "vis_rig"),
        rig_dec=_load_decoder(table, "vis_rig"),
        jali_lstm=_load_stack(table, "vis_jali"),
        jali_dec=_load_decoder(table, "vis_jali"),
        stats=FeatureStats(mean, std),
        neutral_face=table.take("neutral_face"),
        thresholds=table.take("thresholds"),
    )
    if params.thresholds.shape != (N_RIG,):
        raise DataFormatError("thresholds tensor has wrong shape")
    if params.neutral_face.shape != (LANDMARK_DIM,):
        raise DataFormatError("neutral_face tensor has wrong shape")
    return params
