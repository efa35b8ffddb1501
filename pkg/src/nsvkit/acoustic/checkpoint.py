"""Checkpoint container format.

Layout: magic 'NSVM', u32 format version, u32 config-blob byte length,
UTF-8 key=value config blob (model config, speaker ids, training seed),
u32 tensor count, then per tensor: u32 name length, name bytes, u32 rank,
u32 dims, f32 little-endian row-major payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from .model import AcousticModel, ModelConfig

MAGIC = b"NSVM"
VERSION = 1


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config: ModelConfig
    speaker_ids: list[str]
    seed: int

    def model(self) -> AcousticModel:
        return AcousticModel(self.config, params=self.params)


def _config_blob(ckpt: Checkpoint) -> bytes:
    cfg = ckpt.config
    lines = [
        f"embed_dim={cfg.embed_dim}",
        f"conv_channels={cfg.conv_channels}",
        f"kernel_size={cfg.kernel_size}",
        "dilation_cycle=" + ",".join(str(d) for d in cfg.dilation_cycle),
        f"n_speakers={cfg.n_speakers}",
        f"n_units={cfg.n_units}",
        f"mel_bins={cfg.mel_bins}",
        f"dropout={cfg.dropout!r}",
        f"learning_rate={cfg.learning_rate!r}",
        f"batch_size={cfg.batch_size}",
        f"max_steps={cfg.max_steps}",
        "speakers=" + ",".join(ckpt.speaker_ids),
        f"seed={ckpt.seed}",
    ]
    return "\n".join(lines).encode("utf-8")


def _parse_blob(blob: bytes) -> tuple[ModelConfig, list[str], int]:
    kv = {}
    for line in blob.decode("utf-8").split("\n"):
        if line.strip():
            key, value = line.split("=", 1)
            kv[key] = value
    config = ModelConfig(
        embed_dim=int(kv["embed_dim"]),
        conv_channels=int(kv["conv_channels"]),
        kernel_size=int(kv["kernel_size"]),
        dilation_cycle=tuple(int(d) for d in kv["dilation_cycle"].split(",")),
        n_speakers=int(kv["n_speakers"]),
        n_units=int(kv["n_units"]),
        mel_bins=int(kv["mel_bins"]),
        dropout=float(kv["dropout"]),
        learning_rate=float(kv["learning_rate"]),
        batch_size=int(kv["batch_size"]),
        max_steps=int(kv["max_steps"]),
    )
    speakers = kv["speakers"].split(",") if kv.get("speakers") else []
    return config, speakers, int(kv.get("seed", "0"))


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    blob = _config_blob(ckpt)
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob,
             struct.pack("<I", len(ckpt.params))]
    for name, tensor in ckpt.params.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", tensor.ndim))
        parts.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        parts.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValidationError(f"{path}: bad checkpoint magic")
    version, blob_len = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    config, speakers, seed = _parse_blob(data[pos:pos + blob_len])
    pos += blob_len
    (n_tensors,) = struct.unpack_from("<I", data, pos)
    pos += 4
    params: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        tensor = np.frombuffer(data, dtype="<f4", count=count, offset=pos)
        pos += 4 * count
        params[name] = tensor.reshape(dims).astype(np.float64)
    if pos != len(data):
        raise ValidationError(f"{path}: {len(data) - pos} trailing bytes")
    return Checkpoint(params=params, config=config, speaker_ids=speakers, seed=seed)
