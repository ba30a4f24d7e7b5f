"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic      b"SVADCKPT"
    version    u32
    config     u32 length + UTF-8 JSON
    n_tensors  u32
    tensor*    u32 name length, name, u32 rank, u32 dims[rank], f32 data
    crc32      u32 over every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..errors import ChecksumError, CheckpointError, UnsupportedVersionError
from .model import EndpointModel, ModelConfig

MAGIC = b"SVADCKPT"
FORMAT_VERSION = 1


@dataclass
class ModelCheckpoint:
    config: dict
    tensors: dict[str, np.ndarray]
    format_version: int = FORMAT_VERSION

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.config["model"])

    def equals(self, other: "ModelCheckpoint") -> bool:
        if self.tensors.keys() != other.tensors.keys():
            return False
        return all(
            self.tensors[k].shape == other.tensors[k].shape
            and self.tensors[k].tobytes() == other.tensors[k].tobytes()
            for k in self.tensors
        )


def checkpoint_from_model(model: EndpointModel, **metadata) -> ModelCheckpoint:
    tensors = {
        name: t.detach().cpu().to(torch.float32).numpy().copy()
        for name, t in model.state_dict().items()
    }
    return ModelCheckpoint({"model": model.cfg.to_dict(), **metadata}, tensors)


def model_from_checkpoint(ckpt: ModelCheckpoint) -> EndpointModel:
    model = EndpointModel(ckpt.model_config)
    state = {k: torch.from_numpy(v.copy()) for k, v in ckpt.tensors.items()}
    model.load_state_dict(state, strict=True)
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def save_checkpoint(ckpt: ModelCheckpoint) -> bytes:
    blob = json.dumps(ckpt.config, sort_keys=True, separators=(",", ":")).encode()
    out = bytearray(MAGIC)
    out += struct.pack("<II", ckpt.format_version, len(blob))
    out += blob
    out += struct.pack("<I", len(ckpt.tensors))
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f4")
        enc = name.encode()
        out += struct.pack("<I", len(enc)) + enc
        out += struct.pack("<I", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated while reading {what}", offset=self.pos)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(data: bytes) -> ModelCheckpoint:
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("bad magic bytes", offset=0)
    version_at = r.pos
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version}", offset=version_at)
    blob_len = r.u32("config length")
    blob_at = r.pos
    try:
        config = json.loads(r.take(blob_len, "config").decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"config blob is not valid JSON: {exc}", offset=blob_at) from None
    tensors = {}
    for _ in range(r.u32("tensor count")):
        name_at = r.pos
        try:
            name = r.take(r.u32("name length"), "tensor name").decode()
        except UnicodeDecodeError:
            raise CheckpointError("tensor name is not UTF-8", offset=name_at) from None
        rank = r.u32(f"rank of {name}")
        if rank > 8:
            raise CheckpointError(f"implausible rank {rank} for {name}", offset=r.pos - 4)
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"dims of {name}"))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = r.take(4 * count, f"data of {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)
    crc_at = r.pos
    stored = r.u32("crc32")
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} unexpected trailing bytes", offset=r.pos)
    if zlib.crc32(data[:crc_at]) != stored:
        raise ChecksumError("CRC32 mismatch", offset=crc_at)
    return ModelCheckpoint(config, tensors, version)


def write_checkpoint(path: str | Path, ckpt: ModelCheckpoint) -> None:
    Path(path).write_bytes(save_checkpoint(ckpt))


def read_checkpoint(path: str | Path) -> ModelCheckpoint:
    return load_checkpoint(Path(path).read_bytes())
