"""The "CGNA" weight checkpoint container.

Layout (little-endian): magic "CGNA", u32 version=1, u32 config-JSON byte
length, config JSON (UTF-8), u32 tensor count, then per tensor sorted by
name: u32 name length, name UTF-8, u32 ndim, u32 dims..., float32 payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import ModelConfig, ModelWeights

__all__ = ["CHECKPOINT_MAGIC", "CHECKPOINT_VERSION", "save_checkpoint",
           "load_checkpoint"]

CHECKPOINT_MAGIC = b"CGNA"
CHECKPOINT_VERSION = 1
_U32 = struct.Struct("<I")


def _write_u32(fh, value: int) -> None:
    fh.write(_U32.pack(value))


def save_checkpoint(path: str | Path, config: ModelConfig,
                    weights: ModelWeights) -> None:
    config_blob = json.dumps(asdict(config), sort_keys=True).encode("utf-8")
    names = sorted(weights.tensors())
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        _write_u32(fh, CHECKPOINT_VERSION)
        _write_u32(fh, len(config_blob))
        fh.write(config_blob)
        _write_u32(fh, len(names))
        for name in names:
            data = weights[name].data.astype("<f4")
            encoded = name.encode("utf-8")
            _write_u32(fh, len(encoded))
            fh.write(encoded)
            _write_u32(fh, data.ndim)
            for dim in data.shape:
                _write_u32(fh, dim)
            fh.write(data.tobytes())


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(
                f"{self.path}: truncated at byte {self.pos}, needed {n} more")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, ModelWeights]:
    reader = _Reader(Path(path).read_bytes(), path)
    magic = reader.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(
            f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    version = reader.u32()
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    config_blob = reader.take(reader.u32())
    try:
        config = ModelConfig(**json.loads(config_blob.decode("utf-8")))
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad config record ({exc})") from exc
    n_tensors = reader.u32()
    loaded: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        name = reader.take(reader.u32()).decode("utf-8")
        ndim = reader.u32()
        shape = tuple(reader.u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(reader.take(count * 4), dtype="<f4").reshape(shape)
        loaded[name] = data.astype(np.float32)
    if reader.pos != len(reader.raw):
        raise FormatError(
            f"{path}: {len(reader.raw) - reader.pos} trailing bytes at "
            f"offset {reader.pos}")

    weights = ModelWeights(config, seed=config.seed)
    expected = set(weights.tensors())
    if set(loaded) != expected:
        missing = sorted(expected - set(loaded))
        extra = sorted(set(loaded) - expected)
        raise FormatError(
            f"{path}: tensor names do not match config "
            f"(missing {missing[:3]}, extra {extra[:3]})")
    for name, data in loaded.items():
        if data.shape != weights[name].data.shape:
            raise FormatError(
                f"{path}: tensor {name} has shape {data.shape}, expected "
                f"{weights[name].data.shape}")
        weights[name].data = data.copy()
    return config, weights
