"""The "CGNM" binary matrix container.

Layout (little-endian): magic "CGNM" (4 bytes), u32 version=1, u32 rows,
u32 cols, f64 stride_seconds, f64 offset_seconds, then rows*cols float32
values row-major. Round-trips are bit-exact, including the 0-row
(header-only) case.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

__all__ = ["MATRIX_MAGIC", "MATRIX_VERSION", "write_matrix", "read_matrix"]

MATRIX_MAGIC = b"CGNM"
MATRIX_VERSION = 1
_HEADER = struct.Struct("<4sIIIdd")


def write_matrix(path: str | Path, matrix: np.ndarray,
                 stride: float = 0.0, offset: float = 0.0) -> None:
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise FormatError(f"matrix must be 2-d, got shape {matrix.shape}")
    rows, cols = matrix.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MATRIX_MAGIC, MATRIX_VERSION, rows, cols,
                              float(stride), float(offset)))
        fh.write(matrix.astype("<f4").tobytes())


def read_matrix(path: str | Path) -> tuple[np.ndarray, float, float]:
    """Returns (matrix float32 [rows, cols], stride_seconds, offset_seconds)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(
            f"{path}: truncated header, {len(raw)} bytes < {_HEADER.size}")
    magic, version, rows, cols, stride, offset = _HEADER.unpack_from(raw, 0)
    if magic != MATRIX_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MATRIX_MAGIC!r}")
    if version != MATRIX_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = rows * cols * 4
    payload = raw[_HEADER.size:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes at offset {_HEADER.size}, "
            f"expected {expected} for {rows}x{cols}")
    matrix = np.frombuffer(payload, dtype="<f4").reshape(rows, cols)
    return matrix.astype(np.float32), stride, offset
