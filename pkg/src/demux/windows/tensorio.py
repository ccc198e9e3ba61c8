"""DMX1 feature-tensor binary format.

Layout: magic bytes ``DMX1``, uint32-LE row count L, uint32-LE channel count
C, then L*C little-endian IEEE-754 float32 values, row-major.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"DMX1"
_HEADER = struct.Struct("<4sII")


class TensorFormatError(ValueError):
    pass


def tensor_bytes(tensor: np.ndarray) -> bytes:
    t = np.ascontiguousarray(tensor, dtype="<f4")
    if t.ndim != 2:
        raise TensorFormatError("feature tensor must be 2-D (L, C)")
    return _HEADER.pack(MAGIC, t.shape[0], t.shape[1]) + t.tobytes()


def write_tensor(tensor: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_bytes(tensor))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise TensorFormatError(f"{path}: truncated header")
    magic, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 4 * rows * cols
    if len(raw) != expected:
        raise TensorFormatError(f"{path}: expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    return data.reshape(rows, cols).copy()
