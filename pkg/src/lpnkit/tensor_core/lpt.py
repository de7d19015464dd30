"""LPT1 tensor files.

Layout (little-endian)::

    b"LPT1" | dtype code u8 | n, c, h, w as u64 | raw element data

dtype codes: 1 = float32, 2 = float64.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FileFormatError, ShapeError

MAGIC = b"LPT1"
DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
CODE_OF = {np.dtype("float32"): 1, np.dtype("float64"): 2}
_HEADER = struct.Struct("<4sB4Q")


def dtype_code(dtype) -> int:
    try:
        return CODE_OF[np.dtype(dtype)]
    except KeyError:
        raise FileFormatError(f"unsupported dtype {dtype}; only float32/float64") from None


def to_bytes(x: np.ndarray) -> bytes:
    if x.ndim != 4:
        raise ShapeError(f"LPT1 stores 4-D tensors, got shape {x.shape}")
    code = dtype_code(x.dtype)
    data = np.ascontiguousarray(x, dtype=DTYPE_CODES[code]).tobytes()
    return _HEADER.pack(MAGIC, code, *x.shape) + data


def from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FileFormatError(f"LPT1 header truncated ({len(buf)} of {_HEADER.size} bytes)")
    magic, code, *shape = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FileFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if code not in DTYPE_CODES:
        raise FileFormatError(f"unknown dtype code {code}")
    dt = DTYPE_CODES[code]
    need = int(np.prod(shape)) * dt.itemsize
    body = buf[_HEADER.size:]
    if len(body) != need:
        raise FileFormatError(f"LPT1 body has {len(body)} bytes, shape {tuple(shape)} needs {need}")
    return np.frombuffer(body, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))


def save(path, x: np.ndarray) -> None:
    Path(path).write_bytes(to_bytes(x))


def load(path) -> np.ndarray:
    return from_bytes(Path(path).read_bytes())
