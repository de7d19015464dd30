"""LPNW1 weight files.

Layout (little-endian)::

    b"LPNW1" | version u32 | entry count u64
    per entry: name length u32 | UTF-8 name | dtype code u8 | rank u8 | dims u64 * rank | raw data

dtype codes match LPT1 (1 = float32, 2 = float64). Entries hold every
parameter and buffer of the module's ``state_dict`` in its iteration order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FileFormatError, WeightMismatchError
from .layers import Module
from .tensor_core.lpt import DTYPE_CODES, dtype_code

MAGIC = b"LPNW1"
VERSION = 1


def encode(state: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(state))]
    for name, arr in state.items():
        raw = name.encode("utf-8")
        code = dtype_code(arr.dtype)
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=DTYPE_CODES[code]).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FileFormatError(f"file truncated while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(buf: bytes) -> dict[str, np.ndarray]:
    r = _Reader(buf)
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise FileFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, count = r.unpack("<IQ", "header")
    if version != VERSION:
        raise FileFormatError(f"unsupported LPNW version {version}, expected {VERSION}")
    state = {}
    for i in range(count):
        try:
            name, arr = _entry(r, i)
        except FileFormatError as exc:
            exc.entry = i
            raise
        state[name] = arr
    if r.pos != len(buf):
        raise FileFormatError(f"{len(buf) - r.pos} trailing bytes after {count} entries")
    return state


def _entry(r: _Reader, i: int):
    what = f"entry {i}"
    (nlen,) = r.unpack("<I", f"{what} name length")
    try:
        name = r.take(nlen, f"{what} name").decode("utf-8")
    except UnicodeDecodeError:
        raise FileFormatError(f"{what}: name is not valid UTF-8") from None
    what = f"entry {i} ({name!r})"
    code, rank = r.unpack("<BB", f"{what} dtype/rank")
    if code not in DTYPE_CODES:
        raise FileFormatError(f"{what}: unknown dtype code {code}")
    dims = r.unpack(f"<{rank}Q", f"{what} dims")
    dt = DTYPE_CODES[code]
    data = r.take(int(np.prod(dims, dtype=np.int64)) * dt.itemsize, f"{what} data")
    return name, np.frombuffer(data, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))


def save_weights(model: Module, path) -> None:
    Path(path).write_bytes(encode(model.state_dict()))


def load_state(model: Module, state: dict[str, np.ndarray]) -> None:
    """Copy ``state`` into ``model``; names and shapes must match exactly."""
    target = model.state_dict()
    for name, arr in target.items():
        if name not in state:
            raise WeightMismatchError(f"missing entry {name!r} in stored weights")
        if state[name].shape != arr.shape:
            raise WeightMismatchError(
                f"first mismatched layer {name!r}: stored shape {state[name].shape}, network expects {arr.shape}")
    extra = [k for k in state if k not in target]
    if extra:
        raise WeightMismatchError(f"first mismatched layer {extra[0]!r}: not present in the network "
                                  f"({len(extra)} unexpected entries)")
    for name, arr in target.items():
        arr[...] = state[name]


def load_weights(model: Module, path) -> None:
    try:
        state = decode(Path(path).read_bytes())
    except FileFormatError as exc:
        i = getattr(exc, "entry", None)
        names = list(model.state_dict())
        if i is not None and i < len(names):
            raise FileFormatError(f"{exc}; missing entry {names[i]!r} (#{i} of {len(names)})") from None
        raise
    load_state(model, state)
