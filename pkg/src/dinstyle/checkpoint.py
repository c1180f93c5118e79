"""Named-tensor container in the ``DINC`` binary format.

Layout (all integers little-endian)::

    b"DINC" | version u32 | count u32 |
    count x ( name_len u32 | utf-8 name | rank u32 | dims u64 x rank | f32 payload )

Payloads are little-endian float32; float64 values are narrowed on write.
"""

from __future__ import annotations

import io
import math
import os
import struct
from typing import Mapping, Union

import numpy as np

MAGIC = b"DINC"
VERSION = 1


class CheckpointError(ValueError):
    """The file is not a readable checkpoint (bad magic, version or layout)."""


def _as_array(value) -> np.ndarray:
    data = getattr(value, "data", value)
    return np.asarray(data, dtype=np.float64)


def dumps(tensors: Mapping[str, object]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(tensors)))
    for name, value in tensors.items():
        arr = _as_array(value)
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.astype("<f4").tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> dict[str, np.ndarray]:
    """Parse a checkpoint; values come back as float64 arrays."""
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if n < 0 or pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("bad magic bytes (not a DINC checkpoint)")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        try:
            name = bytes(take(nlen)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError("tensor name is not valid UTF-8") from exc
        (rank,) = struct.unpack("<I", take(4))
        if rank > 16:
            raise CheckpointError(f"implausible tensor rank {rank}")
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        size = math.prod(dims)
        payload = np.frombuffer(take(4 * size), dtype="<f4")
        if name in out:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        out[name] = payload.astype(np.float64).reshape(dims)
    if pos != len(view):
        raise CheckpointError("trailing bytes after last entry")
    return out


def save(path: Union[str, os.PathLike], tensors: Mapping[str, object]) -> None:
    blob = dumps(tensors)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load(path: Union[str, os.PathLike]) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read())


def narrow(values: np.ndarray) -> np.ndarray:
    """Round float64 values to what the checkpoint will store."""
    return np.asarray(values, dtype=np.float64).astype(np.float32).astype(np.float64)


def encode_text(text: str) -> np.ndarray:
    """Pack a string as a 1-D tensor of byte values (exact in float32)."""
    raw = text.encode("utf-8")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.float64) if raw else np.zeros(0)


def decode_text(values: np.ndarray) -> str:
    return bytes(np.asarray(values, dtype=np.uint8).tolist()).decode("utf-8")
