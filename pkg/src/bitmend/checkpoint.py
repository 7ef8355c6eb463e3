"""Binary weight checkpoints.

Layout (little-endian): magic "MBWT", u16 version=1, u32 tensor count, then
per tensor: u16 name length, UTF-8 name, u8 rank, u32 extents, raw 32-bit
floats in row-major order.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor

MAGIC = b"MBWT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict[str, Tensor]) -> int:
    """Write named parameters; returns the byte count."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<HI", VERSION, len(params))
    for name, p in params.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        blob += struct.pack("<H", len(raw))
        blob += raw
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    Path(path).write_bytes(blob)
    return len(blob)


def load_checkpoint(path) -> dict[str, Tensor]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {blob[:4]!r}")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 10
    params: dict[str, Tensor] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        n = 1
        for s in shape:
            n *= s
        end = off + 4 * n
        if end > len(blob):
            raise CheckpointError(f"truncated checkpoint at byte {off} (tensor {name!r})")
        data = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape)
        off = end
        params[name] = Tensor(data.astype(np.float32, copy=True), requires_grad=True)
    if off != len(blob):
        raise CheckpointError(f"{len(blob) - off} trailing bytes after last tensor")
    return params
