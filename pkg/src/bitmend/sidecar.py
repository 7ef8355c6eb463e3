"""Sidecar metadata: per-block QP maps, motion-vector fields and frame types.

Binary layout (all little-endian):
  magic "MBMD" | u16 version=1 | u16 block_size | u32 width | u32 height |
  u32 frame_count | per frame in decode order:
    u8 frame_type (0=I, 1=P) | QP grid (u8 x gw*gh, row-major) |
    if P: MV grid ((i16 dx, i16 dy) x gw*gh, quarter-pel)
  with gw = ceil(width/block_size), gh = ceil(height/block_size).

The motion-vector convention matches the codec: the block at destination
position (bx, by) in this frame was copied from
(bx*bs + dx/4, by*bs + dy/4) in the previous frame.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"MBMD"
VERSION = 1

FRAME_I = 0
FRAME_P = 1
FRAME_B_RESERVED = 2  # reserved in the format, rejected by the reader


class SidecarFormatError(ValueError):
    pass


class SidecarValidationError(ValueError):
    pass


def grid_dims(width: int, height: int, block_size: int) -> tuple[int, int]:
    gw = -(-width // block_size)
    gh = -(-height // block_size)
    return gw, gh


@dataclass
class QPMap:
    block_size: int
    grid: np.ndarray  # uint8 [gh, gw]

    def validate(self, width: int, height: int, frame_index: int = -1):
        gw, gh = grid_dims(width, height, self.block_size)
        if self.grid.shape != (gh, gw):
            raise SidecarValidationError(
                f"QP grid {self.grid.shape} does not match {gh}x{gw} "
                f"for {width}x{height} at block size {self.block_size}"
            )
        bad = np.argwhere(self.grid > 51)
        if bad.size:
            by, bx = bad[0]
            where = f"frame {frame_index}, " if frame_index >= 0 else ""
            raise SidecarValidationError(
                f"QP {int(self.grid[by, bx])} out of [0, 51] at {where}block ({int(bx)}, {int(by)})"
            )


@dataclass
class MVField:
    block_size: int
    grid: np.ndarray  # int16 [gh, gw, 2], (dx, dy) in quarter-pel

    def validate(self, width: int, height: int, frame_index: int = -1):
        gw, gh = grid_dims(width, height, self.block_size)
        if self.grid.shape != (gh, gw, 2):
            raise SidecarValidationError(
                f"MV grid {self.grid.shape} does not match {gh}x{gw}x2 "
                f"for {width}x{height} at block size {self.block_size}"
            )


@dataclass
class FrameMeta:
    frame_type: int  # FRAME_I or FRAME_P
    qp: QPMap
    mv: MVField | None = None  # present iff frame_type == FRAME_P

    @property
    def is_i(self):
        return self.frame_type == FRAME_I


@dataclass
class GopMetadata:
    width: int
    height: int
    frames: list[FrameMeta]

    @property
    def block_size(self):
        return self.frames[0].qp.block_size

    @property
    def gop_size(self):
        return len(self.frames)

    def validate(self):
        if not self.frames:
            raise SidecarValidationError("empty GOP")
        if not self.frames[0].is_i:
            raise SidecarValidationError("GOP must start with an I frame")
        bs = self.block_size
        for i, fr in enumerate(self.frames):
            if i > 0 and fr.is_i:
                raise SidecarValidationError(f"GOP has a second I frame at index {i}")
            if fr.qp.block_size != bs:
                raise SidecarValidationError("mixed block sizes within a GOP")
            fr.qp.validate(self.width, self.height, frame_index=i)
            if fr.is_i:
                if fr.mv is not None:
                    raise SidecarValidationError(f"I frame {i} carries motion vectors")
            else:
                if fr.mv is None:
                    raise SidecarValidationError(f"P frame {i} is missing motion vectors")
                if fr.mv.block_size != bs:
                    raise SidecarValidationError("MV block size differs from QP block size")
                fr.mv.validate(self.width, self.height, frame_index=i)


def qp_map_from_slice(slice_qp: int, width: int, height: int, block_size: int = 16) -> QPMap:
    """Constant QP map, the fallback when only the slice QP is known."""
    if not 0 <= slice_qp <= 51:
        raise SidecarValidationError(f"slice QP {slice_qp} out of [0, 51]")
    gw, gh = grid_dims(width, height, block_size)
    return QPMap(block_size=block_size, grid=np.full((gh, gw), slice_qp, dtype=np.uint8))


def write_sidecar(meta: list[GopMetadata], sink) -> int:
    """Serialize GOPs in decode order; returns the byte count written."""
    frames: list[FrameMeta] = []
    width = height = block_size = None
    for gop in meta:
        gop.validate()
        if width is None:
            width, height, block_size = gop.width, gop.height, gop.block_size
        elif (gop.width, gop.height, gop.block_size) != (width, height, block_size):
            raise SidecarValidationError("all GOPs in one sidecar must share dims and block size")
        frames.extend(gop.frames)
    if width is None:
        width = height = 0
        block_size = 16
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<HHIII", VERSION, block_size, width, height, len(frames))
    for fr in frames:
        blob += struct.pack("<B", fr.frame_type)
        blob += fr.qp.grid.astype("<u1").tobytes()
        if fr.frame_type == FRAME_P:
            blob += fr.mv.grid.astype("<i2").tobytes()
    if hasattr(sink, "write"):
        sink.write(bytes(blob))
    else:
        with open(sink, "wb") as fh:
            fh.write(bytes(blob))
    return len(blob)


def read_sidecar(source) -> list[GopMetadata]:
    """Parse and validate a sidecar in a single pass, rebuilding GOP bounds."""
    if hasattr(source, "read"):
        blob = source.read()
    else:
        with open(source, "rb") as fh:
            blob = fh.read()
    if blob[:4] != MAGIC:
        raise SidecarFormatError(f"bad sidecar magic {blob[:4]!r}")
    if len(blob) < 20:
        raise SidecarFormatError(f"truncated sidecar header at byte {len(blob)}")
    version, block_size, width, height, frame_count = struct.unpack_from("<HHIII", blob, 4)
    if version != VERSION:
        raise SidecarFormatError(f"unsupported sidecar version {version}")
    if frame_count == 0:
        return []
    if block_size < 1 or block_size & (block_size - 1):
        raise SidecarFormatError(f"block size {block_size} is not a power of two")
    if width <= 0 or height <= 0:
        raise SidecarFormatError(f"bad frame dimensions {width}x{height}")
    gw, gh = grid_dims(width, height, block_size)
    qp_bytes = gw * gh
    mv_bytes = 4 * gw * gh
    off = 20
    gops: list[GopMetadata] = []
    for idx in range(frame_count):
        if off + 1 > len(blob):
            raise SidecarFormatError(f"truncated sidecar at byte {off} (frame {idx})")
        ftype = blob[off]
        off += 1
        if ftype == FRAME_B_RESERVED:
            raise SidecarValidationError(f"frame {idx}: B frames are reserved and unsupported")
        if ftype not in (FRAME_I, FRAME_P):
            raise SidecarFormatError(f"frame {idx}: unknown frame type {ftype}")
        if off + qp_bytes > len(blob):
            raise SidecarFormatError(f"truncated QP grid at byte {off} (frame {idx})")
        qp_grid = np.frombuffer(blob, dtype=np.uint8, count=qp_bytes, offset=off).reshape(gh, gw)
        off += qp_bytes
        qp = QPMap(block_size=block_size, grid=qp_grid.copy())
        qp.validate(width, height, frame_index=idx)
        mv = None
        if ftype == FRAME_P:
            if off + mv_bytes > len(blob):
                raise SidecarFormatError(f"truncated MV grid at byte {off} (frame {idx})")
            mv_grid = np.frombuffer(blob, dtype="<i2", count=2 * gw * gh, offset=off)
            mv = MVField(block_size=block_size, grid=mv_grid.reshape(gh, gw, 2).astype(np.int16))
            off += mv_bytes
        fr = FrameMeta(frame_type=ftype, qp=qp, mv=mv)
        if ftype == FRAME_I:
            gops.append(GopMetadata(width=width, height=height, frames=[fr]))
        else:
            if not gops:
                raise SidecarValidationError("GOP must start with I (first frame is P)")
            gops[-1].frames.append(fr)
    if off != len(blob):
        raise SidecarFormatError(f"{len(blob) - off} trailing bytes after frame data")
    for gop in gops:
        gop.validate()
    return gops
