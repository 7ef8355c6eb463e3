"""A deliberately simple block-based inter/intra codec.

Produces degraded frames together with exact ground-truth metadata (frame
types, per-block QPs, motion vectors), which makes hermetic end-to-end
tests and toy training data possible without an external encoder.

Frames are YUV 4:2:0; motion is estimated on luma at integer pel over
16x16 blocks and chroma reuses halved vectors. Residuals are coded with an
orthonormal 8x8 DCT and a uniform quantizer whose step doubles every six
QP values, mirroring the convention the QP scale is defined by.
Luma dimensions must be multiples of the block size so tiles stay whole.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sidecar import FRAME_I, FRAME_P, FrameMeta, GopMetadata, MVField, QPMap
from .video import VideoClip


class ToyCodecError(ValueError):
    pass


@dataclass
class ToyCodecConfig:
    block_size: int = 16
    search_radius: int = 8
    gop_size: int = 7
    # int (all frames), per-frame list of ints, or per-frame list of [gh,gw] grids
    qp_schedule: object = 35

    def __post_init__(self):
        if self.gop_size < 1:
            raise ToyCodecError(f"gop_size {self.gop_size} < 1")
        if self.search_radius < 0:
            raise ToyCodecError(f"search_radius {self.search_radius} < 0")
        if self.block_size < 16 or self.block_size % 16:
            raise ToyCodecError("block_size must be a multiple of 16 (chroma tiles stay 8x8)")

    def qp_grid(self, frame_index: int, gh: int, gw: int) -> np.ndarray:
        sched = self.qp_schedule
        if isinstance(sched, (list, tuple)):
            sched = sched[frame_index]
        if isinstance(sched, (int, np.integer)):
            grid = np.full((gh, gw), int(sched), dtype=np.uint8)
        else:
            grid = np.asarray(sched, dtype=np.uint8)
            if grid.shape != (gh, gw):
                raise ToyCodecError(f"QP grid {grid.shape} does not match {gh}x{gw}")
        if grid.max(initial=0) > 51:
            raise ToyCodecError("QP above 51 in schedule")
        return grid


@dataclass
class EncodedGop:
    """Reconstruction plus everything needed to re-derive it."""

    metadata: GopMetadata
    # per frame: (y, u, v) float32 planes of the decoder output
    recon: list = field(default_factory=list)
    # per frame: (y, u, v) int32 quantized DCT levels, tiled in place
    levels: list = field(default_factory=list)
    # per P frame index: (y, u, v) float32 dequantized residual planes; None for I
    residuals: list = field(default_factory=list)
    bit_estimate: float = 0.0


# -- transform -----------------------------------------------------------------

_DCT8 = None


def _dct_matrix() -> np.ndarray:
    global _DCT8
    if _DCT8 is None:
        k = np.arange(8)
        basis = np.cos(np.pi * (2 * k[None, :] + 1) * k[:, None] / 16.0)
        basis[0] *= 1.0 / np.sqrt(2.0)
        _DCT8 = (basis * 0.5).astype(np.float64)
    return _DCT8


def qp_step(qp: int) -> float:
    return float(2.0 ** ((qp - 4) / 6.0))


def _round_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_plane(residual: np.ndarray, qp_tiles: np.ndarray) -> np.ndarray:
    """Tile-wise DCT + uniform quantization; returns integer levels in place.

    `qp_tiles` holds one QP per 8x8 tile ([H/8, W/8]).
    """
    h, w = residual.shape
    d = _dct_matrix()
    tiles = residual.astype(np.float64).reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)
    coef = np.einsum("ij,tujk,lk->tuil", d, tiles, d, optimize=True)
    steps = 2.0 ** ((qp_tiles.astype(np.float64) - 4.0) / 6.0)
    levels = _round_away(coef / steps[:, :, None, None])
    return levels.astype(np.int32).transpose(0, 2, 1, 3).reshape(h, w)


def dequantize_plane(levels: np.ndarray, qp_tiles: np.ndarray) -> np.ndarray:
    h, w = levels.shape
    d = _dct_matrix()
    tiles = levels.astype(np.float64).reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)
    steps = 2.0 ** ((qp_tiles.astype(np.float64) - 4.0) / 6.0)
    coef = tiles * steps[:, :, None, None]
    rec = np.einsum("ji,tujk,kl->tuil", d, coef, d, optimize=True)
    return rec.transpose(0, 2, 1, 3).reshape(h, w).astype(np.float32)


def quantize_block(block: np.ndarray, qp: int) -> tuple[np.ndarray, np.ndarray]:
    """8x8 convenience wrapper: returns (levels, dequantized block)."""
    if block.shape != (8, 8):
        raise ToyCodecError(f"quantize_block expects 8x8, got {block.shape}")
    if not 0 <= qp <= 51:
        raise ToyCodecError(f"QP {qp} out of [0, 51]")
    qp_tiles = np.full((1, 1), qp, dtype=np.uint8)
    levels = quantize_plane(block, qp_tiles)
    return levels, dequantize_plane(levels, qp_tiles)


# -- motion --------------------------------------------------------------------


def _clamped_shift(ref: np.ndarray, dx: int, dy: int) -> np.ndarray:
    h, w = ref.shape
    rows = np.clip(np.arange(h) + dy, 0, h - 1)
    cols = np.clip(np.arange(w) + dx, 0, w - 1)
    return ref[rows[:, None], cols[None, :]]


def _candidate_offsets(radius: int) -> list[tuple[int, int]]:
    cands = [
        (dx, dy) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)
    ]
    cands.sort(key=lambda c: (abs(c[0]) + abs(c[1]), c[1], c[0]))
    return cands


def motion_search(cur_block: np.ndarray, ref_frame: np.ndarray, center: tuple[int, int], radius: int):
    """Exhaustive integer-pel search; returns (dx, dy, sad).

    `center` is the (x, y) of the block's top-left corner. Ties go to the
    smallest |dx|+|dy|, then smaller dy, then smaller dx.
    """
    bx, by = center
    bs_h, bs_w = cur_block.shape
    h, w = ref_frame.shape
    cur = cur_block.astype(np.float64)
    best = None
    for dx, dy in _candidate_offsets(radius):
        rows = np.clip(np.arange(by, by + bs_h) + dy, 0, h - 1)
        cols = np.clip(np.arange(bx, bx + bs_w) + dx, 0, w - 1)
        sad = float(np.abs(cur - ref_frame[rows[:, None], cols[None, :]]).sum())
        if best is None or sad < best[2]:
            best = (dx, dy, sad)
    return best


def _search_all_blocks(cur: np.ndarray, ref: np.ndarray, bs: int, radius: int) -> np.ndarray:
    """Vectorized exhaustive search for every block; returns int MVs [gh,gw,2]."""
    h, w = cur.shape
    gh, gw = h // bs, w // bs
    cands = _candidate_offsets(radius)
    sads = np.empty((len(cands), gh, gw), dtype=np.float64)
    cur64 = cur.astype(np.float64)
    for i, (dx, dy) in enumerate(cands):
        diff = np.abs(cur64 - _clamped_shift(ref, dx, dy).astype(np.float64))
        sads[i] = diff.reshape(gh, bs, gw, bs).sum(axis=(1, 3))
    pick = np.argmin(sads, axis=0)  # first minimum = best in tie-break order
    offsets = np.asarray(cands, dtype=np.int16)
    return offsets[pick]


# -- encoding ------------------------------------------------------------------


def _tile_qp_from_blocks(qp_grid: np.ndarray, bs: int) -> np.ndarray:
    """Expand per-block QPs to per-8x8-tile QPs."""
    reps = bs // 8
    return qp_grid.repeat(reps, axis=0).repeat(reps, axis=1)


def _predict_plane(prev: np.ndarray, mv_pel: np.ndarray, bs: int) -> np.ndarray:
    h, w = prev.shape
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    by, bx = ys // bs, xs // bs
    rows = np.clip(ys + mv_pel[by, bx, 1], 0, h - 1)
    cols = np.clip(xs + mv_pel[by, bx, 0], 0, w - 1)
    return prev[rows, cols]


def encode_gop(frames: list, cfg: ToyCodecConfig, width: int, height: int) -> EncodedGop:
    """Encode one GOP of (y, u, v) uint8 planes; first frame intra, rest inter."""
    if len(frames) != cfg.gop_size:
        raise ToyCodecError(f"segment of {len(frames)} frames != gop_size {cfg.gop_size}")
    bs = cfg.block_size
    if width % bs or height % bs:
        raise ToyCodecError(f"{width}x{height} is not a multiple of block size {bs}")
    gh, gw = height // bs, width // bs
    bs_c = bs // 2

    out = EncodedGop(metadata=GopMetadata(width, height, []))
    bits = 0.0
    prev = None
    for i, (y, u, v) in enumerate(frames):
        qp_grid = cfg.qp_grid(i, gh, gw)
        qp_tiles_l = _tile_qp_from_blocks(qp_grid, bs)
        qp_tiles_c = _tile_qp_from_blocks(qp_grid, bs_c)
        planes = [p.astype(np.float32) for p in (y, u, v)]
        if i == 0:
            recon, levels = [], []
            for p, tiles in zip(planes, (qp_tiles_l, qp_tiles_c, qp_tiles_c)):
                lv = quantize_plane(p, tiles)
                rec = np.clip(dequantize_plane(lv, tiles), 0.0, 255.0)
                levels.append(lv)
                recon.append(rec.astype(np.float32))
                bits += float(np.log2(1.0 + np.abs(lv)).sum())
            out.metadata.frames.append(
                FrameMeta(FRAME_I, QPMap(bs, qp_grid))
            )
            out.recon.append(tuple(recon))
            out.levels.append(tuple(levels))
            out.residuals.append(None)
        else:
            mv = _search_all_blocks(planes[0], prev[0], bs, cfg.search_radius)
            mv_c = _round_away(mv.astype(np.float64) / 2.0).astype(np.int64)
            recon, levels, residuals = [], [], []
            for pi, (p, tiles) in enumerate(zip(planes, (qp_tiles_l, qp_tiles_c, qp_tiles_c))):
                pel = mv if pi == 0 else mv_c
                blk = bs if pi == 0 else bs_c
                pred = _predict_plane(prev[pi], pel.astype(np.int64), blk).astype(np.float32)
                lv = quantize_plane(p - pred, tiles)
                res = dequantize_plane(lv, tiles)
                rec = np.clip(pred + res, 0.0, 255.0)
                levels.append(lv)
                residuals.append(res)
                recon.append(rec.astype(np.float32))
                bits += float(np.log2(1.0 + np.abs(lv)).sum())
            bits += 10.0 * gh * gw
            out.metadata.frames.append(
                FrameMeta(
                    FRAME_P,
                    QPMap(bs, qp_grid),
                    MVField(bs, (mv.astype(np.int32) * 4).astype(np.int16)),
                )
            )
            out.recon.append(tuple(recon))
            out.levels.append(tuple(levels))
            out.residuals.append(tuple(residuals))
        prev = out.recon[-1]
    out.bit_estimate = bits
    out.metadata.validate()
    return out


def decode_gop(encoded: EncodedGop, cfg: ToyCodecConfig) -> list:
    """Re-run the decoder from stored levels and metadata; must be bit-exact."""
    meta = encoded.metadata
    bs = cfg.block_size
    bs_c = bs // 2
    out = []
    prev = None
    for i, fr in enumerate(meta.frames):
        qp_tiles_l = _tile_qp_from_blocks(fr.qp.grid, bs)
        qp_tiles_c = _tile_qp_from_blocks(fr.qp.grid, bs_c)
        recon = []
        if fr.is_i:
            for lv, tiles in zip(encoded.levels[i], (qp_tiles_l, qp_tiles_c, qp_tiles_c)):
                recon.append(np.clip(dequantize_plane(lv, tiles), 0.0, 255.0).astype(np.float32))
        else:
            mv = _round_away(fr.mv.grid.astype(np.float64) / 4.0).astype(np.int64)
            mv_c = _round_away(mv.astype(np.float64) / 2.0).astype(np.int64)
            for pi, (lv, tiles) in enumerate(zip(encoded.levels[i], (qp_tiles_l, qp_tiles_c, qp_tiles_c))):
                pel = mv if pi == 0 else mv_c
                blk = bs if pi == 0 else bs_c
                pred = _predict_plane(prev[pi], pel, blk).astype(np.float32)
                res = dequantize_plane(lv, tiles)
                recon.append(np.clip(pred + res, 0.0, 255.0).astype(np.float32))
        out.append(tuple(recon))
        prev = out[-1]
    return out


def encode_clip(clip: VideoClip, cfg: ToyCodecConfig) -> list[EncodedGop]:
    if clip.pix_fmt != "yuv420":
        raise ToyCodecError("toy codec expects a yuv420 clip")
    if clip.n_frames % cfg.gop_size:
        raise ToyCodecError(
            f"{clip.n_frames} frames is not a whole number of {cfg.gop_size}-frame GOPs"
        )
    gops = []
    for start in range(0, clip.n_frames, cfg.gop_size):
        gops.append(
            encode_gop(clip.frames[start : start + cfg.gop_size], cfg, clip.width, clip.height)
        )
    return gops


def recon_to_clip(gops: list[EncodedGop], fps: float = 10.0) -> VideoClip:
    """Decoder output as an 8-bit clip (planes rounded for file output)."""
    meta = gops[0].metadata
    clip = VideoClip(meta.width, meta.height, "yuv420", fps=fps)
    for gop in gops:
        for y, u, v in gop.recon:
            clip.frames.append(
                (
                    np.clip(np.rint(y), 0, 255).astype(np.uint8),
                    np.clip(np.rint(u), 0, 255).astype(np.uint8),
                    np.clip(np.rint(v), 0, 255).astype(np.uint8),
                )
            )
    return clip
