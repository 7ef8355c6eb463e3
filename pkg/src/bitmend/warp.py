"""Motion-vector-driven alignment of images and feature maps.

Forward warping pulls previous-frame content into the current frame's
geometry (standard motion compensation). Reverse warping pushes a frame's
features back along its vectors toward the previous frame; overlapping
writes are averaged and unwritten cells keep the input as an identity
fallback. Both are linear gather/scatter maps, so gradients are exact.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, take_map
from .sidecar import GopMetadata, MVField, grid_dims


def _round_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _mv_index_maps(mv: MVField, height: int, width: int):
    """Per-pixel source coordinates implied by a quarter-pel MV grid."""
    gh, gw, _ = mv.grid.shape
    exp_gw, exp_gh = grid_dims(width, height, mv.block_size)
    if (gh, gw) != (exp_gh, exp_gw):
        raise ShapeError(
            f"MV grid {gh}x{gw} does not cover {width}x{height} "
            f"at block size {mv.block_size}"
        )
    dpel = _round_away(mv.grid.astype(np.float64) / 4.0).astype(np.int64)
    ys, xs = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    by = ys // mv.block_size
    bx = xs // mv.block_size
    rows = np.clip(ys + dpel[by, bx, 1], 0, height - 1)
    cols = np.clip(xs + dpel[by, bx, 0], 0, width - 1)
    return rows, cols


def forward_warp(x: Tensor, mv: MVField) -> Tensor:
    """out[..., p] = x[..., p + d(block(p))], source coordinates clamped."""
    if x.ndim < 2:
        raise ShapeError("forward_warp expects [..., H, W]")
    h, w = x.shape[-2], x.shape[-1]
    rows, cols = _mv_index_maps(mv, h, w)
    return take_map(x, rows, cols)


def reverse_warp(x: Tensor, mv: MVField) -> tuple[Tensor, Tensor]:
    """Scatter each block back to its source position; returns (out, coverage).

    Overlaps are averaged over the write count; holes keep the input value
    and report coverage 0. Coverage is a plain 0/1 mask of shape [1, H, W].
    """
    if x.ndim < 2:
        raise ShapeError("reverse_warp expects [..., H, W]")
    h, w = x.shape[-2], x.shape[-1]
    rows, cols = _mv_index_maps(mv, h, w)
    flat_dst = (rows * w + cols).ravel()
    lead = x.shape[:-2]
    n_lead = int(np.prod(lead)) if lead else 1

    counts = np.zeros(h * w, dtype=np.int64)
    np.add.at(counts, flat_dst, 1)
    holes = counts == 0
    denom = np.maximum(counts, 1).astype(x.data.dtype)

    xf = x.data.reshape(n_lead, h * w)
    acc = np.zeros((n_lead, h * w), dtype=x.data.dtype)
    np.add.at(acc, (slice(None), flat_dst), xf)
    out = np.where(holes[None, :], xf, acc / denom[None, :])
    out = out.reshape(x.shape)

    def bwd(g):
        gf = g.reshape(n_lead, h * w)
        gx = (gf / denom[None, :])[:, flat_dst]
        gx += gf * holes[None, :]
        return (gx.reshape(x.shape),)

    warped = Tensor.from_op(out, (x,), bwd)
    coverage = Tensor((~holes).astype(np.float32).reshape(1, h, w))
    return warped, coverage


@dataclass
class AlignedVolume:
    """P-frame features rewarped into I-frame coordinates, with coverage."""

    features: list  # Tensor per P frame, same spatial dims as the I features
    coverage: list  # Tensor [1,H,W] per P frame, in [0,1]


def align_gop_features(p_features: list, meta: GopMetadata) -> AlignedVolume:
    """Chain each P frame's features back to the I frame hop by hop.

    Frame k is carried through the MV fields of frames k, k-1, ..., 1; each
    hop aligns to the preceding frame and coverage multiplies across hops.
    """
    n_p = meta.gop_size - 1
    if len(p_features) != n_p:
        raise ShapeError(
            f"got {len(p_features)} P-frame feature maps for a GOP with {n_p} P frames"
        )
    aligned = []
    coverages = []
    for k in range(1, meta.gop_size):
        feat = p_features[k - 1]
        cov = None
        for hop in range(k, 0, -1):
            feat, hop_cov = reverse_warp(feat, meta.frames[hop].mv)
            cov = hop_cov if cov is None else Tensor(cov.data * hop_cov.data)
        aligned.append(feat)
        coverages.append(cov)
    return AlignedVolume(features=aligned, coverage=coverages)
