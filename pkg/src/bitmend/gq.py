"""Quantization-conditioned restoration blocks.

Each block runs a two-conv trunk whose output feeds two attention branches
computed from the *same* trunk activations: a squeeze-excitation branch
that reweights channels from global statistics, and a gate branch driven
by the per-pixel quantization map. Branch outputs are summed onto the
block input.

The QP map enters as a [N,1,H,W] plane: grid values normalized by 51 and
nearest-neighbor upsampled from the block grid to pixel resolution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    add,
    conv2d,
    global_avg_pool,
    leaky_relu,
    mul,
    sigmoid,
)
from .sidecar import QPMap

LEAKY_SLOPE = 0.2
SE_REDUCTION = 4
GATE_BIAS_INIT = 2.0  # gates start near open: sigmoid(2) ~ 0.88


def conv_init(rng: np.random.Generator, cout: int, cin: int, k: int, dtype=np.float32):
    """Fan-in-scaled uniform init for a conv weight/bias pair."""
    bound = 1.0 / np.sqrt(cin * k * k)
    w = rng.uniform(-bound, bound, size=(cout, cin, k, k)).astype(dtype)
    b = rng.uniform(-bound, bound, size=(cout,)).astype(dtype)
    return Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)


@dataclass
class GQBlockParams:
    conv_a_w: Tensor
    conv_a_b: Tensor
    conv_b_w: Tensor
    conv_b_b: Tensor
    se_w1: Tensor
    se_b1: Tensor
    se_w2: Tensor
    se_b2: Tensor
    qp_w: Tensor
    qp_b: Tensor
    gate_w: Tensor
    gate_b: Tensor

    @property
    def channels(self):
        return self.conv_a_w.shape[0]

    def named(self, prefix: str):
        for field in (
            "conv_a_w", "conv_a_b", "conv_b_w", "conv_b_b",
            "se_w1", "se_b1", "se_w2", "se_b2",
            "qp_w", "qp_b", "gate_w", "gate_b",
        ):
            yield f"{prefix}.{field}", getattr(self, field)


def init_gq_block(rng: np.random.Generator, channels: int, dtype=np.float32) -> GQBlockParams:
    if channels % SE_REDUCTION:
        raise ShapeError(f"channel count {channels} must be divisible by {SE_REDUCTION}")
    mid = channels // SE_REDUCTION
    conv_a_w, conv_a_b = conv_init(rng, channels, channels, 3, dtype)
    conv_b_w, conv_b_b = conv_init(rng, channels, channels, 3, dtype)
    se_w1, se_b1 = conv_init(rng, mid, channels, 1, dtype)
    se_w2, se_b2 = conv_init(rng, channels, mid, 1, dtype)
    qp_w, qp_b = conv_init(rng, channels, 1, 3, dtype)
    gate_w, gate_b = conv_init(rng, channels, channels, 1, dtype)
    gate_b.data = np.full_like(gate_b.data, GATE_BIAS_INIT)
    return GQBlockParams(
        conv_a_w, conv_a_b, conv_b_w, conv_b_b,
        se_w1, se_b1, se_w2, se_b2,
        qp_w, qp_b, gate_w, gate_b,
    )


def qp_plane(qp_map: QPMap, height: int, width: int, dtype=np.float32) -> np.ndarray:
    """Normalized QP values upsampled to pixel resolution, shape [1,1,H,W]."""
    bs = qp_map.block_size
    plane = (qp_map.grid.astype(dtype) / 51.0).repeat(bs, axis=0).repeat(bs, axis=1)
    if plane.shape[0] < height or plane.shape[1] < width:
        raise ShapeError(
            f"QP grid {qp_map.grid.shape} at block size {bs} cannot cover {height}x{width}"
        )
    return plane[None, None, :height, :width]


def qp_embed(plane: Tensor, p: GQBlockParams) -> Tensor:
    """Learned embedding of the QP plane at feature resolution."""
    return leaky_relu(conv2d(plane, p.qp_w, p.qp_b, stride=1, padding=1), LEAKY_SLOPE)


def gq_forward(x: Tensor, plane: Tensor, p: GQBlockParams) -> Tensor:
    if x.shape[1] != p.channels:
        raise ShapeError(f"input has {x.shape[1]} channels, block expects {p.channels}")
    if plane.shape[0] != x.shape[0] or plane.shape[-2:] != x.shape[-2:]:
        raise ShapeError(f"QP plane {tuple(plane.shape)} does not match input {tuple(x.shape)}")
    # shared trunk, evaluated once and consumed by both branches
    y = conv2d(leaky_relu(conv2d(x, p.conv_a_w, p.conv_a_b, 1, 1), LEAKY_SLOPE),
               p.conv_b_w, p.conv_b_b, 1, 1)
    # channel self-attention from global statistics
    s = sigmoid(conv2d(leaky_relu(conv2d(global_avg_pool(y), p.se_w1, p.se_b1), LEAKY_SLOPE),
                       p.se_w2, p.se_b2))
    branch_self = mul(s, y)
    # cross-attention on the quantization map, gating per channel and position
    gate = sigmoid(conv2d(qp_embed(plane, p), p.gate_w, p.gate_b))
    branch_qp = mul(gate, y)
    return add(x, add(branch_self, branch_qp))


@dataclass
class StackParams:
    proj_w: Tensor
    proj_b: Tensor
    blocks: list
    out_w: Tensor | None = None
    out_b: Tensor | None = None

    @property
    def channels(self):
        return self.proj_w.shape[0]

    def named(self, prefix: str):
        yield f"{prefix}.proj_w", self.proj_w
        yield f"{prefix}.proj_b", self.proj_b
        for i, blk in enumerate(self.blocks):
            yield from blk.named(f"{prefix}.block{i}")
        if self.out_w is not None:
            yield f"{prefix}.out_w", self.out_w
            yield f"{prefix}.out_b", self.out_b


def init_stack(
    rng: np.random.Generator,
    cin: int,
    channels: int,
    n_blocks: int,
    cout: int | None = None,
    dtype=np.float32,
) -> StackParams:
    proj_w, proj_b = conv_init(rng, channels, cin, 3, dtype)
    blocks = [init_gq_block(rng, channels, dtype) for _ in range(n_blocks)]
    out_w = out_b = None
    if cout is not None:
        out_w, out_b = conv_init(rng, cout, channels, 3, dtype)
    return StackParams(proj_w, proj_b, blocks, out_w, out_b)


def stack_forward(x: Tensor, plane: Tensor, sp: StackParams) -> Tensor:
    h = conv2d(x, sp.proj_w, sp.proj_b, stride=1, padding=1)
    for blk in sp.blocks:
        h = gq_forward(h, plane, blk)
    if sp.out_w is not None:
        h = conv2d(h, sp.out_w, sp.out_b, stride=1, padding=1)
    return h
