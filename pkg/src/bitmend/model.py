"""The full restoration network and its streaming-inference variant.

A GOP is restored in one pass: a wide representation of the I frame, a
narrow shared-weight representation of every P frame, motion-vector
alignment of the P features onto the I frame, fusion and I-frame
generation, then per-P-frame generation guided by the restored I frame
warped into each P frame's geometry. All stacks predict residuals on top
of the degraded input and outputs are clamped to [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ShapeError, Tensor, add, clamp, concat, conv2d, narrow, no_grad
from .gq import StackParams, conv_init, init_stack, qp_plane, stack_forward
from .sidecar import FRAME_I, FrameMeta, GopMetadata
from .warp import align_gop_features, forward_warp


@dataclass
class ModelConfig:
    channels_i: int = 64
    channels_p: int = 16
    blocks_per_stack: int = 10
    gop_size: int = 7
    seed: int = 0

    @property
    def fuse_in_channels(self):
        return self.channels_i + (self.gop_size - 1) * self.channels_p

    def to_file(self, path):
        lines = [
            f"channels_i={self.channels_i}",
            f"channels_p={self.channels_p}",
            f"blocks_per_stack={self.blocks_per_stack}",
            f"gop_size={self.gop_size}",
            f"seed={self.seed}",
        ]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_file(cls, path):
        cfg = cls()
        for raw in Path(path).read_text().splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            if not hasattr(cfg, key):
                raise ValueError(f"unknown model config key {key!r}")
            setattr(cfg, key, int(value.strip()))
        return cfg


@dataclass
class ModelParams:
    config: ModelConfig
    i_rep: StackParams
    p_rep: StackParams
    fuse_w: Tensor
    fuse_b: Tensor
    i_gen: StackParams
    p_gen: StackParams

    def named_params(self) -> dict[str, Tensor]:
        out = {}
        for name, t in self.i_rep.named("i_rep"):
            out[name] = t
        for name, t in self.p_rep.named("p_rep"):
            out[name] = t
        out["fuse.w"] = self.fuse_w
        out["fuse.b"] = self.fuse_b
        for name, t in self.i_gen.named("i_gen"):
            out[name] = t
        for name, t in self.p_gen.named("p_gen"):
            out[name] = t
        return out


def init_model(config: ModelConfig, dtype=np.float32) -> ModelParams:
    rng = np.random.default_rng(config.seed)
    ci, cp, nb = config.channels_i, config.channels_p, config.blocks_per_stack
    i_rep = init_stack(rng, 3, ci, nb, dtype=dtype)
    p_rep = init_stack(rng, 3, cp, nb, dtype=dtype)
    fuse_w, fuse_b = conv_init(rng, ci, config.fuse_in_channels, 1, dtype)
    i_gen = init_stack(rng, ci, ci, nb, cout=3, dtype=dtype)
    p_gen = init_stack(rng, 6, ci, nb, cout=3, dtype=dtype)
    return ModelParams(config, i_rep, p_rep, fuse_w, fuse_b, i_gen, p_gen)


def load_into_model(params: ModelParams, named: dict[str, Tensor]):
    """Copy checkpoint tensors into an initialized model, by name."""
    own = params.named_params()
    missing = sorted(set(own) - set(named))
    extra = sorted(set(named) - set(own))
    if missing or extra:
        raise ValueError(f"checkpoint mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, t in own.items():
        src = named[name].data
        if src.shape != t.data.shape:
            raise ShapeError(f"checkpoint tensor {name} has shape {src.shape}, expected {t.data.shape}")
        t.data = src.astype(t.data.dtype, copy=True)


def count_parameters(params: ModelParams) -> int:
    return sum(int(t.size) for t in params.named_params().values())


@dataclass
class RestoredGop:
    frames: list  # Tensor [3,H,W] per frame, values in [0,1]

    def as_array(self) -> np.ndarray:
        return np.stack([f.data for f in self.frames])


def _as_frame_tensor(frame) -> Tensor:
    t = frame if isinstance(frame, Tensor) else Tensor(np.asarray(frame))
    if t.ndim != 3 or t.shape[0] != 3:
        raise ShapeError(f"frames must be [3,H,W], got {tuple(t.shape)}")
    return t


def restore_gop(frames, meta: GopMetadata, params: ModelParams, probe: dict | None = None) -> RestoredGop:
    cfg = params.config
    gop = cfg.gop_size
    if len(frames) != gop or meta.gop_size != gop:
        raise ShapeError(
            f"expected {gop} frames with matching metadata, got "
            f"{len(frames)} frames / {meta.gop_size} metadata entries"
        )
    meta.validate()
    tensors = [_as_frame_tensor(f) for f in frames]
    h, w = tensors[0].shape[-2:]
    if (w, h) != (meta.width, meta.height):
        raise ShapeError(f"frames are {w}x{h} but metadata says {meta.width}x{meta.height}")
    dtype = tensors[0].data.dtype
    planes = [Tensor(qp_plane(fr.qp, h, w, dtype)) for fr in meta.frames]

    f0 = tensors[0].reshape((1, 3, h, w))
    feat_i = stack_forward(f0, planes[0], params.i_rep)

    p_in = concat([t.reshape((1, 3, h, w)) for t in tensors[1:]], dim=0)
    p_planes = concat(planes[1:], dim=0)
    feat_p = stack_forward(p_in, p_planes, params.p_rep)
    per_frame = [narrow(feat_p, 0, k, 1) for k in range(gop - 1)]

    aligned = align_gop_features(per_frame, meta)
    fuse_in = concat([feat_i] + aligned.features, dim=1)
    fused = conv2d(fuse_in, params.fuse_w, params.fuse_b)
    if probe is not None:
        probe["fuse_in_channels"] = fuse_in.shape[1]
        probe["fused_channels"] = fused.shape[1]

    restored_i = clamp(add(f0, stack_forward(fused, planes[0], params.i_gen)), 0.0, 1.0)

    warped = [forward_warp(restored_i, meta.frames[k].mv) for k in range(1, gop)]
    pgen_in = concat(
        [concat([warped[k - 1], tensors[k].reshape((1, 3, h, w))], dim=1) for k in range(1, gop)],
        dim=0,
    )
    if probe is not None:
        probe["pgen_in_channels"] = pgen_in.shape[1]
    restored_p = clamp(add(p_in, stack_forward(pgen_in, p_planes, params.p_gen)), 0.0, 1.0)

    out = [restored_i.reshape((3, h, w))]
    for k in range(gop - 1):
        out.append(narrow(restored_p, 0, k, 1).reshape((3, h, w)))
    return RestoredGop(frames=out)


@dataclass
class StreamStats:
    substitutions: list = field(default_factory=list)  # output index of each cached frame
    peak_resident: int = 0

    def note_resident(self, count):
        self.peak_resident = max(self.peak_resident, count)


def streaming_restore(items, params: ModelParams, stats: StreamStats | None = None):
    """Restore an unbounded stream of (frame, FrameMeta) pairs.

    The first block must start with an I frame. After each block the last
    restored P frame is cached and stands in for the I frame of the next
    block of gop_size-1 P frames; its QP map is reused as the pseudo-I QP
    map. A short final block is padded by repeating its last frame and the
    padding outputs are dropped.
    """
    gop = params.config.gop_size
    it = iter(items)
    block = []
    for _ in range(gop):
        try:
            block.append(next(it))
        except StopIteration:
            raise ShapeError(f"stream ended after {len(block)} frames; one full GOP needed")
    frames = [f for f, _ in block]
    metas = [m for _, m in block]
    if not metas[0].is_i:
        raise ShapeError("stream must start with an I frame")
    h, w = np.asarray(frames[0]).shape[-2:]
    if stats:
        stats.note_resident(len(frames))
    with no_grad():
        restored = restore_gop(frames, GopMetadata(w, h, metas), params)
    yield from restored.frames
    out_index = gop - 1
    cache = restored.frames[-1]
    cache_qp = metas[-1].qp

    while True:
        block = []
        for _ in range(gop - 1):
            try:
                block.append(next(it))
            except StopIteration:
                break
        if not block:
            return
        real = len(block)
        while len(block) < gop - 1:
            block.append(block[-1])
        frames = [cache] + [f for f, _ in block]
        metas = [FrameMeta(FRAME_I, cache_qp)] + [m for _, m in block]
        if stats:
            stats.substitutions.append(out_index)
            stats.note_resident(len(frames))
        with no_grad():
            restored = restore_gop(frames, GopMetadata(w, h, metas), params)
        for k in range(1, real + 1):
            yield restored.frames[k]
        out_index += real
        cache = restored.frames[gop - 1]
        cache_qp = metas[gop - 1].qp
