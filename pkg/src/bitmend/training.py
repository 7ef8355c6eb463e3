"""Desk-scale training: regression pretraining and adversarial fine-tuning.

Data comes either from the toy codec (synthesized or supplied clips) or
from a directory holding degraded/reference YUV pairs plus a sidecar. One
epoch is one pass over all extracted GOP crops. Augmentation applies the
same crop window and flips to frames, targets and metadata; motion vectors
are mirrored with the matching component negated so warping commutes with
the flip exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, add, collect_grads, mul, no_grad, zero_grads
from .checkpoint import load_checkpoint, save_checkpoint
from .losses import (
    CriticConfig,
    LossWeights,
    clip_critic_weights,
    composite_loss,
    critic_forward,
    init_critic,
    toy_feature_net,
    wgan_losses,
)
from .model import ModelConfig, ModelParams, init_model, load_into_model, restore_gop
from .optim import adam_state, cosine_anneal, optimizer_step, rmsprop_state
from .sidecar import FrameMeta, GopMetadata, MVField, QPMap, read_sidecar
from .toycodec import ToyCodecConfig, encode_clip
from .video import VideoClip, read_yuv420, yuv_frame_to_rgb


class TrainingDiverged(RuntimeError):
    def __init__(self, step, lr, grad_norms):
        self.step = step
        self.lr = lr
        self.grad_norms = grad_norms
        worst = sorted(grad_norms.items(), key=lambda kv: -kv[1])[:3]
        super().__init__(
            f"loss became non-finite at step {step} (lr {lr:g}); "
            f"largest gradient norms: {worst}"
        )


@dataclass
class TrainConfig:
    crop: int = 64
    epochs: int = 500
    lr: float = 1e-4
    anneal_start: int | None = None  # default: final third anneals to zero
    loss: str = "regression"  # "regression" or "gan"
    seed: int = 0
    batch_size: int = 1
    data: str = "toycodec:qp=35:gops=1:size=64"
    out_dir: str = "train_out"
    # gan fine-tuning
    gan_lr: float = 1e-5
    gan_epochs: int = 200
    critic_steps: int = 5
    critic_layers: int = 4
    critic_base_channels: int = 8
    critic_pad_multiple: int = 16
    weights: LossWeights | None = None

    def resolved_anneal_start(self, epochs=None):
        epochs = self.epochs if epochs is None else epochs
        if self.anneal_start is not None:
            return self.anneal_start
        return epochs - max(1, epochs // 3)

    def to_file(self, path):
        lines = []
        for key in (
            "crop", "epochs", "lr", "anneal_start", "loss", "seed", "batch_size",
            "data", "out_dir", "gan_lr", "gan_epochs", "critic_steps",
        ):
            value = getattr(self, key)
            if value is not None:
                lines.append(f"{key}={value}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_file(cls, path):
        cfg = cls()
        casts = {
            "crop": int, "epochs": int, "anneal_start": int, "seed": int,
            "batch_size": int, "gan_epochs": int, "critic_steps": int,
            "critic_layers": int, "critic_base_channels": int,
            "critic_pad_multiple": int, "lr": float, "gan_lr": float,
            "loss": str, "data": str, "out_dir": str,
        }
        for raw in Path(path).read_text().splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in casts:
                raise ValueError(f"unknown train config key {key!r}")
            setattr(cfg, key, casts[key](value.strip()))
        return cfg


@dataclass
class GopSample:
    degraded: np.ndarray  # [G,3,H,W] float32 in [0,1]
    target: np.ndarray  # [G,3,H,W] float32 in [0,1]
    meta: GopMetadata


# ---------------------------------------------------------------- datasets


def _texture(rng, h, w, low=30, high=220):
    coarse = rng.random((h // 8 + 2, w // 8 + 2))
    ys = np.linspace(0, coarse.shape[0] - 1.001, h)
    xs = np.linspace(0, coarse.shape[1] - 1.001, w)
    y0, x0 = ys.astype(int), xs.astype(int)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    up = (
        coarse[y0][:, x0] * (1 - fy) * (1 - fx)
        + coarse[y0 + 1][:, x0] * fy * (1 - fx)
        + coarse[y0][:, x0 + 1] * (1 - fy) * fx
        + coarse[y0 + 1][:, x0 + 1] * fy * fx
    )
    tex = up * 0.85 + rng.random((h, w)) * 0.15
    return (low + tex * (high - low)).astype(np.uint8)


def synthesize_clip(seed: int, width: int, height: int, n_frames: int, step=(3, 2)) -> VideoClip:
    """Translating textured clip, the built-in toy training source."""
    rng = np.random.default_rng(seed)
    sx, sy = step
    cw = width + 2 * 16 + abs(sx) * n_frames
    ch = height + 2 * 16 + abs(sy) * n_frames
    cy = _texture(rng, ch, cw)
    cu = _texture(rng, ch // 2, cw // 2, 108, 148)
    cv = _texture(rng, ch // 2, cw // 2, 108, 148)
    clip = VideoClip(width, height, "yuv420")
    for k in range(n_frames):
        oy = 16 + (k * sy if sy > 0 else (n_frames - k) * -sy)
        ox = 16 + (k * sx if sx > 0 else (n_frames - k) * -sx)
        clip.frames.append(
            (
                cy[oy : oy + height, ox : ox + width].copy(),
                cu[oy // 2 : oy // 2 + height // 2, ox // 2 : ox // 2 + width // 2].copy(),
                cv[oy // 2 : oy // 2 + height // 2, ox // 2 : ox // 2 + width // 2].copy(),
            )
        )
    return clip


def _frames_to_rgb(planes) -> np.ndarray:
    return np.stack([yuv_frame_to_rgb(*f) for f in planes])


def dataset_from_toycodec(clip: VideoClip, codec_cfg: ToyCodecConfig) -> list[GopSample]:
    samples = []
    encoded = encode_clip(clip, codec_cfg)
    for g, enc in enumerate(encoded):
        start = g * codec_cfg.gop_size
        target = _frames_to_rgb(clip.frames[start : start + codec_cfg.gop_size])
        degraded = _frames_to_rgb(enc.recon)
        samples.append(GopSample(degraded, target, enc.metadata))
    return samples


def dataset_from_dir(path) -> list[GopSample]:
    """Directory layout: degraded.yuv, reference.yuv, sidecar.mbmd, dims.cfg
    (width=/height= lines)."""
    root = Path(path)
    dims = {}
    for line in (root / "dims.cfg").read_text().splitlines():
        key, _, value = line.partition("=")
        dims[key.strip()] = int(value.strip())
    w, h = dims["width"], dims["height"]
    degraded = read_yuv420(root / "degraded.yuv", w, h)
    reference = read_yuv420(root / "reference.yuv", w, h)
    gops = read_sidecar(root / "sidecar.mbmd")
    samples = []
    at = 0
    for meta in gops:
        g = meta.gop_size
        samples.append(
            GopSample(
                _frames_to_rgb(degraded.frames[at : at + g]),
                _frames_to_rgb(reference.frames[at : at + g]),
                meta,
            )
        )
        at += g
    return samples


def build_dataset(cfg: TrainConfig) -> list[GopSample]:
    if cfg.data.startswith("toycodec"):
        opts = {"qp": 35, "gops": 1, "size": 64, "seed": cfg.seed}
        for part in cfg.data.split(":")[1:]:
            key, _, value = part.partition("=")
            opts[key] = int(value)
        clip = synthesize_clip(opts["seed"], opts["size"], opts["size"], 7 * opts["gops"])
        return dataset_from_toycodec(clip, ToyCodecConfig(qp_schedule=opts["qp"]))
    return dataset_from_dir(cfg.data)


# ---------------------------------------------------------------- augmentation


def crop_metadata(meta: GopMetadata, bx0: int, by0: int, bw: int, bh: int) -> GopMetadata:
    bs = meta.block_size
    frames = []
    for fr in meta.frames:
        qp = QPMap(bs, fr.qp.grid[by0 : by0 + bh, bx0 : bx0 + bw].copy())
        mv = None
        if fr.mv is not None:
            mv = MVField(bs, fr.mv.grid[by0 : by0 + bh, bx0 : bx0 + bw].copy())
        frames.append(FrameMeta(fr.frame_type, qp, mv))
    return GopMetadata(bw * bs, bh * bs, frames)


def flip_metadata(meta: GopMetadata, flip_h: bool, flip_v: bool) -> GopMetadata:
    frames = []
    for fr in meta.frames:
        qp_grid = fr.qp.grid
        mv_grid = None if fr.mv is None else fr.mv.grid.copy()
        if flip_h:
            qp_grid = qp_grid[:, ::-1]
            if mv_grid is not None:
                mv_grid = mv_grid[:, ::-1].copy()
                mv_grid[..., 0] = -mv_grid[..., 0]
        if flip_v:
            qp_grid = qp_grid[::-1, :]
            if mv_grid is not None:
                mv_grid = mv_grid[::-1, :].copy()
                mv_grid[..., 1] = -mv_grid[..., 1]
        frames.append(
            FrameMeta(
                fr.frame_type,
                QPMap(fr.qp.block_size, np.ascontiguousarray(qp_grid)),
                None if mv_grid is None else MVField(fr.mv.block_size, np.ascontiguousarray(mv_grid)),
            )
        )
    return GopMetadata(meta.width, meta.height, frames)


def _flip_frames(arr: np.ndarray, flip_h: bool, flip_v: bool) -> np.ndarray:
    if flip_h:
        arr = arr[..., ::-1]
    if flip_v:
        arr = arr[..., ::-1, :]
    return np.ascontiguousarray(arr)


def sample_batch(dataset: list[GopSample], cfg: TrainConfig, rng: np.random.Generator):
    """Random block-aligned crops with paired flips on data and metadata."""
    degraded, targets, metas = [], [], []
    for _ in range(cfg.batch_size):
        sample = dataset[int(rng.integers(len(dataset)))]
        bs = sample.meta.block_size
        if cfg.crop % bs:
            raise ValueError(f"crop {cfg.crop} is not a multiple of block size {bs}")
        cb = cfg.crop // bs
        gh, gw = sample.meta.frames[0].qp.grid.shape
        if cb > gw or cb > gh:
            raise ValueError(f"crop {cfg.crop} exceeds frame {sample.meta.width}x{sample.meta.height}")
        bx0 = int(rng.integers(gw - cb + 1))
        by0 = int(rng.integers(gh - cb + 1))
        flip_h = bool(rng.integers(2))
        flip_v = bool(rng.integers(2))
        y0, x0 = by0 * bs, bx0 * bs
        deg = sample.degraded[:, :, y0 : y0 + cfg.crop, x0 : x0 + cfg.crop]
        tgt = sample.target[:, :, y0 : y0 + cfg.crop, x0 : x0 + cfg.crop]
        meta = crop_metadata(sample.meta, bx0, by0, cb, cb)
        degraded.append(_flip_frames(deg, flip_h, flip_v))
        targets.append(_flip_frames(tgt, flip_h, flip_v))
        metas.append(flip_metadata(meta, flip_h, flip_v))
    return degraded, targets, metas


# ---------------------------------------------------------------- loops


HISTORY_HEADER = "epoch,step,l1,dog,wasserstein,texture,total,lr"


def _history_row(epoch, step, parts, total, lr):
    def val(name):
        return f"{parts[name].item():.8f}" if name in parts else "0"

    return (
        f"{epoch},{step},{val('l1')},{val('dog')},{val('wasserstein')},"
        f"{val('texture')},{total:.8f},{lr:.8g}"
    )


def _grad_norms(grads):
    return {k: float(np.linalg.norm(g)) for k, g in grads.items()}


def _forward_batch_loss(params, degraded, targets, metas, weights, mode="regression", **kw):
    total = None
    parts_acc = {}
    for deg, tgt, meta in zip(degraded, targets, metas):
        frames = [Tensor(deg[i]) for i in range(deg.shape[0])]
        restored = restore_gop(frames, meta, params)
        out = Tensor.from_op(
            np.stack([f.data for f in restored.frames]),
            tuple(restored.frames),
            lambda g: tuple(g[i] for i in range(g.shape[0])),
        )
        loss, parts = composite_loss(out, Tensor(tgt), weights, mode=mode, **(
            dict(kw, compressed=Tensor(deg)) if mode == "gan" else {}
        ))
        total = loss if total is None else add(total, loss)
        for name, t in parts.items():
            parts_acc[name] = t if name not in parts_acc else add(parts_acc[name], t)
    scale = 1.0 / len(degraded)
    total = mul(total, scale)
    parts_acc = {k: mul(v, scale) for k, v in parts_acc.items()}
    return total, parts_acc


def train_regression(cfg: TrainConfig, model_config: ModelConfig | None = None):
    """Adam at cfg.lr with cosine annealing to zero; loss alpha*L1 + beta*DoG."""
    model_config = model_config or ModelConfig(
        channels_i=8, channels_p=4, blocks_per_stack=2, seed=cfg.seed
    )
    params = init_model(model_config)
    named = params.named_params()
    dataset = build_dataset(cfg)
    rng = np.random.default_rng(cfg.seed)
    opt = adam_state(lr=cfg.lr)
    weights = cfg.weights or LossWeights.regression()
    anneal_start = cfg.resolved_anneal_start()
    history = [HISTORY_HEADER]
    step = 0
    steps_per_epoch = max(1, math.ceil(len(dataset) / cfg.batch_size))
    for epoch in range(cfg.epochs):
        lr = cosine_anneal(cfg.lr, epoch, anneal_start, cfg.epochs)
        opt.lr = lr
        for _ in range(steps_per_epoch):
            zero_grads(named)
            degraded, targets, metas = sample_batch(dataset, cfg, rng)
            total, parts = _forward_batch_loss(params, degraded, targets, metas, weights)
            value = total.item()
            if not math.isfinite(value):
                total.backward()
                raise TrainingDiverged(step, lr, _grad_norms(collect_grads(named)))
            if lr > 0:
                total.backward()
                optimizer_step(opt, named, collect_grads(named))
            history.append(_history_row(epoch, step, parts, value, lr))
            step += 1
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "regression.mbwt"
    save_checkpoint(ckpt, named)
    model_config.to_file(out_dir / "model.cfg")
    (out_dir / "loss_curve.csv").write_text("\n".join(history) + "\n")
    return params, history, ckpt


def train_gan(cfg: TrainConfig, init_checkpoint, model_config: ModelConfig | None = None):
    """RMSProp fine-tuning with the adversarial preset, 5 critic steps per
    generator step and critic weight clipping. With gamma = delta = 0 the
    loop reduces to regression continuation under RMSProp."""
    model_config = model_config or ModelConfig(
        channels_i=8, channels_p=4, blocks_per_stack=2, seed=cfg.seed
    )
    params = init_model(model_config)
    load_into_model(params, load_checkpoint(init_checkpoint))
    named = params.named_params()
    dataset = build_dataset(cfg)
    rng = np.random.default_rng(cfg.seed + 1)
    weights = cfg.weights or LossWeights.gan()
    adversarial = weights.gamma != 0.0
    gen_opt = rmsprop_state(lr=cfg.gan_lr)
    critic = None
    critic_named = None
    critic_opt = None
    feature_net = toy_feature_net(seed=cfg.seed) if weights.delta != 0.0 else None
    if adversarial:
        critic = init_critic(
            CriticConfig(
                gop_size=model_config.gop_size,
                n_layers=cfg.critic_layers,
                base_channels=cfg.critic_base_channels,
                pad_multiple=cfg.critic_pad_multiple,
            ),
            seed=cfg.seed,
        )
        critic_named = critic.named_params()
        critic_opt = rmsprop_state(lr=cfg.gan_lr)
    history = [HISTORY_HEADER]
    step = 0
    for epoch in range(cfg.gan_epochs):
        if adversarial:
            for _ in range(cfg.critic_steps):
                degraded, targets, metas = sample_batch(dataset, cfg, rng)
                zero_grads(critic_named)
                scores_real, scores_fake = [], []
                for deg, tgt, meta in zip(degraded, targets, metas):
                    g, _, h, w = deg.shape
                    frames = [Tensor(deg[i]) for i in range(g)]
                    with no_grad():
                        restored = restore_gop(frames, meta, params)
                    comp = Tensor(deg.reshape(1, g * 3, h, w))
                    scores_real.append(
                        critic_forward(comp, Tensor(tgt.reshape(1, g * 3, h, w)), critic)
                    )
                    scores_fake.append(
                        critic_forward(comp, Tensor(restored.as_array().reshape(1, g * 3, h, w)), critic)
                    )
                critic_loss, _ = wgan_losses(scores_real, scores_fake)
                if not math.isfinite(critic_loss.item()):
                    raise TrainingDiverged(step, cfg.gan_lr, {})
                critic_loss.backward()
                optimizer_step(critic_opt, critic_named, collect_grads(critic_named))
                clip_critic_weights(critic)
        degraded, targets, metas = sample_batch(dataset, cfg, rng)
        zero_grads(named)
        mode = "gan" if adversarial else "regression"
        extra = dict(critic=critic, feature_net=feature_net) if adversarial else {}
        total, parts = _forward_batch_loss(
            params, degraded, targets, metas, weights, mode=mode, **extra
        )
        value = total.item()
        if not math.isfinite(value):
            raise TrainingDiverged(step, cfg.gan_lr, _grad_norms(collect_grads(named)))
        total.backward()
        optimizer_step(gen_opt, named, collect_grads(named))
        history.append(_history_row(epoch, step, parts, value, cfg.gan_lr))
        step += 1
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "gan.mbwt"
    save_checkpoint(ckpt, named)
    (out_dir / "gan_loss_curve.csv").write_text("\n".join(history) + "\n")
    return params, history, ckpt
