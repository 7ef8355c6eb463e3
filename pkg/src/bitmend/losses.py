"""Training objectives: pixel regression, scale-space bands, adversarial
critic, and texture features.

The scale-space loss filters each of four dyadic scales with four 5x5
Gaussian kernels (sigma 1.1/2.2/3.3/4.4, valid cross-correlation), takes
the three adjacent-filter differences per scale as frequency bands, and
sums the absolute band errors. Kernels are renormalized to unit sum so a
constant image produces exactly zero bands; with the truncated 5x5 support
the raw formula would leak DC into every band.

Band reduction is the mean by default so that unit loss weights are
resolution independent; the written-out plain sum is available as
reduction="sum".
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    absolute,
    add,
    avg_downsample2x,
    concat,
    conv2d,
    global_avg_pool,
    leaky_relu,
    mul,
    reduce_mean,
    reduce_sum,
    reflect_pad2d,
    reshape,
    sub,
)
from .gq import conv_init

DOG_SIGMAS = (1.1, 2.2, 3.3, 4.4)
DOG_SCALES = (1, 2, 4, 8)
DOG_KERNEL_SIZE = 5
DOG_MIN_DIM = 8 * DOG_KERNEL_SIZE

WEIGHT_CLIP = 0.01


def _check_same_shape(o: Tensor, t: Tensor):
    if o.shape != t.shape:
        raise ShapeError(f"loss operands differ in shape: {tuple(o.shape)} vs {tuple(t.shape)}")


def _reduce(x: Tensor, reduction: str) -> Tensor:
    if reduction == "mean":
        return reduce_mean(x)
    if reduction == "sum":
        return reduce_sum(x)
    raise ValueError(f"unknown reduction {reduction!r}")


def l1_loss(o: Tensor, t: Tensor, reduction: str = "mean") -> Tensor:
    _check_same_shape(o, t)
    return _reduce(absolute(sub(t, o)), reduction)


def gaussian_kernel(sigma: float, normalize: bool = True) -> np.ndarray:
    """5x5 kernel with entries exp(-(i^2+j^2)/(2 sigma^2)) / (2 pi sigma^2)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    offsets = np.arange(-2, 3, dtype=np.float64)
    ii, jj = np.meshgrid(offsets, offsets, indexing="ij")
    k = np.exp(-(ii**2 + jj**2) / (2.0 * sigma * sigma)) / (2.0 * np.pi * sigma * sigma)
    if normalize:
        k = k / k.sum()
    return k


def _blur_valid(x: Tensor, kernel: Tensor) -> Tensor:
    """Depthwise valid cross-correlation with a single 5x5 kernel."""
    n, c, h, w = x.shape
    flat = reshape(x, (n * c, 1, h, w))
    out = conv2d(flat, kernel, None, stride=1, padding=0)
    return reshape(out, (n, c, h - DOG_KERNEL_SIZE + 1, w - DOG_KERNEL_SIZE + 1))


def _band_stack(x: Tensor, kernels: list[Tensor]) -> list[Tensor]:
    filtered = [_blur_valid(x, k) for k in kernels]
    return [sub(filtered[i + 1], filtered[i]) for i in range(len(filtered) - 1)]


def dog_loss(o: Tensor, t: Tensor, reduction: str = "mean") -> Tensor:
    _check_same_shape(o, t)
    if o.ndim == 3:
        o = reshape(o, (1,) + tuple(o.shape))
        t = reshape(t, (1,) + tuple(t.shape))
    if o.ndim != 4:
        raise ShapeError(f"dog_loss expects [N,C,H,W], got {tuple(o.shape)}")
    h, w = o.shape[-2], o.shape[-1]
    if min(h, w) < DOG_MIN_DIM:
        raise ShapeError(
            f"dog_loss needs at least {DOG_MIN_DIM}x{DOG_MIN_DIM} pixels "
            f"(valid 5x5 filtering at 1/8 scale), got {h}x{w}"
        )
    dtype = o.data.dtype
    kernels = [
        Tensor(gaussian_kernel(s)[None, None].astype(dtype)) for s in DOG_SIGMAS
    ]
    total = None
    os_, ts_ = o, t
    for scale in DOG_SCALES:
        if scale > 1:
            os_ = avg_downsample2x(os_)
            ts_ = avg_downsample2x(ts_)
        for band_o, band_t in zip(_band_stack(os_, kernels), _band_stack(ts_, kernels)):
            term = _reduce(absolute(sub(band_t, band_o)), reduction)
            total = term if total is None else add(total, term)
    return total


# ---------------------------------------------------------------- critic


@dataclass
class CriticConfig:
    gop_size: int = 7
    n_layers: int = 8
    base_channels: int = 64
    max_channels: int = 512
    pad_multiple: int = 256
    kernel: int = 4

    @property
    def in_channels(self):
        # compressed frames stacked with the candidate frames, 3 channels each
        return 2 * self.gop_size * 3


@dataclass
class CriticParams:
    config: CriticConfig
    convs: list  # (w, b) pairs, stride 2
    head_w: Tensor
    head_b: Tensor

    def named_params(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(self.convs):
            out[f"critic.conv{i}_w"] = w
            out[f"critic.conv{i}_b"] = b
        out["critic.head_w"] = self.head_w
        out["critic.head_b"] = self.head_b
        return out


def init_critic(config: CriticConfig, seed: int = 0, dtype=np.float32) -> CriticParams:
    rng = np.random.default_rng(seed)
    convs = []
    cin = config.in_channels
    cout = config.base_channels
    for _ in range(config.n_layers):
        convs.append(conv_init(rng, cout, cin, config.kernel, dtype))
        cin = cout
        cout = min(cout * 2, config.max_channels)
    head_w, head_b = conv_init(rng, 1, cin, 1, dtype)
    return CriticParams(config, convs, head_w, head_b)


def critic_forward(compressed: Tensor, candidate: Tensor, p: CriticParams) -> Tensor:
    """Scalar realness score for a whole GOP; higher means judged more real.

    Both inputs are [1, 3*gop, H, W] channel stacks; they are concatenated,
    reflection-padded up to the configured multiple, then reduced by the
    stride-2 ladder and globally averaged.
    """
    cfg = p.config
    x = concat([compressed, candidate], dim=1)
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ShapeError(
            f"critic expects {cfg.in_channels} stacked channels, got {tuple(x.shape)}"
        )
    h, w = x.shape[-2], x.shape[-1]
    m = cfg.pad_multiple
    ph = (m - h % m) % m
    pw = (m - w % m) % m
    if ph or pw:
        x = reflect_pad2d(x, ph, pw)
    for wgt, bias in p.convs:
        x = leaky_relu(conv2d(x, wgt, bias, stride=2, padding=1), 0.2)
    pooled = global_avg_pool(x)
    score = conv2d(pooled, p.head_w, p.head_b)
    return reshape(score, ())


def clip_critic_weights(p: CriticParams, clip: float = WEIGHT_CLIP):
    """Lipschitz constraint of the original Wasserstein formulation."""
    for t in p.named_params().values():
        np.clip(t.data, -clip, clip, out=t.data)


def _mean_of(scores: list[Tensor]) -> Tensor:
    total = scores[0]
    for s in scores[1:]:
        total = add(total, s)
    return mul(total, 1.0 / len(scores))


def wgan_losses(scores_real: list[Tensor], scores_fake: list[Tensor]) -> tuple[Tensor, Tensor]:
    """(critic_loss, generator_loss) from per-example critic scores."""
    mean_fake = _mean_of(scores_fake)
    critic_loss = sub(mean_fake, _mean_of(scores_real))
    generator_loss = mul(mean_fake, -1.0)
    return critic_loss, generator_loss


# ---------------------------------------------------------------- texture


def texture_loss(o: Tensor, t: Tensor, feature_net) -> Tensor:
    """Mean absolute difference between feature maps of any extractor."""
    _check_same_shape(o, t)
    return l1_loss(feature_net(o), feature_net(t))


def toy_feature_net(seed: int = 0, channels: int = 8, dtype=np.float32):
    """Fixed-seed random 3-layer conv extractor; a stand-in for a pretrained
    texture network so the loss plumbing stays testable."""
    rng = np.random.default_rng(seed)
    layers = [conv_init(rng, channels, 3, 3, dtype)]
    layers.append(conv_init(rng, channels, channels, 3, dtype))
    layers.append(conv_init(rng, channels, channels, 3, dtype))
    for w, b in layers:
        w.requires_grad = False
        b.requires_grad = False

    def net(x: Tensor) -> Tensor:
        for w, b in layers:
            x = leaky_relu(conv2d(x, w, b, stride=1, padding=1), 0.2)
        return x

    return net


# ---------------------------------------------------------------- composite


@dataclass
class LossWeights:
    alpha: float
    beta: float
    gamma: float = 0.0
    delta: float = 0.0

    @classmethod
    def regression(cls):
        return cls(alpha=1.0, beta=1.0, gamma=0.0, delta=0.0)

    @classmethod
    def gan(cls):
        return cls(alpha=0.01, beta=0.01, gamma=0.005, delta=1.0)


def composite_loss(
    o: Tensor,
    t: Tensor,
    weights: LossWeights,
    mode: str = "regression",
    critic: CriticParams | None = None,
    compressed: Tensor | None = None,
    feature_net=None,
    reduction: str = "mean",
):
    """Weighted total plus the individual terms; GAN mode adds the
    adversarial generator term and the texture term."""
    parts = {
        "l1": l1_loss(o, t, reduction),
        "dog": dog_loss(o, t, reduction),
    }
    total = add(mul(parts["l1"], weights.alpha), mul(parts["dog"], weights.beta))
    if mode == "regression":
        return total, parts
    if mode != "gan":
        raise ValueError(f"unknown loss mode {mode!r}")
    if critic is None or compressed is None:
        raise ValueError("GAN mode requires a critic and the compressed frames")
    gop = critic.config.gop_size
    h, w = o.shape[-2], o.shape[-1]
    fake = critic_forward(
        reshape(compressed, (1, gop * 3, h, w)), reshape(o, (1, gop * 3, h, w)), critic
    )
    parts["wasserstein"] = mul(fake, -1.0)
    total = add(total, mul(parts["wasserstein"], weights.gamma))
    delta = weights.delta
    if feature_net is None:
        if delta != 0.0:
            warnings.warn("no texture feature net supplied; texture term skipped (delta=0)")
        delta = 0.0
    else:
        parts["texture"] = texture_loss(o, t, feature_net)
        total = add(total, mul(parts["texture"], delta))
    return total, parts
