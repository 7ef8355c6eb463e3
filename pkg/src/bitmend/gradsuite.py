"""The full finite-difference verification suite behind `bitmend gradcheck`.

Every differentiable primitive, the quantization-conditioned block, every
loss term, and a tiny end-to-end pipeline are checked in 64-bit against
central differences. Entries return (name, max_relative_error, tolerance).
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gq import init_gq_block, gq_forward, qp_plane
from .gradcheck import finite_difference_check
from .losses import (
    CriticConfig,
    LossWeights,
    composite_loss,
    critic_forward,
    dog_loss,
    init_critic,
    l1_loss,
    texture_loss,
    toy_feature_net,
    wgan_losses,
)
from .model import ModelConfig, init_model, restore_gop
from .sidecar import FRAME_I, FRAME_P, FrameMeta, GopMetadata, MVField, QPMap
from .warp import forward_warp, reverse_warp

TOL_DEFAULT = 1e-4
TOL_PIPELINE = 1e-3


def _away_from_kinks(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, x + np.sign(x + 0.5) * margin, x)


def run_gradient_suite(max_elems: int = 30, seed: int = 0):
    rng = np.random.default_rng(seed)
    results = []

    def check(name, fn, inputs, tol=TOL_DEFAULT, elems=None):
        err = finite_difference_check(fn, inputs, max_elems=elems or max_elems)
        results.append((name, err, tol))

    x = Tensor(_away_from_kinks(rng, (1, 3, 8, 8)), requires_grad=True)
    y = Tensor(_away_from_kinks(rng, (1, 3, 8, 8)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 3, 3, 3)) * 0.3, requires_grad=True)
    b = Tensor(rng.standard_normal(4) * 0.1, requires_grad=True)

    check("conv2d", lambda a, ww, bb: ad.conv2d(a, ww, bb, 1, 1).sum(), [x, w, b])
    check("conv2d_stride2", lambda a, ww, bb: ad.conv2d(a, ww, bb, 2, 0).sum(), [x, w, b])
    check("add", lambda a, c: ad.mul(ad.add(a, c), a).sum(), [x, y])
    check("sub", lambda a, c: ad.mul(ad.sub(a, c), ad.sub(a, c)).sum(), [x, y])
    check("mul", lambda a, c: ad.mul(a, c).sum(), [x, y])
    check("leaky_relu", lambda a: ad.mul(ad.leaky_relu(a, 0.2), a).sum(), [x])
    check("sigmoid", lambda a: ad.mul(ad.sigmoid(a), a).sum(), [x])
    check("clamp", lambda a: ad.mul(ad.clamp(a, -0.8, 0.8), a).sum(), [x])
    check("abs", lambda a: ad.mul(ad.absolute(a), ad.sigmoid(a)).sum(), [x])
    check("reduce_sum", lambda a: ad.mul(ad.reduce_sum(a, [2, 3]), ad.reduce_sum(a, [2, 3])).sum(), [x])
    check("reduce_mean", lambda a: ad.mul(ad.reduce_mean(a, [1]), ad.reduce_mean(a, [1])).sum(), [x])
    check("global_avg_pool", lambda a: ad.mul(ad.global_avg_pool(a), ad.global_avg_pool(a)).sum(), [x])
    check("concat", lambda a, c: ad.mul(ad.concat([a, c], 1), ad.concat([c, a], 1)).sum(), [x, y])
    check("narrow", lambda a: ad.mul(ad.narrow(a, 2, 1, 5), ad.narrow(a, 2, 2, 5)).sum(), [x])
    check("reshape", lambda a: ad.mul(ad.reshape(a, (3, 64)), ad.reshape(a, (3, 64))).sum(), [x])
    check("avg_downsample2x", lambda a: ad.mul(ad.avg_downsample2x(a), ad.avg_downsample2x(a)).sum(), [x])
    check("reflect_pad2d", lambda a: ad.mul(ad.reflect_pad2d(a, 5, 3), ad.reflect_pad2d(a, 5, 3)).sum(), [x])
    rr = np.array([[0, 0], [7, 3]])
    cc = np.array([[1, 1], [2, 5]])
    check("take_map", lambda a: ad.mul(ad.take_map(a, rr, cc), ad.take_map(a, rr, cc)).sum(), [x])

    # warps
    mv = MVField(16, rng.integers(-30, 31, size=(2, 2, 2)).astype(np.int16))
    xw = Tensor(rng.standard_normal((2, 32, 32)), requires_grad=True)
    check("forward_warp", lambda a: ad.mul(forward_warp(a, mv), forward_warp(a, mv)).sum(), [xw])

    def rev(a):
        out, _ = reverse_warp(a, mv)
        return ad.mul(out, out).sum()

    check("reverse_warp", rev, [xw])

    # quantization-conditioned block
    blk = init_gq_block(np.random.default_rng(seed + 1), 4, dtype=np.float64)
    plane = Tensor(qp_plane(QPMap(16, np.full((1, 1), 30, np.uint8)), 8, 8, np.float64))
    xb = Tensor(rng.standard_normal((1, 4, 8, 8)), requires_grad=True)
    blk_inputs = [xb] + [t for _, t in blk.named("blk")]

    def gq_fn(*tensors):
        out = gq_forward(tensors[0], plane, blk)
        return ad.mul(out, out).sum()

    check("gq_block", gq_fn, blk_inputs, elems=10)

    # losses
    o40 = Tensor(np.random.default_rng(seed + 2).random((1, 3, 40, 40)), requires_grad=True)
    t40 = Tensor(np.random.default_rng(seed + 3).random((1, 3, 40, 40)))
    check("l1_loss", lambda a: l1_loss(a, t40), [o40])
    check("dog_loss", lambda a: dog_loss(a, t40), [o40])
    check(
        "composite_regression",
        lambda a: composite_loss(a, t40, LossWeights.regression())[0],
        [o40],
    )

    critic = init_critic(
        CriticConfig(gop_size=1, n_layers=4, base_channels=8, pad_multiple=16),
        seed=seed,
        dtype=np.float64,
    )
    comp16 = Tensor(np.random.default_rng(seed + 4).random((1, 3, 16, 16)))
    oc = Tensor(np.random.default_rng(seed + 5).random((1, 3, 16, 16)), requires_grad=True)
    check("critic_score", lambda a: critic_forward(comp16, a, critic), [oc])

    s_real = Tensor(np.asarray(0.7), requires_grad=True)
    s_fake = Tensor(np.asarray(-0.2), requires_grad=True)
    check("wasserstein_critic_loss", lambda r, f: wgan_losses([r], [f])[0], [s_real, s_fake])
    check("wasserstein_generator_loss", lambda r, f: wgan_losses([r], [f])[1], [s_real, s_fake])

    net = toy_feature_net(seed=seed, dtype=np.float64)
    ot = Tensor(np.random.default_rng(seed + 6).random((1, 3, 12, 12)), requires_grad=True)
    tt = Tensor(np.random.default_rng(seed + 7).random((1, 3, 12, 12)))
    check("texture_loss", lambda a: texture_loss(a, tt, net), [ot])

    gan_critic = init_critic(
        CriticConfig(gop_size=3, n_layers=4, base_channels=8, pad_multiple=16),
        seed=seed,
        dtype=np.float64,
    )
    og = Tensor(np.random.default_rng(seed + 8).random((3, 3, 40, 40)), requires_grad=True)
    tg = Tensor(np.random.default_rng(seed + 9).random((3, 3, 40, 40)))
    cg = Tensor(np.random.default_rng(seed + 10).random((3, 3, 40, 40)))

    def gan_total(a):
        total, _ = composite_loss(
            a, tg, LossWeights.gan(), mode="gan", critic=gan_critic,
            compressed=cg, feature_net=net,
        )
        return total

    check("composite_gan", gan_total, [og], elems=12)

    # tiny full pipeline: every parameter and the input frames
    # frames sit well inside [0,1] so the output clamp has no kinks within
    # the probe interval, and the readout is smooth (squared error): with a
    # kinked readout, one weight perturbation moves every output pixel and
    # the pixels at their own kink dominate the finite-difference error
    cfg = ModelConfig(channels_i=8, channels_p=4, blocks_per_stack=2, gop_size=3, seed=seed)
    params = init_model(cfg, dtype=np.float64)
    gen = np.random.default_rng(seed + 11)
    frames = [Tensor(0.25 + 0.5 * gen.random((3, 16, 16)), requires_grad=True) for _ in range(3)]
    target = Tensor(0.25 + 0.5 * gen.random((3, 3, 16, 16)))
    qp = QPMap(16, np.full((1, 1), 35, np.uint8))
    metas = [FrameMeta(FRAME_I, qp)]
    for _ in range(2):
        grid = gen.integers(-20, 21, (1, 1, 2)).astype(np.int16)
        metas.append(FrameMeta(FRAME_P, qp, MVField(16, grid)))
    meta = GopMetadata(16, 16, metas)
    named = params.named_params()
    pipeline_inputs = frames + list(named.values())

    def pipeline_fn(*tensors):
        restored = restore_gop(frames, meta, params)
        out = ad.concat([ad.reshape(f, (1, 3, 16, 16)) for f in restored.frames], dim=0)
        diff = ad.sub(out, target)
        return ad.reduce_mean(ad.mul(diff, diff))

    check("full_pipeline", pipeline_fn, pipeline_inputs, tol=TOL_PIPELINE, elems=3)

    return results
