"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with `pytest -s tests/test_acceptance.py` to see the per-criterion
report. Full-scale benchmark numbers are out of reach at desk scale; these
are the property-based and small quantitative checks that stand in for
them.
"""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from bitmend import autodiff as ad
from bitmend.autodiff import Tensor
from bitmend.gradsuite import run_gradient_suite
from bitmend.h264 import NAL_SPS, parse_sps, scan_gop_structure, scan_pictures, split_annexb
from bitmend.losses import dog_loss
from bitmend.metrics import bpp, psnr, ssim
from bitmend.model import (
    ModelConfig,
    StreamStats,
    init_model,
    restore_gop,
    streaming_restore,
)
from bitmend.sidecar import FRAME_I, FRAME_P, FrameMeta, GopMetadata, MVField, QPMap
from bitmend.toycodec import ToyCodecConfig, encode_clip
from bitmend.training import TrainConfig, dataset_from_toycodec, synthesize_clip, train_regression
from bitmend.warp import forward_warp, reverse_warp, _mv_index_maps

from conftest import make_natural_clip, make_translating_clip
from h264_synth import BitWriter, reassemble
from bitmend.h264 import BitReader
from oracles import dog_oracle, ssim_oracle

DATA = Path(__file__).parent / "data"
DESK_MODEL = ModelConfig(channels_i=8, channels_p=4, blocks_per_stack=2, gop_size=7, seed=0)


def report(criterion, ok, detail=""):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
    assert ok, f"{criterion}: {detail}"


# ----------------------------------------------------------------------


def test_gradient_suite():
    start = time.perf_counter()
    results = run_gradient_suite(max_elems=30)
    elapsed = time.perf_counter() - start
    failures = [(n, e, t) for n, e, t in results if e >= t]
    names = {n for n, _, _ in results}
    assert {"conv2d", "gq_block", "l1_loss", "dog_loss", "composite_regression",
            "composite_gan", "critic_score", "wasserstein_critic_loss",
            "wasserstein_generator_loss", "texture_loss", "full_pipeline"} <= names
    report(
        "gradient suite",
        not failures and elapsed < 300.0,
        f"{len(results)} checks, worst rel err "
        f"{max(e for _, e, _ in results):.2e}, {elapsed:.0f}s (< 300s)"
        + (f"; failures: {failures}" if failures else ""),
    )


def test_dog_loss_oracle():
    rng = np.random.default_rng(100)
    worst = 0.0
    for _ in range(50):
        o = rng.random((3, 64, 64))
        t = rng.random((3, 64, 64))
        got = dog_loss(Tensor(o), Tensor(t)).item()
        worst = max(worst, abs(got - dog_oracle(o, t)))
    t0 = Tensor(rng.random((3, 64, 64)))
    exact_zero = dog_loss(t0, t0).item() == 0.0
    report(
        "DoG-loss oracle",
        worst < 1e-5 and exact_zero,
        f"50 random 64x64 pairs, max |impl - oracle| = {worst:.2e}; dog(T,T)==0 {exact_zero}",
    )


def test_warp_oracles():
    rng = np.random.default_rng(101)
    # zero-MV identity, exact
    x = Tensor(rng.standard_normal((3, 48, 48)).astype(np.float32))
    zero = MVField(16, np.zeros((3, 3, 2), np.int16))
    fwd_ok = np.array_equal(forward_warp(x, zero).data, x.data)
    rev, cov = reverse_warp(x, zero)
    rev_ok = np.array_equal(rev.data, x.data) and np.all(cov.data == 1.0)

    # forward(reverse(x)) == x wherever reverse coverage is exactly one write
    comp_ok = True
    for _ in range(5):
        grid = rng.integers(-40, 41, size=(3, 3, 2)).astype(np.int16)
        mv = MVField(16, grid)
        y = Tensor(rng.standard_normal((2, 48, 48)))
        r, _ = reverse_warp(y, mv)
        back = forward_warp(r, mv)
        rows, cols = _mv_index_maps(mv, 48, 48)
        counts = np.zeros(48 * 48)
        np.add.at(counts, (rows * 48 + cols).ravel(), 1)
        once = (counts == 1)[(rows * 48 + cols).ravel()].reshape(48, 48)
        comp_ok &= np.allclose(back.data[:, once], y.data[:, once], atol=1e-12)

    # toy codec faithfulness, bit-exact on every plane of every P frame
    clip = make_translating_clip(np.random.default_rng(102), 64, 64, 7, step=(3, -2))
    gop = encode_clip(clip, ToyCodecConfig(qp_schedule=35))[0]
    faithful = True
    for k in range(1, 7):
        mv = gop.metadata.frames[k].mv
        pel = np.sign(mv.grid / 4.0) * np.floor(np.abs(mv.grid / 4.0) + 0.5)
        mv_c = MVField(8, (np.sign(pel / 2) * np.floor(np.abs(pel / 2) + 0.5) * 4).astype(np.int16))
        for plane, field in ((0, mv), (1, mv_c), (2, mv_c)):
            pred = forward_warp(Tensor(gop.recon[k - 1][plane][None]), field).data[0]
            rec = np.clip(pred + gop.residuals[k][plane], 0.0, 255.0).astype(np.float32)
            faithful &= np.array_equal(rec, gop.recon[k][plane])
    report(
        "warp oracles",
        fwd_ok and rev_ok and comp_ok and faithful,
        f"zero-MV identity {fwd_ok and rev_ok}, composition {comp_ok}, "
        f"toycodec faithfulness bit-exact {faithful}",
    )


def test_parser_suite():
    # exp-Golomb round trip through an independently written encoder
    w = BitWriter()
    for n in range(1001):
        w.ue(n)
    w.rbsp_trailing()
    r = BitReader(w.to_bytes())
    golomb_ok = all(r.read_ue() == n for n in range(1001))

    # emulation-prevention and start-code round trip, byte-exact, on real
    # libx264 output
    rt_ok = True
    for name in ("cif_gop7_crf35", "small_gop7_crf30", "hd_gop7_crf45", "small_streaming_crf35"):
        stream = (DATA / f"{name}.264").read_bytes()
        rt_ok &= reassemble(split_annexb(stream)) == stream

    # three verbatim-template encodes: period-7 pattern and QP ranges
    period_ok = True
    qp_ok = True
    for name in ("cif_gop7_crf35", "small_gop7_crf30", "hd_gop7_crf45"):
        stream = (DATA / f"{name}.264").read_bytes()
        info = json.loads((DATA / f"{name}.json").read_text())
        pics = scan_pictures(stream)
        period_ok &= "".join(p.frame_type for p in pics) == info["pict_types"]
        gops = scan_gop_structure(stream)
        period_ok &= all(len(g) == 7 for g in gops[:-1]) and gops[0][0].frame_type == "I"
        qp_ok &= all(0 <= p.slice_qp <= 51 for p in pics)

    dims_ok = True
    for name, dims in {"cif_gop7_crf35": (352, 288), "hd_gop7_crf45": (1920, 1080)}.items():
        stream = (DATA / f"{name}.264").read_bytes()
        sps = next(parse_sps(u) for u in split_annexb(stream) if u.nal_unit_type == NAL_SPS)
        dims_ok &= (sps.width, sps.height) == dims

    report(
        "parser suite",
        golomb_ok and rt_ok and period_ok and qp_ok and dims_ok,
        f"exp-Golomb 0..1000 {golomb_ok}, byte-exact round trip {rt_ok}, "
        f"period-7 {period_ok}, QPs in range {qp_ok}, CIF+1080p dims {dims_ok}",
    )


def _random_gop(rng, params, w=32, h=32, qp=35, static=False, zero_mv=False):
    gw, gh = -(-w // 16), -(-h // 16)
    frames, metas = [], []
    base = rng.random((3, h, w)).astype(np.float32)
    for i in range(params.config.gop_size):
        frames.append(base.copy() if static else rng.random((3, h, w)).astype(np.float32))
        qp_map = QPMap(16, np.full((gh, gw), qp, np.uint8))
        if i == 0:
            metas.append(FrameMeta(FRAME_I, qp_map))
        else:
            grid = (
                np.zeros((gh, gw, 2), np.int16)
                if (static or zero_mv)
                else rng.integers(-32, 33, (gh, gw, 2)).astype(np.int16)
            )
            metas.append(FrameMeta(FRAME_P, qp_map, MVField(16, grid)))
    return frames, GopMetadata(w, h, metas)


def test_pipeline_shape_identity_suite():
    rng = np.random.default_rng(103)
    paper_cfg = ModelConfig(channels_i=64, channels_p=16, blocks_per_stack=1, gop_size=7, seed=1)
    widths_ok = ModelConfig().fuse_in_channels == 160
    params = init_model(paper_cfg)
    frames, meta = _random_gop(rng, params)
    probe = {}
    restore_gop(frames, meta, params, probe=probe)
    widths_ok &= probe["fuse_in_channels"] == 160 and probe["fused_channels"] == 64
    chan6_ok = probe["pgen_in_channels"] == 6

    desk = init_model(DESK_MODEL)
    for stack in (desk.i_gen, desk.p_gen):
        stack.out_w.data[:] = 0
        stack.out_b.data[:] = 0
    frames, meta = _random_gop(rng, desk)
    out = restore_gop(frames, meta, desk)
    identity_ok = all(
        np.array_equal(o.data, np.clip(f, 0.0, 1.0)) for o, f in zip(out.frames, frames)
    )

    desk2 = init_model(DESK_MODEL)
    fc_ok = True
    for w, h in ((64, 64), (96, 96)):
        fr, me = _random_gop(rng, desk2, w, h)
        fc_ok &= restore_gop(fr, me, desk2).frames[0].shape == (3, h, w)

    def items(n):
        gw = gh = 2
        qp_map = QPMap(16, np.full((gh, gw), 35, np.uint8))
        for i in range(n):
            frame = rng.random((3, 32, 32)).astype(np.float32)
            if i == 0:
                yield frame, FrameMeta(FRAME_I, qp_map)
            else:
                grid = rng.integers(-16, 17, (gh, gw, 2)).astype(np.int16)
                yield frame, FrameMeta(FRAME_P, qp_map, MVField(16, grid))

    stats13 = StreamStats()
    n13 = len(list(streaming_restore(items(13), desk2, stats13)))
    stats19 = StreamStats()
    n19 = len(list(streaming_restore(items(19), desk2, stats19)))
    stream_ok = (
        n13 == 13
        and stats13.substitutions == [6]
        and n19 == 19
        and stats19.substitutions == [6, 12]
        and stats13.peak_resident <= 8
    )
    report(
        "pipeline shape/identity suite",
        widths_ok and chan6_ok and identity_ok and fc_ok and stream_ok,
        f"fusion 160->64 {widths_ok}, 6-ch P-generation {chan6_ok}, "
        f"zero-residual identity {identity_ok}, fully-convolutional {fc_ok}, "
        f"streaming substitutions 13->{stats13.substitutions} 19->{stats19.substitutions}",
    )


def test_desk_training_overfit(tmp_path):
    def run(out):
        cfg = TrainConfig(
            crop=64, epochs=500, lr=1e-4, seed=17, batch_size=1,
            data="toycodec:qp=35:gops=1:size=64", out_dir=str(out),
        )
        return train_regression(cfg, ModelConfig(**{**DESK_MODEL.__dict__}))

    start = time.perf_counter()
    params_a, hist_a, _ = run(tmp_path / "a")
    elapsed = time.perf_counter() - start
    totals = [float(r.split(",")[-2]) for r in hist_a[1:]]
    halved = totals[-1] <= 0.5 * totals[0]

    clip = synthesize_clip(17, 64, 64, 7)
    sample = dataset_from_toycodec(clip, ToyCodecConfig(qp_schedule=35))[0]
    frames = [Tensor(sample.degraded[i]) for i in range(7)]
    with ad.no_grad():
        restored = restore_gop(frames, sample.meta, params_a)
    ref = sample.target
    psnr_deg = np.mean([psnr(sample.degraded[i], ref[i]) for i in range(7)])
    psnr_res = np.mean([psnr(restored.frames[i].data, ref[i]) for i in range(7)])
    delta = psnr_res - psnr_deg

    params_b, hist_b, _ = run(tmp_path / "b")
    deterministic = hist_a == hist_b and all(
        np.array_equal(t.data, params_b.named_params()[k].data)
        for k, t in params_a.named_params().items()
    )
    report(
        "desk training",
        halved and delta > 0 and deterministic and elapsed < 600.0,
        f"L_R {totals[0]:.4f} -> {totals[-1]:.4f} "
        f"(x{totals[-1] / totals[0]:.2f}, halved {halved}), "
        f"dPSNR {delta:+.2f} dB, deterministic {deterministic}, {elapsed:.0f}s (< 600s)",
    )


def test_qp_conditioning():
    rng = np.random.default_rng(104)
    params = init_model(DESK_MODEL)
    frames, _ = _random_gop(rng, params)
    _, meta20 = _random_gop(np.random.default_rng(7), params, qp=20, zero_mv=True)
    _, meta45 = _random_gop(np.random.default_rng(7), params, qp=45, zero_mv=True)
    with ad.no_grad():
        out20 = restore_gop(frames, meta20, params).as_array()
        out45 = restore_gop(frames, meta45, params).as_array()
    diff = float(np.abs(out20 - out45).max())
    report(
        "QP conditioning",
        diff > 1e-6,
        f"all-20 vs all-45 QP map changes output, max abs diff {diff:.3e} > 1e-6",
    )


def test_toycodec_monotonicity():
    clip = make_natural_clip(np.random.default_rng(105), 64, 64, 7)
    ref = np.stack([f[0].astype(np.float64) for f in clip.frames]) / 255.0
    psnrs, bits = [], []
    for qp in (4, 20, 35, 50):
        gop = encode_clip(clip, ToyCodecConfig(qp_schedule=qp))[0]
        rec = np.stack([f[0] for f in gop.recon]) / 255.0
        psnrs.append(psnr(rec, ref))
        bits.append(gop.bit_estimate)
    mono_psnr = all(a >= b for a, b in zip(psnrs, psnrs[1:]))
    mono_bits = all(a >= b for a, b in zip(bits, bits[1:]))
    report(
        "toycodec monotonicity",
        mono_psnr and mono_bits,
        f"QP 4/20/35/50: PSNR {[f'{p:.1f}' for p in psnrs]} non-increasing {mono_psnr}; "
        f"bits {[f'{b:.0f}' for b in bits]} non-increasing {mono_bits}",
    )


def test_metrics_criteria():
    x = np.zeros((64, 64))
    closed_form = psnr(x, x + 1.0 / 255.0)
    psnr_ok = abs(closed_form - 20.0 * math.log10(255.0)) < 0.01

    rng = np.random.default_rng(106)
    a = rng.random((20, 20))
    b = rng.random((20, 20))
    ssim_err = abs(ssim(a, b) - ssim_oracle(a, b))
    ssim_ok = ssim_err < 1e-6

    bpp_ok = bpp(1000, 100, 100, 1) == 0.8
    report(
        "metrics",
        psnr_ok and ssim_ok and bpp_ok,
        f"uniform-1/255 PSNR {closed_form:.4f} dB (target 48.1308), "
        f"SSIM |impl - oracle| {ssim_err:.2e}, bpp(1000B,100x100,1)={bpp(1000, 100, 100, 1)}",
    )
