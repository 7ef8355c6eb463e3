import math

import numpy as np
import pytest

from oracles import ssim_oracle
from bitmend.metrics import bpp, evaluate_clips, psnr, ssim
from bitmend.video import (
    VideoClip,
    VideoFormatError,
    read_yuv420,
    rgb_frame_to_yuv,
    rgb_to_yuv,
    write_yuv420,
    yuv_frame_to_rgb,
    yuv_to_rgb,
)


def smooth_random(rng, h, w):
    x = rng.random((h, w))
    for _ in range(4):
        x = (x + np.roll(x, 1, 0) + np.roll(x, -1, 0) + np.roll(x, 1, 1) + np.roll(x, -1, 1)) / 5
    return x


def make_yuv_clip(rng, w=32, h=32, n=3):
    clip = VideoClip(w, h, "yuv420")
    for _ in range(n):
        y = rng.integers(16, 236, (h, w)).astype(np.uint8)
        u = rng.integers(16, 241, (h // 2, w // 2)).astype(np.uint8)
        v = rng.integers(16, 241, (h // 2, w // 2)).astype(np.uint8)
        clip.frames.append((y, u, v))
    return clip


# ---------------------------------------------------------------- YUV I/O


def test_yuv_roundtrip_bytes(tmp_path):
    rng = np.random.default_rng(0)
    clip = make_yuv_clip(rng)
    path = tmp_path / "c.yuv"
    n = write_yuv420(path, clip)
    assert n == 3 * 32 * 32 * 3 // 2
    back = read_yuv420(path, 32, 32)
    assert back.n_frames == 3
    for (y0, u0, v0), (y1, u1, v1) in zip(clip.frames, back.frames):
        np.testing.assert_array_equal(y0, y1)
        np.testing.assert_array_equal(u0, u1)
        np.testing.assert_array_equal(v0, v1)


def test_2x2_frame_is_6_bytes(tmp_path):
    clip = VideoClip(2, 2, "yuv420")
    clip.frames.append(
        (np.zeros((2, 2), np.uint8), np.zeros((1, 1), np.uint8), np.zeros((1, 1), np.uint8))
    )
    path = tmp_path / "t.yuv"
    assert write_yuv420(path, clip) == 6


def test_odd_width_rejected():
    with pytest.raises(VideoFormatError):
        VideoClip(33, 32, "yuv420")


def test_size_mismatch_reports_counts(tmp_path):
    path = tmp_path / "bad.yuv"
    path.write_bytes(b"\x00" * 100)
    with pytest.raises(VideoFormatError) as err:
        read_yuv420(path, 8, 8)
    assert "100" in str(err.value)


# ---------------------------------------------------------------- color


def test_limited_range_white_and_black():
    y = np.full((2, 2), 235, np.uint8)
    u = np.full((1, 1), 128, np.uint8)
    v = np.full((1, 1), 128, np.uint8)
    rgb = yuv_frame_to_rgb(y, u, v)
    np.testing.assert_allclose(rgb, 1.0, atol=1e-6)
    rgb0 = yuv_frame_to_rgb(np.full((2, 2), 16, np.uint8), u, v)
    np.testing.assert_allclose(rgb0, 0.0, atol=1e-6)


def test_rgb_yuv_roundtrip_gray_within_1_255():
    ramp = np.linspace(0.02, 0.98, 64 * 64, dtype=np.float32).reshape(64, 64)
    rgb = np.stack([ramp, ramp, ramp])
    y, u, v = rgb_frame_to_yuv(rgb)
    back = yuv_frame_to_rgb(y, u, v)
    assert np.max(np.abs(back - rgb)) <= 1.0 / 255.0 + 1e-7


def test_rgb_yuv_roundtrip_within_4_255_when_chroma_representable():
    # 2x2-constant blocks make half-res chroma exactly representable; the
    # bound then measures matrix + requantization error, not subsampling loss
    rng = np.random.default_rng(1)
    low = rng.random((3, 32, 32)).astype(np.float32)
    rgb = low.repeat(2, axis=1).repeat(2, axis=2)
    y, u, v = rgb_frame_to_yuv(rgb)
    back = yuv_frame_to_rgb(y, u, v)
    assert np.max(np.abs(back - rgb)) <= 4.0 / 255.0


def test_clip_conversions_preserve_shape():
    rng = np.random.default_rng(2)
    clip = make_yuv_clip(rng)
    rgb = yuv_to_rgb(clip)
    assert rgb.pix_fmt == "rgb" and rgb.frames[0].shape == (3, 32, 32)
    back = rgb_to_yuv(rgb)
    assert back.pix_fmt == "yuv420" and back.frames[0][0].shape == (32, 32)


# ---------------------------------------------------------------- PSNR


def test_psnr_identical_capped():
    x = np.random.default_rng(3).random((16, 16))
    assert psnr(x, x) == 100.0


def test_psnr_uniform_one_255th():
    x = np.zeros((32, 32))
    y = x + 1.0 / 255.0
    expect = 20.0 * math.log10(255.0)
    assert abs(psnr(x, y) - expect) < 0.01
    assert abs(expect - 48.13) < 0.005


def test_psnr_symmetric():
    rng = np.random.default_rng(4)
    a, b = rng.random((8, 8)), rng.random((8, 8))
    assert psnr(a, b) == psnr(b, a)


# ---------------------------------------------------------------- SSIM


def test_ssim_identical_is_one():
    x = np.random.default_rng(5).random((24, 24))
    assert abs(ssim(x, x) - 1.0) < 1e-12


def test_ssim_matches_direct_formula_oracle():
    rng = np.random.default_rng(6)
    a = rng.random((20, 22))
    b = rng.random((20, 22))
    assert abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-6


def test_ssim_binary_inverse_matches_oracle():
    rng = np.random.default_rng(7)
    a = (rng.random((18, 18)) > 0.5).astype(np.float64)
    b = 1.0 - a
    assert abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-6


# ---------------------------------------------------------------- bpp


def test_bpp_arithmetic():
    assert bpp(1000, 100, 100, 1) == 0.8


def test_bpp_teaser_value():
    w, h, n = 1920, 1080, 100
    nbytes = round(0.039 * w * h * n / 8.0)
    assert abs(bpp(nbytes, w, h, n) - 0.039) < 1e-6


def test_bpp_zero_dims_rejected():
    with pytest.raises(ValueError):
        bpp(100, 0, 100, 1)


# ---------------------------------------------------------------- reports


def test_identity_restoration_deltas():
    rng = np.random.default_rng(8)
    ref = make_yuv_clip(rng, 32, 32, 2)
    deg = VideoClip(32, 32, "yuv420")
    for y, u, v in ref.frames:
        noisy = np.clip(y.astype(int) + rng.integers(-6, 7, y.shape), 16, 235).astype(np.uint8)
        deg.frames.append((noisy, u.copy(), v.copy()))
    report = evaluate_clips(deg, ref, ref)
    assert report.psnr_restored == [100.0, 100.0]
    assert abs(report.delta_psnr - (100.0 - report.mean_psnr_degraded)) < 1e-9
    assert abs(report.delta_ssim - (1.0 - report.mean_ssim_degraded)) < 1e-12
    csv = report.to_csv()
    assert csv.splitlines()[0] == "frame_index,psnr_degraded,psnr_restored,ssim_degraded,ssim_restored"
    assert len(csv.splitlines()) == 3
