"""Quality metrics and evaluation reports: PSNR, SSIM, deltas, bits-per-pixel."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError
from .video import VideoClip, yuv_frame_to_rgb

PSNR_CAP_DB = 100.0


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = size // 2
    g = np.exp(-np.arange(-half, half + 1) ** 2 / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, kernel1d: np.ndarray) -> np.ndarray:
    k = len(kernel1d)
    h, w = img.shape
    rows = np.zeros((h, w - k + 1))
    for i in range(k):
        rows += kernel1d[i] * img[:, i : i + w - k + 1]
    out = np.zeros((h - k + 1, w - k + 1))
    for i in range(k):
        out += kernel1d[i] * rows[i : i + h - k + 1, :]
    return out


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Mean SSIM over valid 11x11 Gaussian (sigma 1.5) windows, K1/K2 = 0.01/0.03."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ShapeError("ssim expects single-channel [H,W] images")
    if min(a.shape) < 11:
        raise ShapeError("ssim needs at least 11x11 pixels")
    win = _gaussian_window()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a = _filter_valid(a, win)
    mu_b = _filter_valid(b, win)
    var_a = _filter_valid(a * a, win) - mu_a * mu_a
    var_b = _filter_valid(b * b, win) - mu_b * mu_b
    cov = _filter_valid(a * b, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def bpp(bitstream_bytes: int, width: int, height: int, frame_count: int) -> float:
    if width <= 0 or height <= 0 or frame_count <= 0:
        raise ValueError(f"bpp needs positive dims, got {width}x{height}x{frame_count}")
    return 8.0 * bitstream_bytes / (width * height * frame_count)


# ---------------------------------------------------------------- reports


@dataclass
class EvalReport:
    psnr_degraded: list[float] = field(default_factory=list)
    psnr_restored: list[float] = field(default_factory=list)
    ssim_degraded: list[float] = field(default_factory=list)
    ssim_restored: list[float] = field(default_factory=list)
    bpp: float | None = None

    @property
    def mean_psnr_degraded(self):
        return float(np.mean(self.psnr_degraded))

    @property
    def mean_psnr_restored(self):
        return float(np.mean(self.psnr_restored))

    @property
    def mean_ssim_degraded(self):
        return float(np.mean(self.ssim_degraded))

    @property
    def mean_ssim_restored(self):
        return float(np.mean(self.ssim_restored))

    @property
    def delta_psnr(self):
        return self.mean_psnr_restored - self.mean_psnr_degraded

    @property
    def delta_ssim(self):
        return self.mean_ssim_restored - self.mean_ssim_degraded

    def to_csv(self) -> str:
        lines = ["frame_index,psnr_degraded,psnr_restored,ssim_degraded,ssim_restored"]
        for i in range(len(self.psnr_degraded)):
            lines.append(
                f"{i},{self.psnr_degraded[i]:.6f},{self.psnr_restored[i]:.6f},"
                f"{self.ssim_degraded[i]:.6f},{self.ssim_restored[i]:.6f}"
            )
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        lines = [
            f"frames: {len(self.psnr_degraded)}",
            f"mean PSNR degraded/restored: {self.mean_psnr_degraded:.4f} / "
            f"{self.mean_psnr_restored:.4f} dB (delta {self.delta_psnr:+.4f})",
            f"mean SSIM degraded/restored: {self.mean_ssim_degraded:.6f} / "
            f"{self.mean_ssim_restored:.6f} (delta {self.delta_ssim:+.6f})",
        ]
        if self.bpp is not None:
            lines.append(f"rate: {self.bpp:.4f} bpp")
        return "\n".join(lines)


def frame_channel(clip: VideoClip, index: int, mode: str = "luma") -> np.ndarray:
    """Single evaluation channel for a frame, float64 in [0,1]."""
    if clip.pix_fmt == "yuv420":
        y, u, v = clip.frames[index]
        if mode == "luma":
            return y.astype(np.float64) / 255.0
        return yuv_frame_to_rgb(y, u, v).mean(axis=0).astype(np.float64)
    rgb = clip.frames[index]
    if mode == "luma":
        return 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
    return rgb.mean(axis=0).astype(np.float64)


def evaluate_clips(
    degraded: VideoClip,
    restored: VideoClip,
    reference: VideoClip,
    mode: str = "luma",
    stream_bytes: int | None = None,
) -> EvalReport:
    if not degraded.n_frames == restored.n_frames == reference.n_frames:
        raise ValueError(
            f"frame counts differ: degraded {degraded.n_frames}, "
            f"restored {restored.n_frames}, reference {reference.n_frames}"
        )
    report = EvalReport()
    for i in range(reference.n_frames):
        ref = frame_channel(reference, i, mode)
        deg = frame_channel(degraded, i, mode)
        res = frame_channel(restored, i, mode)
        report.psnr_degraded.append(psnr(deg, ref))
        report.psnr_restored.append(psnr(res, ref))
        report.ssim_degraded.append(ssim(deg, ref))
        report.ssim_restored.append(ssim(res, ref))
    if stream_bytes is not None:
        report.bpp = bpp(stream_bytes, reference.width, reference.height, reference.n_frames)
    return report
