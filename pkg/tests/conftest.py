import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bitmend.video import VideoClip


def smooth_texture(rng, h, w, low=30, high=220):
    """Band-limited random texture: low-res noise, bilinearly upsampled, plus detail."""
    coarse = rng.random((h // 8 + 2, w // 8 + 2))
    ys = np.linspace(0, coarse.shape[0] - 1.001, h)
    xs = np.linspace(0, coarse.shape[1] - 1.001, w)
    y0 = ys.astype(int)
    x0 = xs.astype(int)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    up = (
        coarse[y0][:, x0] * (1 - fy) * (1 - fx)
        + coarse[y0 + 1][:, x0] * fy * (1 - fx)
        + coarse[y0][:, x0 + 1] * (1 - fy) * fx
        + coarse[y0 + 1][:, x0 + 1] * fy * fx
    )
    detail = rng.random((h, w)) * 0.12
    tex = up * 0.88 + detail
    return (low + tex * (high - low)).astype(np.uint8)


def make_translating_clip(rng, width=64, height=64, n_frames=7, step=(3, -2), margin=24):
    """Frames are sliding crops of one canvas: exact global translation.

    frame_k(y, x) = canvas[y + k*sy + m, x + k*sx + m], so each frame's
    content sits at source position pos + (sx, sy) in the previous frame.
    """
    sx, sy = step
    cw = width + 2 * margin + abs(sx) * n_frames
    ch = height + 2 * margin + abs(sy) * n_frames
    canvas_y = smooth_texture(rng, ch, cw)
    canvas_u = smooth_texture(rng, ch // 2, cw // 2, 108, 148)
    canvas_v = smooth_texture(rng, ch // 2, cw // 2, 108, 148)
    clip = VideoClip(width, height, "yuv420")
    for k in range(n_frames):
        oy = margin + (k * sy if sy > 0 else (n_frames - k) * -sy)
        ox = margin + (k * sx if sx > 0 else (n_frames - k) * -sx)
        y = canvas_y[oy : oy + height, ox : ox + width]
        u = canvas_u[oy // 2 : oy // 2 + height // 2, ox // 2 : ox // 2 + width // 2]
        v = canvas_v[oy // 2 : oy // 2 + height // 2, ox // 2 : ox // 2 + width // 2]
        clip.frames.append((y.copy(), u.copy(), v.copy()))
    return clip


def make_static_clip(rng, width=64, height=64, n_frames=7):
    y = smooth_texture(rng, height, width)
    u = smooth_texture(rng, height // 2, width // 2, 108, 148)
    v = smooth_texture(rng, height // 2, width // 2, 108, 148)
    clip = VideoClip(width, height, "yuv420")
    for _ in range(n_frames):
        clip.frames.append((y.copy(), u.copy(), v.copy()))
    return clip


def make_natural_clip(rng, width=64, height=64, n_frames=7, step=(2, 1), noise=3):
    """Translating texture plus small per-frame brightness jitter."""
    clip = make_translating_clip(rng, width, height, n_frames, step)
    out = VideoClip(width, height, "yuv420")
    for y, u, v in clip.frames:
        jitter = rng.integers(-noise, noise + 1, size=y.shape).astype(np.int16)
        y2 = np.clip(y.astype(np.int16) + jitter, 0, 255).astype(np.uint8)
        out.frames.append((y2, u, v))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(0xB17)
