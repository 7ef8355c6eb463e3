"""Raw video I/O and color conversion.

Clips are either planar YUV 4:2:0 8-bit (I420 file layout) or planar RGB
floats in [0, 1]. Conversion uses the BT.601 limited-range matrix with
nearest-neighbor chroma resampling.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class VideoFormatError(ValueError):
    pass


@dataclass
class VideoClip:
    width: int
    height: int
    pix_fmt: str  # "yuv420" or "rgb"
    # yuv420: list of (y [H,W], u [H/2,W/2], v [H/2,W/2]) uint8 planes
    # rgb: list of [3,H,W] float32 arrays in [0,1]
    frames: list = field(default_factory=list)
    fps: float = 10.0

    def __post_init__(self):
        if self.pix_fmt == "yuv420" and (self.width % 2 or self.height % 2):
            raise VideoFormatError(
                f"YUV 4:2:0 requires even dimensions, got {self.width}x{self.height}"
            )

    @property
    def n_frames(self):
        return len(self.frames)


def read_yuv420(path, width: int, height: int, fps: float = 10.0) -> VideoClip:
    if width % 2 or height % 2:
        raise VideoFormatError(f"YUV 4:2:0 requires even dimensions, got {width}x{height}")
    data = Path(path).read_bytes()
    frame_bytes = width * height * 3 // 2
    if frame_bytes == 0 or len(data) % frame_bytes:
        raise VideoFormatError(
            f"{path}: {len(data)} bytes is not a whole number of {width}x{height} frames "
            f"(frame size {frame_bytes}, remainder {len(data) % frame_bytes if frame_bytes else 'n/a'})"
        )
    clip = VideoClip(width, height, "yuv420", fps=fps)
    cw, ch = width // 2, height // 2
    off = 0
    arr = np.frombuffer(data, dtype=np.uint8)
    for _ in range(len(data) // frame_bytes):
        y = arr[off : off + width * height].reshape(height, width)
        off += width * height
        u = arr[off : off + cw * ch].reshape(ch, cw)
        off += cw * ch
        v = arr[off : off + cw * ch].reshape(ch, cw)
        off += cw * ch
        clip.frames.append((y.copy(), u.copy(), v.copy()))
    return clip


def write_yuv420(path, clip: VideoClip) -> int:
    if clip.pix_fmt != "yuv420":
        raise VideoFormatError("write_yuv420 expects a yuv420 clip")
    blob = bytearray()
    for y, u, v in clip.frames:
        blob += np.ascontiguousarray(y, dtype=np.uint8).tobytes()
        blob += np.ascontiguousarray(u, dtype=np.uint8).tobytes()
        blob += np.ascontiguousarray(v, dtype=np.uint8).tobytes()
    Path(path).write_bytes(blob)
    return len(blob)


# BT.601 limited range: Y' in [16,235] -> [0,1], chroma in [16,240] about 128
_KR, _KB = 0.299, 0.114
_KG = 1.0 - _KR - _KB


def yuv_frame_to_rgb(y: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """One 4:2:0 frame to [3,H,W] float32 RGB in [0,1]."""
    yf = (y.astype(np.float32) - 16.0) / 219.0
    uf = (u.astype(np.float32) - 128.0) / 224.0
    vf = (v.astype(np.float32) - 128.0) / 224.0
    # nearest-neighbor chroma upsample
    uf = uf.repeat(2, axis=0).repeat(2, axis=1)[: y.shape[0], : y.shape[1]]
    vf = vf.repeat(2, axis=0).repeat(2, axis=1)[: y.shape[0], : y.shape[1]]
    r = yf + (2.0 - 2.0 * _KR) * vf
    b = yf + (2.0 - 2.0 * _KB) * uf
    g = (yf - _KR * r - _KB * b) / _KG
    rgb = np.stack([r, g, b])
    return np.clip(rgb, 0.0, 1.0).astype(np.float32)


def rgb_frame_to_yuv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """[3,H,W] float RGB in [0,1] to 4:2:0 uint8 planes."""
    r, g, b = rgb[0].astype(np.float64), rgb[1].astype(np.float64), rgb[2].astype(np.float64)
    yf = _KR * r + _KG * g + _KB * b
    uf = (b - yf) / (2.0 - 2.0 * _KB)
    vf = (r - yf) / (2.0 - 2.0 * _KR)
    y = np.clip(np.rint(16.0 + 219.0 * yf), 16, 235).astype(np.uint8)
    # nearest-neighbor chroma downsample: keep the even-coordinate sample
    u = np.clip(np.rint(128.0 + 224.0 * uf[0::2, 0::2]), 16, 240).astype(np.uint8)
    v = np.clip(np.rint(128.0 + 224.0 * vf[0::2, 0::2]), 16, 240).astype(np.uint8)
    return y, u, v


def yuv_to_rgb(clip: VideoClip) -> VideoClip:
    if clip.pix_fmt != "yuv420":
        raise VideoFormatError("yuv_to_rgb expects a yuv420 clip")
    out = VideoClip(clip.width, clip.height, "rgb", fps=clip.fps)
    out.frames = [yuv_frame_to_rgb(*f) for f in clip.frames]
    return out


def rgb_to_yuv(clip: VideoClip) -> VideoClip:
    if clip.pix_fmt != "rgb":
        raise VideoFormatError("rgb_to_yuv expects an rgb clip")
    out = VideoClip(clip.width, clip.height, "yuv420", fps=clip.fps)
    out.frames = [rgb_frame_to_yuv(f) for f in clip.frames]
    return out
