"""Command-line surface tying the toolkit together."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .autodiff import ShapeError, Tensor, no_grad
from .checkpoint import CheckpointError, load_checkpoint
from .gradsuite import run_gradient_suite
from .h264 import BitstreamError, scan_gop_structure
from .metrics import bpp, evaluate_clips
from .model import (
    ModelConfig,
    StreamStats,
    init_model,
    load_into_model,
    restore_gop,
    streaming_restore,
)
from .sidecar import SidecarFormatError, SidecarValidationError, read_sidecar, write_sidecar
from .toycodec import ToyCodecConfig, ToyCodecError, encode_clip, recon_to_clip
from .training import TrainConfig, TrainingDiverged, train_gan, train_regression
from .video import VideoClip, VideoFormatError, read_yuv420, rgb_frame_to_yuv, write_yuv420, yuv_frame_to_rgb

USER_ERRORS = (
    BitstreamError,
    CheckpointError,
    SidecarFormatError,
    SidecarValidationError,
    ToyCodecError,
    TrainingDiverged,
    VideoFormatError,
    ShapeError,
    FileNotFoundError,
    ValueError,
)


def cmd_inspect(args) -> int:
    data = Path(args.stream).read_bytes()
    gops = scan_gop_structure(data)
    rows = []
    index = 0
    for g, gop in enumerate(gops):
        for pic in gop:
            rows.append(
                {"frame_index": index, "type": pic.frame_type, "slice_qp": pic.slice_qp, "gop_index": g}
            )
            index += 1
    print(f"{args.stream}: {index} pictures in {len(gops)} GOPs")
    print("frame  type  slice_qp  gop")
    for row in rows:
        print(f"{row['frame_index']:5d}  {row['type']:4s}  {row['slice_qp']:8d}  {row['gop_index']:3d}")
    if gops:
        sizes = [len(g) for g in gops]
        print(f"GOP sizes: {sizes}")
    if args.json:
        out = json.dumps(rows, indent=2)
        if args.json == "-":
            print(out)
        else:
            Path(args.json).write_text(out)
    return 0


def cmd_encode_toy(args) -> int:
    clip = read_yuv420(args.input, args.width, args.height)
    cfg = ToyCodecConfig(
        block_size=args.block_size,
        search_radius=args.radius,
        gop_size=args.gop,
        qp_schedule=args.qp,
    )
    gops = encode_clip(clip, cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_yuv420(out_dir / "degraded.yuv", recon_to_clip(gops))
    write_yuv420(out_dir / "reference.yuv", clip)
    write_sidecar([g.metadata for g in gops], out_dir / "sidecar.mbmd")
    (out_dir / "dims.cfg").write_text(f"width={args.width}\nheight={args.height}\n")
    total_bits = sum(g.bit_estimate for g in gops)
    rate = bpp(int(total_bits // 8), args.width, args.height, clip.n_frames)
    print(
        f"encoded {clip.n_frames} frames in {len(gops)} GOPs at QP {args.qp}: "
        f"~{total_bits:.0f} bits ({rate:.4f} bpp proxy)"
    )
    print(f"wrote {out_dir / 'degraded.yuv'} and {out_dir / 'sidecar.mbmd'}")
    return 0


def _load_model(ckpt_path: str, config_path: str | None) -> "ModelParams":
    if config_path is None:
        sibling = Path(ckpt_path).parent / "model.cfg"
        config_path = str(sibling) if sibling.exists() else None
    config = ModelConfig.from_file(config_path) if config_path else ModelConfig()
    params = init_model(config)
    load_into_model(params, load_checkpoint(ckpt_path))
    return params


def _clip_to_rgb_frames(clip: VideoClip) -> list[np.ndarray]:
    return [yuv_frame_to_rgb(*f) for f in clip.frames]


def _rgb_frames_to_clip(frames, width, height) -> VideoClip:
    clip = VideoClip(width, height, "yuv420")
    for f in frames:
        arr = f.data if isinstance(f, Tensor) else f
        clip.frames.append(rgb_frame_to_yuv(np.clip(arr, 0.0, 1.0)))
    return clip


def cmd_restore(args) -> int:
    params = _load_model(args.ckpt, args.config)
    clip = read_yuv420(args.input, args.width, args.height)
    gops = read_sidecar(args.sidecar)
    total = sum(g.gop_size for g in gops)
    if total != clip.n_frames:
        raise ValueError(f"sidecar covers {total} frames but clip has {clip.n_frames}")
    rgb = _clip_to_rgb_frames(clip)
    restored = []
    at = 0
    with no_grad():
        for meta in gops:
            frames = rgb[at : at + meta.gop_size]
            out = restore_gop(frames, meta, params)
            restored.extend(out.frames)
            at += meta.gop_size
    write_yuv420(args.out, _rgb_frames_to_clip(restored, args.width, args.height))
    print(f"restored {len(restored)} frames -> {args.out}")
    return 0


def cmd_stream_restore(args) -> int:
    params = _load_model(args.ckpt, args.config)
    clip = read_yuv420(args.input, args.width, args.height)
    gops = read_sidecar(args.sidecar)
    metas = [fr for g in gops for fr in g.frames]
    if len(metas) != clip.n_frames:
        raise ValueError(f"sidecar covers {len(metas)} frames but clip has {clip.n_frames}")
    rgb = _clip_to_rgb_frames(clip)
    stats = StreamStats()
    restored = list(streaming_restore(zip(rgb, metas), params, stats))
    write_yuv420(args.out, _rgb_frames_to_clip(restored, args.width, args.height))
    print(
        f"restored {len(restored)} frames in streaming mode -> {args.out} "
        f"({len(stats.substitutions)} cache substitutions at {stats.substitutions})"
    )
    return 0


def cmd_train(args) -> int:
    cfg = TrainConfig.from_file(args.config)
    model_cfg = ModelConfig.from_file(args.model_config) if args.model_config else None
    if cfg.loss == "gan":
        if not args.init:
            raise ValueError("GAN fine-tuning needs --init with regression weights")
        _, history, ckpt = train_gan(cfg, args.init, model_cfg)
    else:
        _, history, ckpt = train_regression(cfg, model_cfg)
    last = history[-1].split(",")
    print(f"finished {len(history) - 1} steps; final total loss {last[-2]} (lr {last[-1]})")
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_eval(args) -> int:
    degraded = read_yuv420(args.degraded, args.width, args.height)
    restored = read_yuv420(args.restored, args.width, args.height)
    reference = read_yuv420(args.reference, args.width, args.height)
    stream_bytes = Path(args.bitstream).stat().st_size if args.bitstream else None
    report = evaluate_clips(degraded, restored, reference, mode=args.mode, stream_bytes=stream_bytes)
    print(report.summary())
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
        print(f"per-frame metrics -> {args.csv}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_gradient_suite(max_elems=args.max_elems)
    failures = 0
    for name, err, tol in results:
        ok = err < tol
        failures += 0 if ok else 1
        print(f"{'pass' if ok else 'FAIL'}  {name:28s} max rel err {err:.3e}  (tol {tol:g})")
    print(f"{len(results) - failures}/{len(results)} gradient checks passed")
    return 0 if failures == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bitmend",
        description="Metadata-conditioned restoration of compressed video.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="report GOP structure and slice QPs of an H.264 stream")
    p.add_argument("stream")
    p.add_argument("--json", help="write per-frame records as JSON ('-' for stdout)")
    p.set_defaults(fn=cmd_inspect)

    p = sub.add_parser("encode-toy", help="degrade a raw YUV clip with the toy codec")
    p.add_argument("input")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--qp", type=int, default=35)
    p.add_argument("--gop", type=int, default=7)
    p.add_argument("--block-size", type=int, default=16)
    p.add_argument("--radius", type=int, default=8)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_encode_toy)

    p = sub.add_parser("restore", help="restore a degraded clip GOP by GOP")
    p.add_argument("input")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--sidecar", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config", help="model config file (default: model.cfg next to ckpt)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_restore)

    p = sub.add_parser("stream-restore", help="restore in streaming mode (cached pseudo-I)")
    p.add_argument("input")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--sidecar", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_stream_restore)

    p = sub.add_parser("train", help="run regression training or GAN fine-tuning")
    p.add_argument("--config", required=True)
    p.add_argument("--model-config")
    p.add_argument("--init", help="regression checkpoint (required for loss=gan)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="PSNR/SSIM report for degraded vs restored clips")
    p.add_argument("--degraded", required=True)
    p.add_argument("--restored", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--bitstream", help="elementary stream for bits-per-pixel")
    p.add_argument("--csv", help="write per-frame metrics CSV here")
    p.add_argument("--mode", choices=("luma", "rgb"), default="luma")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--max-elems", type=int, default=30)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except USER_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
