import numpy as np
import pytest

from bitmend.autodiff import ShapeError, Tensor
from bitmend.model import (
    ModelConfig,
    RestoredGop,
    StreamStats,
    count_parameters,
    init_model,
    load_into_model,
    restore_gop,
    streaming_restore,
)
from bitmend.checkpoint import load_checkpoint, save_checkpoint
from bitmend.sidecar import (
    FRAME_I,
    FRAME_P,
    FrameMeta,
    GopMetadata,
    MVField,
    QPMap,
    SidecarValidationError,
)

DESK = ModelConfig(channels_i=8, channels_p=4, blocks_per_stack=2, gop_size=7, seed=3)


def make_inputs(rng, w=32, h=32, gop=7, bs=16, static=False, qp=35, mv_spread=8):
    gw, gh = -(-w // bs), -(-h // bs)
    frames = []
    metas = []
    base = rng.random((3, h, w)).astype(np.float32)
    for i in range(gop):
        if static:
            frames.append(base.copy())
        else:
            frames.append(rng.random((3, h, w)).astype(np.float32))
        qp_map = QPMap(bs, np.full((gh, gw), qp, dtype=np.uint8))
        if i == 0:
            metas.append(FrameMeta(FRAME_I, qp_map))
        else:
            if static or mv_spread == 0:
                grid = np.zeros((gh, gw, 2), dtype=np.int16)
            else:
                grid = rng.integers(-mv_spread * 4, mv_spread * 4 + 1, (gh, gw, 2)).astype(np.int16)
            metas.append(FrameMeta(FRAME_P, qp_map, MVField(bs, grid)))
    return frames, GopMetadata(w, h, metas)


def test_config_file_roundtrip(tmp_path):
    cfg = ModelConfig(32, 32, 5, 7, 42)
    path = tmp_path / "model.cfg"
    cfg.to_file(path)
    back = ModelConfig.from_file(path)
    assert back == cfg


def test_paper_config_fusion_width():
    cfg = ModelConfig()  # 64 / 16 / 10 blocks / gop 7
    assert cfg.fuse_in_channels == 64 + 6 * 16 == 160


def test_even_ablation_fusion_width():
    cfg = ModelConfig(channels_i=32, channels_p=32)
    assert cfg.fuse_in_channels == 32 + 6 * 32 == 224


def test_restore_gop_shapes_and_probe(rng):
    params = init_model(ModelConfig(64, 16, 1, 7, 0))
    frames, meta = make_inputs(rng, 32, 32)
    probe = {}
    out = restore_gop(frames, meta, params, probe=probe)
    assert probe["fuse_in_channels"] == 160
    assert probe["fused_channels"] == 64
    assert probe["pgen_in_channels"] == 6
    assert len(out.frames) == 7
    for f in out.frames:
        assert f.shape == (3, 32, 32)
        assert f.data.min() >= 0.0 and f.data.max() <= 1.0


def test_zero_generation_stacks_give_identity(rng):
    params = init_model(DESK)
    for stack in (params.i_gen, params.p_gen):
        stack.out_w.data[:] = 0
        stack.out_b.data[:] = 0
    frames, meta = make_inputs(rng)
    out = restore_gop(frames, meta, params)
    for got, orig in zip(out.frames, frames):
        np.testing.assert_array_equal(got.data, np.clip(orig, 0.0, 1.0))


def test_fully_convolutional_two_resolutions(rng):
    params = init_model(DESK)
    for w, h in ((64, 64), (96, 96)):
        frames, meta = make_inputs(rng, w, h)
        out = restore_gop(frames, meta, params)
        assert out.frames[0].shape == (3, h, w)


def test_output_range_clamped(rng):
    params = init_model(DESK)
    frames, meta = make_inputs(rng)
    # push inputs outside [0,1]; output must still be clamped
    frames = [f * 3.0 - 1.0 for f in frames]
    out = restore_gop(frames, meta, params)
    arr = out.as_array()
    assert arr.min() >= 0.0 and arr.max() <= 1.0


def test_static_scene_p_frames_identical(rng):
    params = init_model(DESK)
    frames, meta = make_inputs(rng, static=True)
    out = restore_gop(frames, meta, params)
    first_p = out.frames[1].data
    for k in range(2, 7):
        np.testing.assert_array_equal(out.frames[k].data, first_p)


def test_qp_conditioning_changes_output(rng):
    params = init_model(DESK)
    frames, _ = make_inputs(rng)
    _, meta20 = make_inputs(np.random.default_rng(1), qp=20, mv_spread=0)
    _, meta45 = make_inputs(np.random.default_rng(1), qp=45, mv_spread=0)
    out20 = restore_gop(frames, meta20, params)
    out45 = restore_gop(frames, meta45, params)
    assert np.abs(out20.as_array() - out45.as_array()).max() > 1e-6


def test_mismatches_rejected(rng):
    params = init_model(DESK)
    frames, meta = make_inputs(rng)
    with pytest.raises(ShapeError):
        restore_gop(frames[:5], meta, params)
    bad_meta = GopMetadata(meta.width, meta.height, list(meta.frames))
    bad_meta.frames[0] = FrameMeta(FRAME_P, meta.frames[0].qp, meta.frames[1].mv)
    with pytest.raises(SidecarValidationError):
        restore_gop(frames, bad_meta, params)
    frames96, _ = make_inputs(rng, 96, 96)
    with pytest.raises(ShapeError):
        restore_gop(frames96, meta, params)


def test_parameter_counts():
    paper = count_parameters(init_model(ModelConfig()))
    even = count_parameters(init_model(ModelConfig(channels_i=32, channels_p=32)))
    desk = count_parameters(init_model(DESK))

    def stack_params(cin, c, nb, cout=None):
        def conv(ci, co, k):
            return co * ci * k * k + co

        block = 2 * conv(c, c, 3) + conv(c, c // 4, 1) + conv(c // 4, c, 1) + conv(1, c, 3) + conv(c, c, 1)
        total = conv(cin, c, 3) + nb * block
        if cout is not None:
            total += conv(c, cout, 3)
        return total

    expect_paper = (
        stack_params(3, 64, 10)
        + stack_params(3, 16, 10)
        + (160 * 64 + 64)
        + stack_params(64, 64, 10, 3)
        + stack_params(6, 64, 10, 3)
    )
    assert paper == expect_paper
    # same magnitude as the published 2.449M count (attention internals differ)
    assert 2.0e6 < paper < 3.0e6
    assert even != paper
    assert desk < 100_000


def test_degenerate_zero_block_stack(rng):
    params = init_model(ModelConfig(8, 4, 0, 7, 0))
    frames, meta = make_inputs(rng)
    out = restore_gop(frames, meta, params)
    assert len(out.frames) == 7


def test_checkpoint_roundtrip_through_model(rng, tmp_path):
    params = init_model(DESK)
    path = tmp_path / "m.mbwt"
    save_checkpoint(path, params.named_params())
    fresh = init_model(ModelConfig(**{**DESK.__dict__, "seed": 99}))
    before = fresh.named_params()["i_rep.proj_w"].data.copy()
    load_into_model(fresh, load_checkpoint(path))
    after = fresh.named_params()["i_rep.proj_w"].data
    assert not np.array_equal(before, after)
    np.testing.assert_array_equal(after, params.named_params()["i_rep.proj_w"].data)


# ---------------------------------------------------------------- streaming


def stream_items(rng, n, w=32, h=32, bs=16):
    gw, gh = -(-w // bs), -(-h // bs)
    qp_map = QPMap(bs, np.full((gh, gw), 35, dtype=np.uint8))
    for i in range(n):
        frame = rng.random((3, h, w)).astype(np.float32)
        if i == 0:
            yield frame, FrameMeta(FRAME_I, qp_map)
        else:
            grid = rng.integers(-16, 17, (gh, gw, 2)).astype(np.int16)
            yield frame, FrameMeta(FRAME_P, qp_map, MVField(bs, grid))


def test_streaming_13_frames_one_substitution(rng):
    params = init_model(DESK)
    stats = StreamStats()
    out = list(streaming_restore(stream_items(rng, 13), params, stats))
    assert len(out) == 13
    assert stats.substitutions == [6]
    assert stats.peak_resident <= DESK.gop_size + 1


def test_streaming_19_frames_two_substitutions(rng):
    params = init_model(DESK)
    stats = StreamStats()
    out = list(streaming_restore(stream_items(rng, 19), params, stats))
    assert len(out) == 19
    assert stats.substitutions == [6, 12]


def test_streaming_7_frames_matches_restore_gop(rng):
    params = init_model(DESK)
    items = list(stream_items(rng, 7))
    stats = StreamStats()
    streamed = list(streaming_restore(iter(items), params, stats))
    assert stats.substitutions == []
    meta = GopMetadata(32, 32, [m for _, m in items])
    direct = restore_gop([f for f, _ in items], meta, params)
    for a, b in zip(streamed, direct.frames):
        np.testing.assert_array_equal(a.data, b.data)


def test_streaming_partial_tail(rng):
    params = init_model(DESK)
    stats = StreamStats()
    out = list(streaming_restore(stream_items(rng, 10), params, stats))
    assert len(out) == 10
    assert stats.substitutions == [6]


def test_streaming_requires_leading_i(rng):
    params = init_model(DESK)
    items = list(stream_items(rng, 7))
    items[0] = (items[0][0], items[1][1])  # swap in a P meta at the front
    with pytest.raises(ShapeError):
        list(streaming_restore(iter(items), params))


def test_streaming_too_short_rejected(rng):
    params = init_model(DESK)
    with pytest.raises(ShapeError):
        list(streaming_restore(stream_items(rng, 4), params))
