import numpy as np
import pytest

from mvstream.codec import encode
from mvstream.pipeline import PipelineConfig, PipelineError, read_config_file, run_pipeline
from mvstream.scenarios import ScenarioSpec, generate_scenario

SMALL = dict(window_frames=12, stride_frames=4, gop_size=4, prompt_tokens=2, layers=1)


def video(kind="translating_object", length=24, **kw):
    return generate_scenario(ScenarioSpec(kind=kind, width=32, height=32, length=length, object_size=8, **kw)).video


def run(v, **kw):
    return run_pipeline(v, PipelineConfig(**{**SMALL, **kw}))


def test_deterministic():
    v = video(velocity=(2, 1))
    a, b = run(v), run(v)
    assert a.report == b.report
    for x, y in zip(a.hidden, b.hidden):
        assert np.array_equal(x, y)


def test_window_count_and_frames():
    rep = run(video(length=24)).report
    assert rep.windows == 4 and rep.frames_decoded == 24
    assert [(w.start, w.stop) for w in rep.per_window] == [(0, 12), (4, 16), (8, 20), (12, 24)]


def test_mode_lattice():
    v = video(velocity=(2, 1))
    reps = {m: run(v, mode=m).report for m in ("full", "prune_only", "kvc_only", "full_opt")}
    full, prune, kvc, opt = (reps[m] for m in ("full", "prune_only", "kvc_only", "full_opt"))
    assert full.tokens_retained == kvc.tokens_retained > prune.tokens_retained == opt.tokens_retained
    assert full.recomputed_positions == full.positions
    assert kvc.recomputed_positions < kvc.positions
    assert full.recomputed_positions >= kvc.recomputed_positions >= opt.recomputed_positions
    assert full.drift_mean == prune.drift_mean == 0.0
    assert kvc.drift_mean > 0
    assert opt.flops_total < prune.flops_total < full.flops_total
    assert opt.flops_total < kvc.flops_total < full.flops_total
    assert full.bytes_transmitted == full.raw_bytes
    assert opt.bytes_transmitted == opt.bitstream_bytes < opt.raw_bytes


def test_static_full_opt_matches_prune_only():
    v = video("static")
    a, b = run(v, mode="prune_only"), run(v, mode="full_opt")
    assert a.report.tokens_retained == b.report.tokens_retained
    for x, y in zip(a.hidden, b.hidden):
        np.testing.assert_allclose(y, x, rtol=1e-5, atol=1e-5)


def test_static_prunes_everything_but_i_frames():
    rep = run(video("static"), mode="prune_only").report
    # each 12-frame window holds three I-frames of 4 tokens
    assert all(w.tokens_retained == 12 for w in rep.per_window)


def test_tau_zero_full_opt_with_full_refresh_matches_full():
    v = video(velocity=(3, 0))
    a = run(v, mode="full")
    b = run(v, mode="full_opt", tau=0.0, refresh_mode="full")
    assert len(a.hidden) == len(b.hidden)
    for x, y in zip(a.hidden, b.hidden):
        assert np.array_equal(x, y)


def test_naive_reuse_drifts_more_than_selective():
    v = video(velocity=(2, 1), length=32)
    sel = run(v, mode="kvc_only").report.drift_mean
    naive = run(v, mode="kvc_only", refresh_mode="naive_reuse").report.drift_mean
    assert 0 < sel <= naive


def test_bitstream_input_equivalent():
    v = video()
    cfg = PipelineConfig(**SMALL)
    data = encode(v, cfg.gop_size, cfg.block_size, cfg.search_radius).to_bytes()
    assert run_pipeline(data, cfg).report == run_pipeline(v, cfg).report


def test_decimation():
    v = video(length=48, fps=4)
    rep = run(v, target_fps=2).report
    assert rep.frames_decoded == 48 and rep.windows == 4


def test_partial_windows():
    v = video(length=14)
    assert run(v).report.windows == 1
    assert run(v, allow_partial=True).report.windows == 2


def test_short_stream_has_no_windows():
    rep = run(video(length=5)).report
    assert rep.windows == 0 and rep.frames_decoded == 5


def test_default_config_on_longer_stream():
    rep = run_pipeline(video(length=160), PipelineConfig(layers=1)).report
    assert rep.windows == 6
    assert rep.per_window[1].reused_positions > 0


def test_mask_lines():
    res = run(video(length=12))
    assert len(res.mask_lines) == 12 and res.mask_lines[0].startswith("0 0 ")


def test_errors_are_stage_tagged():
    with pytest.raises(PipelineError, match=r"^\[config\]"):
        PipelineConfig(mode="turbo")
    with pytest.raises(PipelineError, match=r"^\[config\]"):
        PipelineConfig(window_frames=4, stride_frames=8)
    with pytest.raises(PipelineError, match=r"^\[ingest\]"):
        run_pipeline(b"garbage!" * 8, PipelineConfig(**SMALL))
    with pytest.raises(PipelineError, match=r"^\[config\]"):
        run_pipeline(generate_scenario(ScenarioSpec(width=20, height=20, object_size=4, length=4)).video,
                     PipelineConfig(**SMALL))


def test_config_mapping_and_file(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text("# comment\nwindow-frames = 12\nstride_frames=4  # trailing\ngop=4\nmode=kvc_only\ntarget_fps=none\n")
    cfg = PipelineConfig.from_mapping(read_config_file(p))
    assert (cfg.window_frames, cfg.stride_frames, cfg.gop_size, cfg.mode) == (12, 4, 4, "kvc_only")
    assert cfg.target_fps is None
    assert PipelineConfig.from_mapping(cfg.to_mapping()) == cfg
    with pytest.raises(PipelineError):
        PipelineConfig.from_mapping({"colour": "red"})
    with pytest.raises(PipelineError):
        PipelineConfig.from_mapping({"cross_attention": "maybe"})
