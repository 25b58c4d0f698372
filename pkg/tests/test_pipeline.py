import filecmp
import json

import numpy as np
import pytest

from voskit import fileio
from voskit.config import ConfigError, PipelineConfig, from_dict, load_config, override
from voskit.errors import InputError, StageError
from voskit.pipeline import run_many, run_pipeline, write_video
from voskit.propagation import propagate
from voskit.synthetic import crossing_squares, gen_synthetic, moving_square, moving_square_suite


@pytest.fixture
def video(tmp_path):
    frames, masks = gen_synthetic(moving_square(16, 6, 4))
    write_video(tmp_path / "vid", frames, masks, {"seen": [1], "unseen": []})
    return tmp_path / "vid", frames, masks


def tree_equal(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    if mismatch or errors:
        return False
    return all(tree_equal(a / d, b / d) for d in cmp.common_dirs)


def test_stage_bypass_equals_propagate(video, tmp_path):
    vid, _, _ = video
    cfg = from_dict({"scales": [1.0], "flip": False})
    run_pipeline(cfg, vid, tmp_path / "out")
    frames = fileio.read_frames(vid / "frames")
    bare = propagate(frames, fileio.read_mask(vid / "first_mask.png"), cfg.propagation())
    final = fileio.read_masks(tmp_path / "out" / "masks")
    assert len(final) == len(bare)
    for (m, _), f in zip(bare, final):
        assert np.array_equal(m, f)


def test_determinism(video, tmp_path):
    vid, _, _ = video
    cfg = from_dict({"scales": [1.0, 1.5], "boundary": {"enabled": True},
                     "zoom": {"enabled": True}})
    run_pipeline(cfg, vid, tmp_path / "a")
    run_pipeline(cfg, vid, tmp_path / "b")
    assert tree_equal(tmp_path / "a", tmp_path / "b")
    assert (tmp_path / "a" / "report.json").exists()


def test_stage_prefix_outputs(video, tmp_path):
    vid, _, _ = video
    cfg = from_dict({"scales": [1.0], "flip": True, "fusion": "keypoint-vote"})
    report = run_pipeline(cfg, vid, tmp_path / "o")
    stages = tmp_path / "o" / "stages"
    assert sorted(p.name for p in (stages / "propagate").iterdir()) == ["s1", "s1_flip"]
    assert (stages / "fuse" / "00000.vosp").exists()
    assert not (stages / "refine_boundary").exists()
    assert report.overall is not None


def test_missing_first_mask(video, tmp_path):
    vid, _, _ = video
    (vid / "first_mask.png").unlink()
    with pytest.raises(InputError):
        run_pipeline(PipelineConfig(), vid, tmp_path / "o")


def test_stage_failure_names_stage(video, tmp_path):
    vid, _, _ = video
    cfg = from_dict({"scales": [1.0], "flip": False, "id_dim": 1})
    with pytest.raises(StageError) as info:
        run_pipeline(cfg, vid, tmp_path / "o")
    assert info.value.stage == "propagate" and info.value.exit_code == 5


def test_run_many_jobs(tmp_path):
    for i, spec in enumerate([moving_square(16, 4, 4), crossing_squares(n_frames=4)]):
        frames, masks = gen_synthetic(spec)
        write_video(tmp_path / "in" / f"v{i}", frames, masks)
    cfg = from_dict({"scales": [1.0], "flip": False})
    reports = run_many(cfg, tmp_path / "in", tmp_path / "out", jobs=2)
    assert sorted(reports) == ["v0", "v1"]
    assert (tmp_path / "out" / "v1" / "masks" / "00003.png").exists()


def test_full_pipeline_not_worse_than_single_scale(tmp_path):
    # baseline: the first scale of the default set on its own, no flip
    clips = moving_square_suite()[:3] + [crossing_squares()]
    full = from_dict({})
    single = from_dict({"scales": [full.scales[0]], "flip": False})
    for i, spec in enumerate(clips):
        frames, masks = gen_synthetic(spec)
        write_video(tmp_path / f"v{i}", frames, masks)
        a = run_pipeline(full, tmp_path / f"v{i}", tmp_path / f"full{i}")
        b = run_pipeline(single, tmp_path / f"v{i}", tmp_path / f"single{i}")
        assert a.overall >= b.overall


def test_config_round_trip_and_override(tmp_path, monkeypatch):
    cfg = from_dict({"memory": {"capacity": 6}, "scales": [1.0]})
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    back = load_config(p)
    assert back.to_dict() == cfg.to_dict()
    o = override(back, {"memory.capacity": 3, "seed": 9})
    assert o.memory.capacity == 3 and o.seed == 9
    with pytest.raises(ConfigError):
        from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        from_dict({"scales": []}).validate()
