import json
import struct

import numpy as np
import pytest

from voskit import fileio
from voskit.cli import main


@pytest.fixture
def clip(tmp_path):
    spec = {"width": 16, "height": 16, "n_frames": 5, "seed": 1,
            "shapes": [{"object_id": 1, "color": [0.9, 0.1, 0.1], "cx": 4, "cy": 8,
                        "size": 4, "vx": 1.0}]}
    (tmp_path / "clip.json").write_text(json.dumps(spec))
    assert main(["gen-synthetic", "--spec", str(tmp_path / "clip.json"),
                 "--out", str(tmp_path / "data")]) == 0
    return tmp_path / "data" / "clip"


def test_gen_synthetic_suite(tmp_path):
    assert main(["gen-synthetic", "--suite", "crossing", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "crossing_00" / "first_mask.png").exists()


def test_stage_commands_chain(clip, tmp_path, capsys):
    d = str(clip)
    p = str(tmp_path / "p")
    assert main(["propagate", "--frames", d + "/frames", "--first-mask", d + "/first_mask.png",
                 "--out", p]) == 0
    assert main(["fuse", "--pred", p, p, "--out", str(tmp_path / "f")]) == 0
    assert main(["fuse", "--pred", p, p, "--method", "keypoint-vote", "--frames", d + "/frames",
                 "--out", str(tmp_path / "kv")]) == 0
    assert main(["refine-boundary", "--masks", str(tmp_path / "f"), "--frames", d + "/frames",
                 "--volumes", str(tmp_path / "f"), "--out", str(tmp_path / "b")]) == 0
    assert main(["zoom-refine", "--masks", str(tmp_path / "b"), "--frames", d + "/frames",
                 "--first-mask", d + "/first_mask.png", "--out", str(tmp_path / "z")]) == 0
    rep = tmp_path / "rep.json"
    assert main(["evaluate", "--pred", str(tmp_path / "z"), "--gt", d + "/gt", "--seen", "1",
                 "--report", str(rep)]) == 0
    records = json.loads(rep.read_text())
    assert records[-1]["kind"] == "aggregate" and records[-1]["overall"] > 0.9
    assert "Overall" in capsys.readouterr().out


def test_attend_demo(capsys):
    assert main(["attend-demo", "--q", "1,0;0,1", "--k", "1,0;0,1", "--v", "1;2"]) == 0
    assert main(["attend-demo", "--q", "1,0", "--k", "1,0;0,1", "--v", "1;2", "--e", "1;0",
                 "--variant", "eq3", "--gate", "1", "--value-weights", "1", "--topk", "1"]) == 0
    out = capsys.readouterr().out
    assert "weights" in out and "gate" in out


def test_run_and_env_config(clip, tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scales": [1.0], "flip": False}))
    monkeypatch.setenv("VOSKIT_CONFIG", str(cfg))
    assert main(["run", "--input", str(clip), "--output", str(tmp_path / "o")]) == 0
    saved = json.loads((tmp_path / "o" / "config.json").read_text())
    assert saved["scales"] == [1.0] and saved["flip"] is False


def test_exit_codes(clip, tmp_path):
    d = str(clip)
    assert main(["run", "--input", str(tmp_path / "missing"), "--output", str(tmp_path / "o")]) == 3
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nope": 1}))
    assert main(["run", "--input", d, "--output", str(tmp_path / "o"), "--config", str(bad)]) == 2
    assert main(["attend-demo", "--q", "1,x", "--k", "1", "--v", "1"]) == 2
    vp = tmp_path / "p"
    vp.mkdir()
    (vp / "00000.vosp").write_bytes(b"JUNK" + b"\0" * 20)
    assert main(["fuse", "--pred", str(vp), "--size", "4x4", "--out", str(tmp_path / "f")]) == 4
    (vp / "00000.vosp").write_bytes(struct.pack("<4sHBB", b"VOSP", 1, 3, 1) + struct.pack("<Q", 9))
    assert main(["fuse", "--pred", str(vp), "--size", "4x4", "--out", str(tmp_path / "f")]) == 4
    (tmp_path / "m").mkdir()
    fileio.write_mask(tmp_path / "m" / "00000.png", np.zeros((3, 3), np.uint8))
    assert main(["run", "--input", d, "--output", str(tmp_path / "o2"), "--id-dim", "0"]) == 2


def test_stage_error_exit(clip, tmp_path):
    # an identity space too small for background + object fails inside propagation
    code = main(["run", "--input", str(clip), "--output", str(tmp_path / "o"), "--id-dim", "1",
                 "--scales", "1", "--no-flip"])
    assert code == 5
