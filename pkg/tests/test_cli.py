import json

import numpy as np
import pytest

from burstalign import io
from burstalign.cli import main
from burstalign.pipeline import AlignmentConfig

SMALL = ["--set", "shape=[64,64]", "--set", "frames=3", "--set", "texture_size=256"]


@pytest.fixture(scope="module")
def aligned(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    burst, out = root / "burst", root / "out"
    assert main(["synth", "--preset", "single_plane", *SMALL, "--out", str(burst), "--seed", "2"]) == 0
    assert main(["align", str(burst), "--out", str(out), "--deterministic"]) == 0
    return burst, out


def _stderr_json(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(err)


def test_dump_config(capsys, tmp_path):
    assert main(["align", "--dump-config"]) == 0
    assert json.loads(capsys.readouterr().out) == AlignmentConfig().to_dict()
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"rounds": 1}))
    assert main(["align", "--dump-config", "--config", str(cfg), "--pixelwise", "--no-newton",
                 "--raw-plane-param", "--no-exp-param", "--reg", "tv=0.5,det=0.25"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["rounds"] == 1 and d["patch_radius"] == 0 and d["newton"] is False
    assert d["plane_param"] == "raw" and d["exp_param"] is False
    assert d["tv_weight"] == 0.5 and d["det_weight"] == 0.25


def test_synth_writes_burst(aligned):
    burst, _ = aligned
    names = {p.name for p in burst.iterdir()}
    for f in ("frame_0000.png", "frame_0002.png", "intrinsics.json", "gt_poses.csv", "gt_depth.pfm",
              "gt_flow_0001.flo", "gt_occ_0002.png", "init_depth16.pfm"):
        assert f in names
    assert io.read_pfm(burst / "init_depth16.pfm").shape == (16, 16)


def test_align_outputs(aligned):
    _, out = aligned
    rot, tr = io.read_poses_csv(out / "poses.csv")
    assert rot.shape == (3, 3) and np.all(rot[0] == 0) and np.all(tr[0] == 0)
    assert io.read_pfm(out / "depth.pfm").shape == (64, 64)
    assert io.read_pfm(out / "normals.pfm").shape == (64, 64, 3)
    for k in (1, 2):
        assert io.read_flo(out / f"flow_{k:04d}.flo").shape == (64, 64, 2)
        assert io.read_flo(out / f"reverse_flow_{k:04d}.flo").shape == (64, 64, 2)
        assert io.read_mask_png(out / f"occ_{k:04d}.png").shape == (64, 64)
    assert (out / "loss_trace.csv").read_text().startswith("level,round,block,loss")
    assert AlignmentConfig.from_dict(io.read_json(out / "config.json")) == AlignmentConfig()


def test_eval_report(aligned, capsys, tmp_path):
    burst, out = aligned
    capsys.readouterr()
    assert main(["eval", str(out), str(burst), "--out", str(tmp_path / "r.json")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep == io.read_json(tmp_path / "r.json")
    assert set(rep) == {"flow", "pose", "depth", "meta"}
    assert rep["flow"]["EPE"] <= 0.1
    assert 0 <= rep["flow"]["NPE1"] <= 1


def test_fuse_sr_overlay(aligned, tmp_path, capsys):
    burst, out = aligned
    assert main(["fuse", str(burst), str(out), "--out", str(tmp_path / "f.png")]) == 0
    assert io.read_png(tmp_path / "f.png").shape == (64, 64)
    assert main(["sr", str(burst), str(out), "--out", str(tmp_path / "s.png"), "--iterations", "5",
                 "--report", str(tmp_path / "s.json")]) == 0
    assert io.read_png(tmp_path / "s.png").shape == (128, 128)
    rep = io.read_json(tmp_path / "s.json")
    assert rep["loss_last"] <= rep["loss_first"]
    assert main(["overlay", str(burst), "--result", str(out), "--out", str(tmp_path / "o.png")]) == 0
    assert io.read_png(tmp_path / "o.png").shape == (64, 64, 3)
    assert main(["overlay", str(burst), "--view", "9", "--out", str(tmp_path / "o.png")]) == 2


def test_zero_motion_align(tmp_path):
    burst, out = tmp_path / "b", tmp_path / "o"
    assert main(["synth", "--preset", "single_plane", *SMALL, "--set", "trans_std=0",
                 "--set", "rot_std_deg=0", "--out", str(burst)]) == 0
    assert main(["align", str(burst), "--out", str(out)]) == 0
    rot, tr = io.read_poses_csv(out / "poses.csv")
    assert np.abs(rot).max() <= 1e-5 and np.abs(tr).max() <= 1e-5


def test_missing_directory_exit_code(tmp_path, capsys):
    code = main(["align", str(tmp_path / "nope"), "--out", str(tmp_path / "o")])
    assert code == 2
    err = _stderr_json(capsys)
    assert err["exit_code"] == 2 and "nope" in (err["file"] or "")


def test_bad_inputs_exit_codes(tmp_path, capsys):
    assert main(["synth", "--preset", "single_plane", "--set", "shape=[32", "--out", str(tmp_path)]) == 2
    assert _stderr_json(capsys)["field"] == "--set"
    assert main(["align", "--dump-config", "--reg", "l1=3"]) == 2
    bad = tmp_path / "c.json"
    bad.write_text(json.dumps({"rounds": 0}))
    assert main(["align", "--dump-config", "--config", str(bad)]) == 2
    assert _stderr_json(capsys)["field"] == "config"
    scene = tmp_path / "scene.json"
    scene.write_text(json.dumps({"shape": [16, 16], "planes": [{}]}))
    assert main(["synth", "--scene", str(scene), "--out", str(tmp_path / "s")]) == 2
    assert _stderr_json(capsys)["field"] == "planes[0].normal"


def test_explicit_scene_json(tmp_path):
    scene = tmp_path / "scene.json"
    poses = [[0, 0, 0, 0, 0, 0], [0, 0, 0, 0.01, 0, 0]]
    scene.write_text(json.dumps({"shape": [16, 16], "planes": [{"normal": [0, 0, 0.5], "texture_size": 64}],
                                 "poses": poses}))
    assert main(["synth", "--scene", str(scene), "--out", str(tmp_path / "s")]) == 0
    _, tr = io.read_poses_csv(tmp_path / "s" / "gt_poses.csv")
    np.testing.assert_allclose(tr[1], [0.01, 0, 0])
    np.testing.assert_allclose(io.read_pfm(tmp_path / "s" / "gt_depth.pfm"), 2.0, rtol=1e-6)
