import json
import os

import numpy as np
import pytest

from sparself.cli import main
from sparself.dataset import load_dataset, read_pfm, read_poses_csv


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, est, rpe, depth = (str(root / n) for n in ("data", "est", "rpe", "depth"))
    assert main(["render", "--preset", "dolly", "--frames", "3", "--depth", "0.5", "--output-dir", data]) == 0
    assert main(["estimate", data, "--mode", "multi", "--output-dir", est]) == 0
    assert main(["eval-rpe", os.path.join(est, "poses.csv"), os.path.join(data, "poses_gt.csv"),
                 "--output-dir", rpe]) == 0
    assert main(["eval-depth", est, "--dataset", data, "--output-dir", depth]) == 0
    return root


def _error(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(err)


def test_render_dataset(pipeline):
    ds = load_dataset(str(pipeline / "data"))
    assert len(ds.lightfields) == 3 and ds.lightfields[0].shape == (160, 224)
    assert ds.gt_poses[2].translation[0] == pytest.approx(0.01)
    assert ds.gt_invdepths[0][0, 0] == pytest.approx(2.0, rel=1e-6)


def test_estimate_outputs(pipeline):
    est = pipeline / "est"
    ts, poses = read_poses_csv(str(est / "poses.csv"))
    assert ts == [0.0, 1.0, 2.0]
    assert np.array_equal(poses[0].matrix(), np.eye(4))
    assert read_pfm(str(est / "invdepth" / "frame_000002.pfm")).shape == (160, 224)
    trace = (est / "loss_trace.csv").read_text().splitlines()
    assert trace[0] == "pair,iteration,best_loss" and len(trace) == 1 + 2 * 120
    summary = json.loads((est / "estimate.json").read_text())
    assert summary["config"]["mode"] == "multi" and len(summary["pairs"]) == 2


def test_rpe_below_threshold(pipeline):
    rep = json.loads((pipeline / "rpe" / "rpe.json").read_text())
    assert rep["pairs"] == 2
    assert rep["translation_m"]["rmse"] < 5e-4
    assert rep["rotation_deg"]["rmse"] < 0.05
    assert (pipeline / "rpe" / "rpe.csv").read_text().startswith("pair,t_from,t_to,trans_err_m,rot_err_deg\n")


def test_depth_table(pipeline):
    rows = (pipeline / "depth" / "depth.csv").read_text().splitlines()
    assert rows[0] == "distance_m,mean_m,std_m,rmse_m,pixels" and len(rows) == 3
    assert json.loads((pipeline / "depth" / "depth.json").read_text())["overall_rmse_m"] < 0.02


def test_rpe_self_is_zero(pipeline, tmp_path):
    gt = str(pipeline / "data" / "poses_gt.csv")
    assert main(["eval-rpe", gt, gt, "--output-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "rpe.json").read_text())
    assert rep["translation_m"]["rmse"] == 0.0 and rep["rotation_deg"]["rmse"] == 0.0


def test_rpe_several(pipeline, tmp_path):
    gt = str(pipeline / "data" / "poses_gt.csv")
    est = str(pipeline / "est" / "poses.csv")
    assert main(["eval-rpe", est, gt, gt, gt, "--output-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "rpe.json").read_text())
    assert rep["joint"]["pairs"] == 4 and rep["per_trajectory"]["trajectories"] == 2
    assert (tmp_path / "rpe_0.csv").exists() and (tmp_path / "rpe_1.csv").exists()


def test_encode_volumetric(pipeline, tmp_path):
    assert main(["encode", str(pipeline / "data"), "--encoding", "volumetric", "--frame", "1",
                 "--output-dir", str(tmp_path)]) == 0
    stack = np.load(tmp_path / "stack_000001.npy")
    assert stack.shape == (17, 160, 224)
    ds = load_dataset(str(pipeline / "data"))
    assert np.array_equal(stack[0], ds.lightfields[1][(-4, 0)])
    assert (tmp_path / "stack_000001.png").exists()


@pytest.mark.parametrize("name,channels", [("focalstack-5", 5), ("focalstack-9", 9)])
def test_encode_focal(pipeline, tmp_path, name, channels):
    assert main(["encode", str(pipeline / "data"), "--encoding", name, "--frame", "0",
                 "--output-dir", str(tmp_path)]) == 0
    assert np.load(tmp_path / "stack_000000.npy").shape == (channels, 160, 224)


def test_encode_epi(pipeline, tmp_path):
    out = tmp_path / "a"
    assert main(["encode", str(pipeline / "data"), "--encoding", "epi", "--frame", "0", "--seed", "3",
                 "--output-dir", str(out)]) == 0
    assert np.load(out / "stack_000000.npy").shape == (16, 160, 224)
    assert np.load(out / "tall_000000.npy").shape == (1, 1440, 224)
    assert np.load(out / "wide_000000.npy").shape == (1, 160, 2016)
    again = tmp_path / "b"
    assert main(["encode", str(pipeline / "data"), "--encoding", "epi", "--frame", "0",
                 "--weights", str(out / "encoder_weights.bin"), "--output-dir", str(again)]) == 0
    assert np.array_equal(np.load(out / "stack_000000.npy"), np.load(again / "stack_000000.npy"))


def test_missing_dataset(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["estimate", str(tmp_path / "nowhere"), "--output-dir", str(out)])
    assert code == 3
    err = _error(capsys)
    assert err["error"] == "MissingFile" and err["path"].endswith("manifest.json")
    assert not out.exists()


def test_missing_view_no_partial_output(pipeline, tmp_path, capsys):
    import shutil
    data = tmp_path / "data"
    shutil.copytree(pipeline / "data", data)
    victim = data / "frames" / "000001" / "view_+0_-2.png"
    victim.unlink()
    out = tmp_path / "enc"
    assert main(["encode", str(data), "--encoding", "volumetric", "--output-dir", str(out)]) == 3
    err = _error(capsys)
    assert err["path"] == str(victim)
    assert not out.exists()


def test_bad_frame(pipeline, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["encode", str(pipeline / "data"), "--encoding", "volumetric", "--frame", "9",
                 "--output-dir", str(out)]) == 3
    assert _error(capsys)["error"] == "BadFrame"
    assert not out.exists()


def test_bad_config(pipeline, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"pyramid_levels": 0}))
    out = tmp_path / "o"
    assert main(["estimate", str(pipeline / "data"), "--config", str(cfg), "--output-dir", str(out)]) == 3
    assert _error(capsys)["error"] == "ValueError"
    assert not out.exists()


def test_render_scene_json(tmp_path):
    scene = tmp_path / "scene.json"
    scene.write_text(json.dumps({"height": 32, "width": 48, "arm_length": 1,
                                 "planes": [{"depth": 0.6}, {"depth": 0.4, "finite": True, "pitch": 0.005}]}))
    poses = tmp_path / "poses.csv"
    poses.write_text("timestamp,r00,r01,r02,tx,r10,r11,r12,ty,r20,r21,r22,tz\n"
                     "0,1,0,0,0,0,1,0,0,0,0,1,0\n"
                     "0.5,1,0,0,0.002,0,1,0,0,0,0,1,0\n")
    out = tmp_path / "d"
    assert main(["render", "--scene", str(scene), "--poses", str(poses), "--format", "pfm",
                 "--output-dir", str(out)]) == 0
    ds = load_dataset(str(out))
    assert ds.timestamps == [0.0, 0.5] and ds.lightfields[0].shape == (32, 48)
    assert ds.gt_invdepths[0].max() == pytest.approx(1 / 0.4, rel=1e-6)


def test_render_needs_poses(tmp_path, capsys):
    scene = tmp_path / "scene.json"
    scene.write_text(json.dumps({"planes": [{"depth": 0.6}]}))
    assert main(["render", "--scene", str(scene), "--output-dir", str(tmp_path / "d")]) == 3
    assert _error(capsys)["error"] == "MissingPoses"


def test_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["estimate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["encode", "x", "--encoding", "hologram"])
    assert exc.value.code == 2


def test_threads_flag(capsys):
    assert main(["grad-check", "--threads", "0"]) == 2
    assert _error(capsys)["error"] == "BadArguments"
