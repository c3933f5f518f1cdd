import json
import os

import numpy as np
import pytest

from sparself.core import CENTER, Intrinsics, RigidTransform, SparseLightField, plus_pattern, se3_exp
from sparself.dataset import (
    POSE_HEADER,
    Dataset,
    load_dataset,
    quantize16,
    read_pfm,
    read_png16,
    read_poses_csv,
    read_weights,
    save_dataset,
    validate_dataset,
    write_pfm,
    write_png16,
    write_poses_csv,
    write_weights,
)
from sparself.encodings import EpiEncoderWeights
from sparself.errors import DimMismatch, ManifestError, MissingFile

K = Intrinsics(50.0, 50.0, 9.5, 7.5)


def _dataset(n=2, arm=1, shape=(16, 20), seed=0, quantise=True, f32=False):
    rng = np.random.default_rng(seed)
    lfs = []
    for _ in range(n):
        views = {}
        for v in plus_pattern(arm):
            img = rng.random(shape)
            if quantise:
                img = quantize16(img)
            if f32:
                img = img.astype(np.float32).astype(np.float64)
            views[v] = img
        lfs.append(SparseLightField(views, 0.01))
    poses = [se3_exp(rng.normal(0, 0.01, 6)) for _ in range(n)]
    inv = [rng.uniform(1, 2, shape).astype(np.float32).astype(np.float64) for _ in range(n)]
    return Dataset(lfs, K, [0.1 * i for i in range(n)], poses, inv, {"note": "test"})


def test_png16_round_trip(tmp_path):
    img = np.random.default_rng(0).random((9, 11))
    p = tmp_path / "a.png"
    write_png16(p, img)
    back = read_png16(p)
    assert np.array_equal(back, quantize16(img))
    assert np.abs(back - img).max() <= 0.5 / 65535 + 1e-15
    write_png16(p, back)
    assert np.array_equal(read_png16(p), back)


@pytest.mark.parametrize("shape", [(7, 5), (4, 6, 3)])
def test_pfm_round_trip(tmp_path, shape):
    arr = np.random.default_rng(1).random(shape).astype(np.float32).astype(np.float64)
    arr[0, 0] = -3.5
    write_pfm(tmp_path / "x.pfm", arr)
    assert np.array_equal(read_pfm(tmp_path / "x.pfm"), arr)


def test_pfm_bottom_row_first(tmp_path):
    arr = np.array([[1.0, 2.0], [3.0, 4.0]])
    write_pfm(tmp_path / "x.pfm", arr)
    raw = (tmp_path / "x.pfm").read_bytes()
    assert raw.startswith(b"Pf\n2 2\n-1.0\n")
    assert np.frombuffer(raw[-16:], "<f4").tolist() == [3.0, 4.0, 1.0, 2.0]


def test_bad_pfm(tmp_path):
    (tmp_path / "x.pfm").write_bytes(b"P6\n2 2\n-1.0\n" + bytes(16))
    with pytest.raises(ManifestError):
        read_pfm(tmp_path / "x.pfm")
    with pytest.raises(MissingFile) as exc:
        read_pfm(tmp_path / "nope.pfm")
    assert exc.value.path.endswith("nope.pfm")


def test_poses_csv(tmp_path):
    rng = np.random.default_rng(2)
    poses = [se3_exp(rng.normal(0, 0.3, 6)) for _ in range(4)]
    ts = [0.0, 0.5, 1.25, 2.0]
    write_poses_csv(tmp_path / "p.csv", ts, poses)
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == ",".join(POSE_HEADER)
    ts2, poses2 = read_poses_csv(tmp_path / "p.csv")
    assert ts2 == ts
    for a, b in zip(poses, poses2):
        assert np.array_equal(a.matrix(), b.matrix())


def test_poses_csv_errors(tmp_path):
    (tmp_path / "p.csv").write_text("timestamp,r00\n0,1\n")
    with pytest.raises(ManifestError):
        read_poses_csv(tmp_path / "p.csv")
    (tmp_path / "q.csv").write_text("0," + ",".join(["2"] * 12) + "\n")
    with pytest.raises(ManifestError):
        read_poses_csv(tmp_path / "q.csv")


@pytest.mark.parametrize("fmt", ["png16", "pfm"])
def test_dataset_round_trip(tmp_path, fmt):
    ds = _dataset(quantise=fmt == "png16", f32=fmt == "pfm")
    save_dataset(tmp_path, ds, fmt)
    back = load_dataset(tmp_path)
    assert back.intrinsics == ds.intrinsics and back.timestamps == ds.timestamps
    assert back.meta == {"note": "test"}
    for a, b in zip(ds.lightfields, back.lightfields):
        assert a.arm_length == b.arm_length and a.baseline == b.baseline
        for v in a.views:
            assert np.array_equal(a[v], b[v])
    for a, b in zip(ds.gt_invdepths, back.gt_invdepths):
        assert np.array_equal(a, b)
    for a, b in zip(ds.gt_poses, back.gt_poses):
        assert np.array_equal(a.matrix(), b.matrix())


def test_manifest_key_order(tmp_path):
    save_dataset(tmp_path, _dataset(n=1))
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert list(m) == ["version", "arm_length", "baseline", "intrinsics", "height", "width", "channels",
                       "image_format", "gt_poses", "frames", "meta"]
    assert m["frames"][0]["views"]["-1,0"] == os.path.join("frames", "000000", "view_-1_+0.png")


def test_missing_view_file(tmp_path):
    save_dataset(tmp_path, _dataset(n=1))
    victim = tmp_path / "frames" / "000000" / "view_+1_+0.png"
    victim.unlink()
    with pytest.raises(MissingFile) as exc:
        load_dataset(tmp_path)
    assert str(victim) in str(exc.value) and exc.value.path == str(victim)


def test_dim_mismatch(tmp_path):
    save_dataset(tmp_path, _dataset(n=1))
    victim = tmp_path / "frames" / "000000" / "view_+0_+1.png"
    write_png16(victim, np.zeros((5, 5)))
    with pytest.raises(DimMismatch) as exc:
        load_dataset(tmp_path)
    assert exc.value.path == str(victim)


def test_manifest_errors(tmp_path):
    with pytest.raises(MissingFile):
        load_dataset(tmp_path)
    save_dataset(tmp_path, _dataset(n=1))
    mpath = tmp_path / "manifest.json"
    m = json.loads(mpath.read_text())
    m["version"] = 7
    mpath.write_text(json.dumps(m))
    with pytest.raises(ManifestError, match="version"):
        load_dataset(tmp_path)
    del m["version"]
    mpath.write_text(json.dumps(m))
    with pytest.raises(ManifestError, match="version"):
        load_dataset(mpath)
    mpath.write_text("{not json")
    with pytest.raises(ManifestError):
        load_dataset(tmp_path)


def test_validate():
    ds = _dataset(n=2)
    bad = Dataset(ds.lightfields, K, [0.0], None)
    with pytest.raises(DimMismatch):
        validate_dataset(bad)
    other = SparseLightField({CENTER: np.zeros((16, 20))}, 0.01)
    with pytest.raises(DimMismatch):
        validate_dataset(Dataset([ds.lightfields[0], other], K, [0.0, 1.0]))
    with pytest.raises(ValueError):
        validate_dataset(ds, "jpeg")


def test_weights_file(tmp_path):
    w = EpiEncoderWeights.random(3, 4, seed=1)
    write_weights(tmp_path / "w.bin", w)
    back = read_weights(tmp_path / "w.bin")
    assert np.array_equal(back.wide_kernel, w.wide_kernel) and np.array_equal(back.tall_bias, w.tall_bias)
