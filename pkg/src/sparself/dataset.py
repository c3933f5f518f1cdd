"""On-disk datasets: manifest JSON, 16-bit PNG / PFM views, pose CSVs, float maps.

Layout written by :func:`save_dataset`::

    manifest.json
    poses_gt.csv                       (optional)
    frames/000000/view_+0_+0.png ...   (or .pfm)
    frames/000000/invdepth_gt.pfm      (optional)

PNG views are 16-bit grayscale holding ``round(I * 65535)`` for ``I`` in
[0, 1]; PFM files are little-endian float32, bottom row first.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .core import Intrinsics, RigidTransform, SparseLightField, ViewIndex, plus_pattern
from .errors import DimMismatch, ManifestError, MissingFile

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
IMAGE_FORMATS = ("png16", "pfm")
POSE_HEADER = ("timestamp", "r00", "r01", "r02", "tx", "r10", "r11", "r12", "ty", "r20", "r21", "r22", "tz")
_PNG_MAX = 65535.0


# ---------------------------------------------------------------- images

def quantize16(img) -> np.ndarray:
    """Values on the 16-bit grid, i.e. exactly what a PNG round trip returns."""
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * _PNG_MAX) / _PNG_MAX


def write_png16(path, img) -> None:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("16-bit PNG output is grayscale only")
    Image.fromarray(np.round(np.clip(arr, 0.0, 1.0) * _PNG_MAX).astype(np.uint16)).save(path)


def read_png16(path) -> np.ndarray:
    if not os.path.exists(path):
        raise MissingFile(f"missing image {path}", path)
    with Image.open(path) as im:
        arr = np.array(im)
    if arr.dtype != np.uint16:
        raise ManifestError(f"{path} is not a 16-bit grayscale PNG", path)
    return arr.astype(np.float64) / _PNG_MAX


def write_pfm(path, data) -> None:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 3:
        head = b"PF"
    elif arr.ndim == 2:
        head = b"Pf"
    else:
        raise ValueError("PFM holds (H, W) or (H, W, 3) arrays")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(head + b"\n%d %d\n-1.0\n" % (w, h))
        f.write(np.ascontiguousarray(arr[::-1], dtype="<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    if not os.path.exists(path):
        raise MissingFile(f"missing float map {path}", path)
    with open(path, "rb") as f:
        raw = f.read()
    try:
        kind, dims, scale, body = raw.split(b"\n", 3)
        w, h = (int(x) for x in dims.split())
        scale = float(scale)
    except ValueError as exc:
        raise ManifestError(f"{path}: malformed PFM header", path) from exc
    if kind not in (b"Pf", b"PF"):
        raise ManifestError(f"{path}: not a PFM file", path)
    c = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    if len(body) != h * w * c * 4:
        raise ManifestError(f"{path}: expected {h * w * c * 4} data bytes, found {len(body)}", path)
    arr = np.frombuffer(body, dtype=dtype).astype(np.float64).reshape((h, w, c) if c == 3 else (h, w))
    return np.ascontiguousarray(arr[::-1])


# ---------------------------------------------------------------- poses

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_poses_csv(path, timestamps, poses) -> None:
    """One row per frame: timestamp then the 3x4 camera-to-world matrix, row-major."""
    timestamps, poses = list(timestamps), list(poses)
    if len(timestamps) != len(poses):
        raise ValueError("timestamps and poses differ in length")
    lines = [",".join(POSE_HEADER)]
    for t, p in zip(timestamps, poses):
        lines.append(",".join([_fmt(t)] + [_fmt(x) for x in p.matrix()[:3].ravel()]))
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")


def read_poses_csv(path):
    """Returns ``(timestamps, poses)``."""
    if not os.path.exists(path):
        raise MissingFile(f"missing pose file {path}", path)
    with open(path) as f:
        rows = [ln.strip() for ln in f if ln.strip()]
    if rows and rows[0].split(",")[0] == "timestamp":
        rows = rows[1:]
    ts, poses = [], []
    for n, row in enumerate(rows, start=1):
        vals = row.split(",")
        if len(vals) != 13:
            raise ManifestError(f"{path}: row {n} has {len(vals)} fields, expected 13", path)
        try:
            nums = [float(v) for v in vals]
        except ValueError as exc:
            raise ManifestError(f"{path}: row {n} is not numeric", path) from exc
        m = np.eye(4)
        m[:3] = np.reshape(nums[1:], (3, 4))
        try:
            poses.append(RigidTransform.from_matrix(m))
        except ValueError as exc:
            raise ManifestError(f"{path}: row {n} is not a rigid transform ({exc})", path) from exc
        ts.append(nums[0])
    return ts, poses


# ---------------------------------------------------------------- datasets

@dataclass
class Dataset:
    lightfields: list
    intrinsics: Intrinsics
    timestamps: list
    gt_poses: list | None = None
    gt_invdepths: list | None = None      # central inverse depth per frame
    meta: dict = field(default_factory=dict)

    @property
    def baseline(self) -> float:
        return self.lightfields[0].baseline

    @property
    def arm_length(self) -> int:
        return self.lightfields[0].arm_length


def view_key(view) -> str:
    return f"{int(view[0])},{int(view[1])}"


def parse_view_key(key: str) -> ViewIndex:
    s, t = key.split(",")
    return ViewIndex(int(s), int(t))


def _view_file(view, ext):
    return f"view_{int(view[0]):+d}_{int(view[1]):+d}.{ext}"


def validate_dataset(ds: Dataset, image_format: str = "png16") -> None:
    if image_format not in IMAGE_FORMATS:
        raise ValueError(f"image_format must be one of {IMAGE_FORMATS}")
    if not ds.lightfields:
        raise ManifestError("dataset has no frames", "")
    first = ds.lightfields[0]
    for i, lf in enumerate(ds.lightfields):
        if lf.shape != first.shape or lf.arm_length != first.arm_length or lf.channels != first.channels:
            raise DimMismatch(f"frame {i} differs from frame 0 in size or layout", f"frame {i}")
    if image_format == "png16" and first.channels != 1:
        raise ValueError("png16 views must be grayscale; use pfm")
    if len(ds.timestamps) != len(ds.lightfields):
        raise DimMismatch("one timestamp per frame required", "timestamps")
    if ds.gt_poses is not None and len(ds.gt_poses) != len(ds.lightfields):
        raise DimMismatch("one ground-truth pose per frame required", "gt_poses")
    if ds.gt_invdepths is not None and len(ds.gt_invdepths) != len(ds.lightfields):
        raise DimMismatch("one ground-truth depth map per frame required", "gt_invdepths")


def save_dataset(path, ds: Dataset, image_format: str = "png16") -> str:
    """Write ``ds`` under directory ``path``; returns the manifest path."""
    validate_dataset(ds, image_format)
    ext = "png" if image_format == "png16" else "pfm"
    os.makedirs(path, exist_ok=True)
    first = ds.lightfields[0]
    frames = []
    for i, lf in enumerate(ds.lightfields):
        rel = os.path.join("frames", f"{i:06d}")
        os.makedirs(os.path.join(path, rel), exist_ok=True)
        views = {}
        for view in plus_pattern(lf.arm_length):
            name = os.path.join(rel, _view_file(view, ext))
            if image_format == "png16":
                write_png16(os.path.join(path, name), lf[view])
            else:
                write_pfm(os.path.join(path, name), lf[view])
            views[view_key(view)] = name
        entry = {"timestamp": float(ds.timestamps[i]), "views": views}
        if ds.gt_invdepths is not None:
            name = os.path.join(rel, "invdepth_gt.pfm")
            write_pfm(os.path.join(path, name), ds.gt_invdepths[i])
            entry["gt_invdepth"] = name
        frames.append(entry)
    k = ds.intrinsics
    manifest = {
        "version": MANIFEST_VERSION,
        "arm_length": first.arm_length,
        "baseline": first.baseline,
        "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy},
        "height": first.height,
        "width": first.width,
        "channels": first.channels,
        "image_format": image_format,
        "gt_poses": None,
        "frames": frames,
        "meta": ds.meta,
    }
    if ds.gt_poses is not None:
        manifest["gt_poses"] = "poses_gt.csv"
        write_poses_csv(os.path.join(path, "poses_gt.csv"), ds.timestamps, ds.gt_poses)
    out = os.path.join(path, MANIFEST_NAME)
    with open(out, "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    return out


def _require(manifest, key, mpath):
    if key not in manifest:
        raise ManifestError(f"{mpath}: missing key '{key}'", mpath)
    return manifest[key]


def load_dataset(path) -> Dataset:
    """Load a dataset directory (or its manifest file)."""
    mpath = path if os.path.isfile(path) else os.path.join(path, MANIFEST_NAME)
    if not os.path.exists(mpath):
        raise MissingFile(f"missing manifest {mpath}", mpath)
    root = os.path.dirname(mpath)
    try:
        with open(mpath) as f:
            manifest = json.load(f)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{mpath}: invalid JSON ({exc})", mpath) from exc
    version = _require(manifest, "version", mpath)
    if version != MANIFEST_VERSION:
        raise ManifestError(f"{mpath}: unsupported version {version}", mpath)
    arm = int(_require(manifest, "arm_length", mpath))
    baseline = float(_require(manifest, "baseline", mpath))
    kd = _require(manifest, "intrinsics", mpath)
    try:
        k = Intrinsics(float(kd["fx"]), float(kd["fy"]), float(kd["cx"]), float(kd["cy"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{mpath}: bad intrinsics ({exc})", mpath) from exc
    h, w = int(_require(manifest, "height", mpath)), int(_require(manifest, "width", mpath))
    fmt = _require(manifest, "image_format", mpath)
    if fmt not in IMAGE_FORMATS:
        raise ManifestError(f"{mpath}: unknown image_format {fmt!r}", mpath)
    reader = read_png16 if fmt == "png16" else read_pfm
    lfs, ts, invs = [], [], []
    expected = {view_key(v) for v in plus_pattern(arm)}
    for i, frame in enumerate(_require(manifest, "frames", mpath)):
        views_d = frame.get("views", {})
        missing = expected - set(views_d)
        if missing:
            raise ManifestError(f"{mpath}: frame {i} lists no file for views {sorted(missing)}", mpath)
        views = {}
        for key in sorted(expected):
            fpath = os.path.join(root, views_d[key])
            img = reader(fpath)
            if img.shape[:2] != (h, w):
                raise DimMismatch(f"{fpath}: size {img.shape[:2]} differs from manifest {(h, w)}", fpath)
            views[parse_view_key(key)] = img
        lfs.append(SparseLightField(views, baseline, arm))
        ts.append(float(frame.get("timestamp", i)))
        if "gt_invdepth" in frame:
            fpath = os.path.join(root, frame["gt_invdepth"])
            inv = read_pfm(fpath)
            if inv.shape != (h, w):
                raise DimMismatch(f"{fpath}: size {inv.shape} differs from manifest {(h, w)}", fpath)
            invs.append(inv)
    gt_poses = None
    if manifest.get("gt_poses"):
        ppath = os.path.join(root, manifest["gt_poses"])
        pts, gt_poses = read_poses_csv(ppath)
        if len(gt_poses) != len(lfs):
            raise DimMismatch(f"{ppath}: {len(gt_poses)} poses for {len(lfs)} frames", ppath)
    if invs and len(invs) != len(lfs):
        raise ManifestError(f"{mpath}: ground-truth depth given for only some frames", mpath)
    return Dataset(lfs, k, ts, gt_poses, invs or None, manifest.get("meta", {}))


def write_weights(path, weights) -> None:
    with open(path, "wb") as f:
        f.write(weights.to_bytes())


def read_weights(path):
    from .encodings import EpiEncoderWeights
    if not os.path.exists(path):
        raise MissingFile(f"missing weight file {path}", path)
    with open(path, "rb") as f:
        raw = f.read()
    try:
        return EpiEncoderWeights.from_bytes(raw)
    except ValueError as exc:
        raise ManifestError(f"{path}: {exc}", path) from exc
