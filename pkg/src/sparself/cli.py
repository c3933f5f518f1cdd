"""Command-line entry point: ``sparself <command> ...``.

Exit codes: 0 success, 1 a check failed (grad-check), 2 usage error,
3 invalid input or data.  Errors are reported as one JSON object on stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import dataset as dio
from . import synth
from .core import Intrinsics, RigidTransform, SubApertureLayout
from .errors import LightFieldError, ManifestError

ENCODINGS = ("volumetric", "focalstack-5", "focalstack-9", "epi")
PRESETS = ("plane", "dolly", "arc", "occlusion")


class CliError(Exception):
    def __init__(self, code, message, path=None):
        super().__init__(message)
        self.code = code
        self.path = path


def _load_json(path, what):
    if not os.path.exists(path):
        raise CliError("MissingFile", f"missing {what} {path}", path)
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise CliError("InvalidJSON", f"{what} {path}: {exc}", path) from exc


def _prepare_output(path):
    if not path:
        raise CliError("MissingOutput", "--output-dir is required")
    os.makedirs(path, exist_ok=True)
    return path


def _write_text(path, text):
    with open(path, "w", newline="") as f:
        f.write(text)


# ---------------------------------------------------------------- render

def _scene_from_json(spec: dict, seed: int):
    planes = []
    for i, p in enumerate(spec.get("planes", [])):
        depth = float(p["depth"])
        tex = synth.random_texture(tuple(p.get("texture_shape", (128, 128))), int(p.get("seed", seed + i)))
        pitch = p.get("pitch")
        planes.append(synth.Plane(depth, tex, synth.TEXEL_ANGLE * depth if pitch is None else float(pitch),
                                  bool(p.get("finite", False)), tuple(p.get("center", (0.0, 0.0)))))
    if not planes:
        raise CliError("InvalidScene", "scene has no planes")
    return synth.PlanarScene(tuple(sorted(planes, key=lambda q: q.depth)), seed)


def _camera_from_json(spec: dict):
    shape = (int(spec.get("height", synth.DEFAULT_SHAPE[0])), int(spec.get("width", synth.DEFAULT_SHAPE[1])))
    kd = spec.get("intrinsics")
    if kd is None:
        k = synth.DEFAULT_INTRINSICS if shape == synth.DEFAULT_SHAPE else Intrinsics(
            200.0, 200.0, (shape[1] - 1) / 2, (shape[0] - 1) / 2)
    else:
        k = Intrinsics(float(kd["fx"]), float(kd["fy"]), float(kd["cx"]), float(kd["cy"]))
    layout = synth.default_layout(int(spec.get("arm_length", 4)), float(spec.get("baseline", synth.SYNTHETIC_BASELINE)))
    return shape, k, layout


def cmd_render(args):
    spec = {} if args.scene is None else _load_json(args.scene, "scene spec")
    shape, k, layout = _camera_from_json(spec)
    if args.scene is not None:
        scene = _scene_from_json(spec, args.seed)
        if args.poses is None:
            raise CliError("MissingPoses", "--poses is required with --scene")
        timestamps, poses = dio.read_poses_csv(args.poses)
    else:
        preset = args.preset or "plane"
        if preset == "occlusion":
            scene = synth.occlusion_scene(seed=args.seed)
        else:
            scene = synth.plane_scene(args.depth, seed=args.seed)
        if args.poses is not None:
            timestamps, poses = dio.read_poses_csv(args.poses)
        elif preset == "dolly":
            poses = synth.dolly_poses(args.frames, args.step if args.step is not None else 0.005)
            timestamps = [float(i) for i in range(len(poses))]
        elif preset == "arc":
            poses = synth.arc_poses(args.frames, args.step if args.step is not None else 0.5, args.depth)
            timestamps = [float(i) for i in range(len(poses))]
        else:
            poses = [RigidTransform.identity()] * max(args.frames, 1)
            timestamps = [float(i) for i in range(len(poses))]
    seq = synth.render_trajectory(scene, k, layout, poses, shape, timestamps)
    lfs = seq.lightfields
    if args.format == "png16":
        lfs = [lf.map(dio.quantize16) for lf in lfs]
    ds = dio.Dataset(lfs, k, list(timestamps), list(poses), seq.central_invdepths,
                     {"seed": args.seed, "preset": args.preset if args.scene is None else None,
                      "depths": [p.depth for p in scene.planes]})
    dio.validate_dataset(ds, args.format)
    out = _prepare_output(args.output_dir)
    dio.save_dataset(out, ds, args.format)
    return {"frames": len(lfs), "output": out}


# ---------------------------------------------------------------- encode

def _preview(path, stack: np.ndarray):
    """Channels side by side, each min-max normalised, as a 16-bit PNG."""
    tiles = []
    for ch in stack:
        lo, hi = float(ch.min()), float(ch.max())
        tiles.append((ch - lo) / (hi - lo) if hi > lo else np.zeros_like(ch))
    dio.write_png16(path, np.concatenate(tiles, axis=1))


def cmd_encode(args):
    from . import encodings as enc
    ds = dio.load_dataset(args.dataset)
    frames = range(len(ds.lightfields)) if args.frame is None else [args.frame]
    for i in frames:
        if not 0 <= i < len(ds.lightfields):
            raise CliError("BadFrame", f"frame {i} out of range 0..{len(ds.lightfields) - 1}")
    weights = None
    if args.encoding == "epi":
        n = ds.lightfields[0].n_per_arm
        weights = dio.read_weights(args.weights) if args.weights else enc.EpiEncoderWeights.random(
            n, args.c_out, seed=args.seed)
        if weights.n != n:
            raise CliError("DimensionMismatch", f"weights are for N={weights.n}, dataset has N={n}", args.weights)
    results = {}
    for i in frames:
        lf = ds.lightfields[i]
        if args.encoding == "volumetric":
            results[i] = {"stack": enc.volumetric_stack(lf).data}
        elif args.encoding.startswith("focalstack"):
            disp = enc.FOCALSTACK_5 if args.encoding.endswith("5") else enc.FOCALSTACK_9
            results[i] = {"stack": enc.focal_stack(lf, disp).data}
        else:
            tall, wide = enc.tiled_epi_stacks(lf)
            results[i] = {"stack": enc.encode_epi_stack(lf, weights).data, "tall": tall.data, "wide": wide.data}
    out = _prepare_output(args.output_dir)
    summary = {"encoding": args.encoding, "frames": {}}
    for i, arrays in results.items():
        for name, arr in arrays.items():
            base = os.path.join(out, f"{name}_{i:06d}")
            np.save(base + ".npy", arr)
            _preview(base + ".png", arr)
        summary["frames"][str(i)] = {name: list(arr.shape) for name, arr in arrays.items()}
    if weights is not None:
        dio.write_weights(os.path.join(out, "encoder_weights.bin"), weights)
    _write_text(os.path.join(out, "encode.json"), json.dumps(summary, indent=2) + "\n")
    return summary


# ---------------------------------------------------------------- estimate

def _config(args):
    from .estimator import EstimatorConfig
    data = {} if args.config is None else _load_json(args.config, "config")
    if not isinstance(data, dict):
        raise CliError("InvalidConfig", "config must be a JSON object", args.config)
    if getattr(args, "mode", None):
        data["mode"] = args.mode
    data["threads"] = args.threads
    data["seed"] = args.seed
    return EstimatorConfig.from_dict(data)


def cmd_estimate(args):
    from .estimator import estimate_trajectory
    config = _config(args)
    ds = dio.load_dataset(args.dataset)
    if len(ds.lightfields) < 2:
        raise CliError("TooFewFrames", "estimation needs at least two frames", args.dataset)
    layout = SubApertureLayout.for_lightfield(ds.lightfields[0])
    traj = estimate_trajectory(ds.lightfields, ds.intrinsics, layout, config)
    out = _prepare_output(args.output_dir)
    dio.write_poses_csv(os.path.join(out, "poses.csv"), ds.timestamps, traj.poses)
    os.makedirs(os.path.join(out, "invdepth"), exist_ok=True)
    lines = ["pair,iteration,best_loss"]
    for i, res in enumerate(traj.relative):
        dio.write_pfm(os.path.join(out, "invdepth", f"frame_{i + 1:06d}.pfm"), res.invdepth)
        lines += [f"{i},{j},{format(v, '.17g')}" for j, v in enumerate(res.loss_trace)]
    _write_text(os.path.join(out, "loss_trace.csv"), "\n".join(lines) + "\n")
    summary = {"config": config.to_dict(), "pairs": [
        {"pair": i, "final_loss": r.final_loss, "converged": r.converged} for i, r in enumerate(traj.relative)]}
    _write_text(os.path.join(out, "estimate.json"), json.dumps(summary, indent=2) + "\n")
    return {"pairs": len(traj.relative), "output": out}


# ---------------------------------------------------------------- evaluation

def cmd_eval_rpe(args):
    from .evaluation import Trajectory, rpe, rpe_aggregate
    files = args.files
    if len(files) % 2:
        raise CliError("BadArguments", "eval-rpe takes ESTIMATED REFERENCE pairs")
    reports = []
    for est_path, ref_path in zip(files[::2], files[1::2]):
        te, pe = dio.read_poses_csv(est_path)
        tr, pr = dio.read_poses_csv(ref_path)
        reports.append(rpe(Trajectory(te, pe), Trajectory(tr, pr)))
    out = _prepare_output(args.output_dir)
    for i, rep in enumerate(reports):
        name = "rpe.csv" if len(reports) == 1 else f"rpe_{i}.csv"
        _write_text(os.path.join(out, name), rep.to_csv())
    summary = reports[0].summary() if len(reports) == 1 else rpe_aggregate(reports)
    _write_text(os.path.join(out, "rpe.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def cmd_eval_depth(args):
    from .evaluation import depth_table_csv, interior_mask, overall_rmse, planar_depth_stats
    ds = dio.load_dataset(args.dataset)
    if ds.gt_invdepths is None:
        raise CliError("MissingGroundTruth", "dataset has no ground-truth depth", args.dataset)
    pred_dir = os.path.join(args.estimate, "invdepth")
    rows = []
    for i in range(1, len(ds.lightfields)):
        path = os.path.join(pred_dir, f"frame_{i:06d}.pfm")
        pred = dio.read_pfm(path)
        gt = ds.gt_invdepths[i]
        if pred.shape != gt.shape:
            raise CliError("DimMismatch", f"{path}: {pred.shape} vs ground truth {gt.shape}", path)
        mask = interior_mask(gt.shape, args.margin)
        true_depth = float(np.mean(1.0 / gt[mask]))
        rows.append((true_depth, planar_depth_stats(pred, mask, true_depth)))
    out = _prepare_output(args.output_dir)
    _write_text(os.path.join(out, "depth.csv"), depth_table_csv(rows))
    summary = {"overall_rmse_m": overall_rmse(s for _, s in rows), "frames": len(rows)}
    _write_text(os.path.join(out, "depth.json"), json.dumps(summary, indent=2) + "\n")
    return summary


def cmd_grad_check(args):
    from .gradcheck import run_suites
    results = run_suites(args.scenes, args.seed)
    report = {"passed": all(r.passed for r in results), "checks": [r.as_dict() for r in results]}
    if args.output_dir:
        out = _prepare_output(args.output_dir)
        _write_text(os.path.join(out, "gradcheck.json"), json.dumps(report, indent=2) + "\n")
    if not report["passed"]:
        failed = [r.name for r in results if not r.passed]
        raise CliError("GradientCheckFailed", f"failed checks: {failed}")
    return report


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--output-dir")
    common.add_argument("--config", help="estimator config JSON")

    p = argparse.ArgumentParser(prog="sparself", description="Sparse light-field encodings and direct odometry.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", parents=[common], help="render a synthetic dataset")
    r.add_argument("--scene", help="scene JSON")
    r.add_argument("--poses", help="poses CSV (timestamp + 3x4 camera-to-world)")
    r.add_argument("--preset", choices=PRESETS)
    r.add_argument("--depth", type=float, default=0.5)
    r.add_argument("--frames", type=int, default=10)
    r.add_argument("--step", type=float, help="metres per frame (dolly) or degrees (arc)")
    r.add_argument("--format", choices=dio.IMAGE_FORMATS, default="png16")
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("encode", parents=[common], help="encode a dataset")
    e.add_argument("dataset")
    e.add_argument("--encoding", choices=ENCODINGS, required=True)
    e.add_argument("--frame", type=int)
    e.add_argument("--weights", help="encoder weight file (epi only)")
    e.add_argument("--c-out", type=int, default=8)
    e.set_defaults(func=cmd_encode)

    s = sub.add_parser("estimate", parents=[common], help="estimate poses and depth")
    s.add_argument("dataset")
    s.add_argument("--mode", choices=("single", "multi"))
    s.set_defaults(func=cmd_estimate)

    v = sub.add_parser("eval-rpe", parents=[common], help="relative pose error")
    v.add_argument("files", nargs="+", metavar="CSV", help="ESTIMATED REFERENCE [ESTIMATED REFERENCE ...]")
    v.set_defaults(func=cmd_eval_rpe)

    d = sub.add_parser("eval-depth", parents=[common], help="planar depth table")
    d.add_argument("estimate", help="output directory of 'estimate'")
    d.add_argument("--dataset", required=True)
    d.add_argument("--margin", type=int, default=16)
    d.set_defaults(func=cmd_eval_depth)

    g = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient suites")
    g.add_argument("--scenes", type=int, default=5)
    g.set_defaults(func=cmd_grad_check)
    return p


def _fail(code, message, path=None, status=3) -> int:
    err = {"error": code, "message": message}
    if path:
        err["path"] = str(path)
    sys.stderr.write(json.dumps(err) + "\n")
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        return _fail("BadArguments", "--threads must be >= 1", status=2)
    try:
        result = args.func(args)
    except CliError as exc:
        return _fail(exc.code, str(exc), exc.path, 1 if exc.code == "GradientCheckFailed" else 3)
    except ManifestError as exc:
        return _fail(exc.code, str(exc), exc.path)
    except LightFieldError as exc:
        return _fail(exc.code, str(exc))
    except (ValueError, KeyError, TypeError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc), getattr(exc, "filename", None))
    sys.stdout.write(json.dumps(result, indent=2, sort_keys=True, default=str) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
