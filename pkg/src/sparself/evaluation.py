"""Frame-to-frame relative pose error and planar depth statistics."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .core import RigidTransform
from .errors import EmptyMask, LengthMismatch

RPE_CSV_HEADER = ("pair", "t_from", "t_to", "trans_err_m", "rot_err_deg")


@dataclass(frozen=True)
class Trajectory:
    timestamps: tuple
    poses: tuple             # camera-to-world

    def __post_init__(self):
        ts = tuple(float(t) for t in self.timestamps)
        poses = tuple(self.poses)
        if len(ts) != len(poses):
            raise LengthMismatch(f"{len(ts)} timestamps for {len(poses)} poses")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("timestamps must be strictly increasing")
        if not all(isinstance(p, RigidTransform) for p in poses):
            raise TypeError("poses must be RigidTransform instances")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "poses", poses)

    def __len__(self):
        return len(self.poses)

    @classmethod
    def from_relative(cls, relative, timestamps=None, start: RigidTransform | None = None):
        poses = [start or RigidTransform.identity()]
        for t in relative:
            poses.append(poses[-1] @ t)
        if timestamps is None:
            timestamps = range(len(poses))
        return cls(tuple(timestamps), tuple(poses))

    def relative(self) -> list:
        return [a.inverse() @ b for a, b in zip(self.poses, self.poses[1:])]

    def left_transformed(self, g: RigidTransform) -> "Trajectory":
        return Trajectory(self.timestamps, tuple(g @ p for p in self.poses))


def _summary(x: np.ndarray) -> dict:
    return {"mean": float(x.mean()), "std": float(x.std()), "rmse": float(np.sqrt(np.mean(x * x)))}


@dataclass(frozen=True)
class RpeReport:
    trans_errors: np.ndarray    # metres, one per consecutive pair
    rot_errors: np.ndarray      # degrees
    timestamps: tuple = ()

    @property
    def translation(self) -> dict:
        return _summary(self.trans_errors)

    @property
    def rotation(self) -> dict:
        return _summary(self.rot_errors)

    def summary(self) -> dict:
        return {"pairs": int(self.trans_errors.size), "translation_m": self.translation,
                "rotation_deg": self.rotation}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RPE_CSV_HEADER)
        ts = self.timestamps or tuple(float(i) for i in range(self.trans_errors.size + 1))
        for i, (te, re) in enumerate(zip(self.trans_errors, self.rot_errors)):
            w.writerow([i, repr(float(ts[i])), repr(float(ts[i + 1])), repr(float(te)), repr(float(re))])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def rotation_angle_deg(r) -> float:
    """Angle of a rotation matrix in degrees.

    ``cos`` comes from the trace and ``sin`` from the skew part; ``atan2`` of
    the pair keeps full precision at small angles, where ``acos`` of the
    clamped trace term loses about half the digits.
    """
    r = np.asarray(r, dtype=np.float64)
    c = (np.trace(r) - 1.0) / 2.0
    s = 0.5 * math.sqrt((r[2, 1] - r[1, 2]) ** 2 + (r[0, 2] - r[2, 0]) ** 2 + (r[1, 0] - r[0, 1]) ** 2)
    return math.degrees(math.atan2(s, c))


def rpe(estimated: Trajectory, reference: Trajectory) -> RpeReport:
    """``E_i = (Q_i^-1 Q_{i+1})^-1 (P_i^-1 P_{i+1})`` for consecutive frames.

    ``P`` is the estimate, ``Q`` the reference; translation error is
    ``|trans(E_i)|``, rotation error the angle of ``rot(E_i)`` in degrees.
    """
    if len(estimated) != len(reference):
        raise LengthMismatch(f"{len(estimated)} estimated vs {len(reference)} reference poses")
    if len(estimated) < 2:
        raise LengthMismatch("need at least two poses")
    te, re = [], []
    for p_rel, q_rel in zip(estimated.relative(), reference.relative()):
        e = q_rel.inverse() @ p_rel
        te.append(float(np.linalg.norm(e.translation)))
        re.append(rotation_angle_deg(e.rotation))
    return RpeReport(np.array(te), np.array(re), estimated.timestamps)


def rpe_aggregate(reports) -> dict:
    """Both aggregations over several trajectories.

    ``joint`` pools every pair; ``per_trajectory`` averages each
    trajectory's statistics.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("no reports")
    te = np.concatenate([r.trans_errors for r in reports])
    re = np.concatenate([r.rot_errors for r in reports])
    per = {}
    for key in ("translation_m", "rotation_deg"):
        stats = [r.summary()[key] for r in reports]
        per[key] = {s: float(np.mean([d[s] for d in stats])) for s in ("mean", "std", "rmse")}
    return {"joint": {"pairs": int(te.size), "translation_m": _summary(te), "rotation_deg": _summary(re)},
            "per_trajectory": dict(per, trajectories=len(reports))}


@dataclass(frozen=True)
class DepthStats:
    mean: float
    std: float
    rmse: float
    count: int
    sq_error_sum: float

    def as_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "rmse": self.rmse, "count": self.count}


def planar_depth_stats(invdepth, plane_mask, true_depth: float) -> DepthStats:
    """Mean, population std and RMSE of ``1 / invdepth`` over ``plane_mask``."""
    rho = np.asarray(invdepth, dtype=np.float64)
    mask = np.ones(rho.shape, dtype=bool) if plane_mask is None else np.asarray(plane_mask, dtype=bool)
    if mask.shape != rho.shape:
        raise ValueError(f"mask {mask.shape} vs map {rho.shape}")
    d = 1.0 / rho[mask]
    if d.size == 0:
        raise EmptyMask("plane mask is empty")
    sq = float(np.sum((d - true_depth) ** 2))
    return DepthStats(float(d.mean()), float(d.std()), math.sqrt(sq / d.size), int(d.size), sq)


def overall_rmse(stats) -> float:
    """RMSE pooled over every masked pixel of every distance."""
    stats = list(stats)
    n = sum(s.count for s in stats)
    if n == 0:
        raise EmptyMask("no pixels")
    return math.sqrt(sum(s.sq_error_sum for s in stats) / n)


def interior_mask(shape, margin: int) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    m[margin:shape[0] - margin, margin:shape[1] - margin] = True
    return m


def depth_table_csv(rows) -> str:
    """``rows``: iterable of ``(distance, DepthStats)``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("distance_m", "mean_m", "std_m", "rmse_m", "pixels"))
    for dist, s in rows:
        w.writerow([repr(float(dist)), repr(s.mean), repr(s.std), repr(s.rmse), s.count])
    return buf.getvalue()
