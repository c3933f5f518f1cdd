import json
import math

import numpy as np
import pytest

from conftest import random_transform
from sparself.core import RigidTransform, se3_exp
from sparself.errors import EmptyMask, LengthMismatch
from sparself.evaluation import (
    RPE_CSV_HEADER,
    DepthStats,
    Trajectory,
    depth_table_csv,
    interior_mask,
    overall_rmse,
    planar_depth_stats,
    rotation_angle_deg,
    rpe,
    rpe_aggregate,
)


def _rz(deg):
    a = math.radians(deg)
    m = np.eye(4)
    m[:2, :2] = [[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]]
    return m


def _traj(mats):
    return Trajectory(tuple(range(len(mats))), tuple(RigidTransform.from_matrix(m) for m in mats))


class TestTrajectory:
    def test_validation(self):
        with pytest.raises(LengthMismatch):
            Trajectory((0.0, 1.0), (RigidTransform.identity(),))
        with pytest.raises(ValueError):
            Trajectory((0.0, 0.0), (RigidTransform.identity(),) * 2)

    def test_relative_round_trip(self):
        rng = np.random.default_rng(0)
        rel = [random_transform(rng, 0.1) for _ in range(4)]
        t = Trajectory.from_relative(rel)
        for a, b in zip(t.relative(), rel):
            assert a.allclose(b, 1e-12)


class TestRpe:
    def test_identical(self):
        rng = np.random.default_rng(1)
        t = Trajectory.from_relative([random_transform(rng, 0.1) for _ in range(5)])
        rep = rpe(t, t)
        assert np.all(rep.trans_errors < 1e-15) and np.all(rep.rot_errors < 1e-5)

    def test_static_reference(self):
        ref = Trajectory.from_relative([RigidTransform.identity()] * 4)
        est = Trajectory.from_relative([RigidTransform.from_translation(0.01, 0, 0)] * 4)
        rep = rpe(est, ref)
        np.testing.assert_allclose(rep.trans_errors, 0.01, rtol=1e-12)
        assert np.all(rep.rot_errors == 0.0)
        assert rep.translation["mean"] == pytest.approx(0.01) and rep.translation["std"] == pytest.approx(0.0)

    def test_matrix_oracle(self):
        p = [np.eye(4), _rz(10.0), _rz(25.0)]
        p[1][:3, 3] = [0.1, 0.0, 0.0]
        p[2][:3, 3] = [0.15, 0.02, -0.01]
        q = [np.eye(4), _rz(12.0), _rz(20.0)]
        q[1][:3, 3] = [0.09, 0.01, 0.0]
        q[2][:3, 3] = [0.16, 0.0, 0.0]
        rep = rpe(_traj(p), _traj(q))
        for i in range(2):
            e = np.linalg.inv(np.linalg.inv(q[i]) @ q[i + 1]) @ (np.linalg.inv(p[i]) @ p[i + 1])
            assert rep.trans_errors[i] == pytest.approx(np.linalg.norm(e[:3, 3]), abs=1e-12)
            c = np.clip((np.trace(e[:3, :3]) - 1) / 2, -1, 1)
            assert rep.rot_errors[i] == pytest.approx(math.degrees(math.acos(c)), abs=1e-12)
        # z-rotation increments: 10 vs 12, then 15 vs 8 degrees
        assert rep.rot_errors == pytest.approx([2.0, 7.0], abs=1e-6)

    def test_left_invariance(self):
        rng = np.random.default_rng(2)
        est = Trajectory.from_relative([random_transform(rng, 0.05) for _ in range(5)])
        ref = Trajectory.from_relative([random_transform(rng, 0.05) for _ in range(5)])
        g = random_transform(rng, 3.0)
        a, b = rpe(est, ref), rpe(est.left_transformed(g), ref.left_transformed(g))
        np.testing.assert_allclose(a.trans_errors, b.trans_errors, atol=1e-9)
        np.testing.assert_allclose(a.rot_errors, b.rot_errors, atol=1e-9)

    def test_symmetric_translation(self):
        rng = np.random.default_rng(3)
        est = Trajectory.from_relative([random_transform(rng, 0.05) for _ in range(4)])
        ref = Trajectory.from_relative([random_transform(rng, 0.05) for _ in range(4)])
        np.testing.assert_allclose(rpe(est, ref).trans_errors, rpe(ref, est).trans_errors, rtol=1e-9)

    def test_length_mismatch(self):
        a = Trajectory.from_relative([RigidTransform.identity()] * 3)
        b = Trajectory.from_relative([RigidTransform.identity()] * 2)
        with pytest.raises(LengthMismatch):
            rpe(a, b)
        with pytest.raises(LengthMismatch):
            one = Trajectory((0.0,), (RigidTransform.identity(),))
            rpe(one, one)

    def test_report_stats_and_csv(self):
        ref = Trajectory.from_relative([RigidTransform.identity()] * 3)
        est = Trajectory.from_relative([RigidTransform.from_translation(0.01, 0, 0),
                                        RigidTransform.from_translation(0.03, 0, 0)] * 1 +
                                       [RigidTransform.identity()])
        rep = rpe(est, ref)
        x = rep.trans_errors
        assert rep.translation["std"] == pytest.approx(np.sqrt(np.mean((x - x.mean()) ** 2)), abs=1e-9)
        assert rep.translation["rmse"] == pytest.approx(np.sqrt(np.mean(x ** 2)))
        lines = rep.to_csv().splitlines()
        assert lines[0] == ",".join(RPE_CSV_HEADER) and len(lines) == 4
        assert float(lines[2].split(",")[3]) == x[1]
        assert json.loads(rep.to_json())["pairs"] == 3

    def test_aggregate(self):
        ref = Trajectory.from_relative([RigidTransform.identity()] * 2)
        a = rpe(Trajectory.from_relative([RigidTransform.from_translation(0.01, 0, 0)] * 2), ref)
        ref3 = Trajectory.from_relative([RigidTransform.identity()] * 1)
        b = rpe(Trajectory.from_relative([RigidTransform.from_translation(0.04, 0, 0)]), ref3)
        agg = rpe_aggregate([a, b])
        assert agg["joint"]["pairs"] == 3
        assert agg["joint"]["translation_m"]["mean"] == pytest.approx(0.02)
        assert agg["per_trajectory"]["translation_m"]["mean"] == pytest.approx(0.025)
        with pytest.raises(ValueError):
            rpe_aggregate([])


@pytest.mark.parametrize("deg", [1e-4, 0.5, 3.0, 90.0, 179.0])
def test_rotation_angle_accuracy(deg):
    a = math.radians(deg)
    r = np.array([[1.0, 0.0, 0.0], [0.0, math.cos(a), -math.sin(a)], [0.0, math.sin(a), math.cos(a)]])
    assert rotation_angle_deg(r) == pytest.approx(deg, rel=1e-13)


def test_rotation_angle_clamped():
    assert rotation_angle_deg(np.eye(3) * (1 + 1e-15)) == 0.0
    assert rotation_angle_deg(np.diag([-1.0, -1.0, 1.0])) == pytest.approx(180.0)


class TestDepth:
    def test_constant(self):
        s = planar_depth_stats(np.full((4, 5), 2.0), None, 0.5)
        assert (s.mean, s.std, s.rmse, s.count) == (0.5, 0.0, 0.0, 20)

    def test_two_depths(self):
        inv = np.array([[1 / 0.4, 1 / 0.6]])
        s = planar_depth_stats(inv, np.ones((1, 2), bool), 0.5)
        assert s.rmse == pytest.approx(0.1, abs=1e-15)
        assert s.mean == pytest.approx(0.5)

    def test_mask_order_invariant(self):
        rng = np.random.default_rng(4)
        inv = rng.uniform(1.5, 2.5, (6, 7))
        mask = rng.random((6, 7)) > 0.4
        perm = rng.permutation(inv.size)
        a = planar_depth_stats(inv, mask, 0.5)
        b = planar_depth_stats(inv.ravel()[perm][None], mask.ravel()[perm][None], 0.5)
        assert a.rmse == pytest.approx(b.rmse, rel=1e-12) and a.mean == pytest.approx(b.mean, rel=1e-12)

    def test_empty(self):
        with pytest.raises(EmptyMask):
            planar_depth_stats(np.ones((2, 2)), np.zeros((2, 2), bool), 1.0)
        with pytest.raises(EmptyMask):
            overall_rmse([])

    def test_overall_pooled(self):
        a = DepthStats(0, 0, 0, 3, 3 * 0.01)
        b = DepthStats(0, 0, 0, 1, 1 * 0.09)
        assert overall_rmse([a, b]) == pytest.approx(math.sqrt(0.12 / 4))

    def test_interior_mask_and_table(self):
        m = interior_mask((10, 12), 3)
        assert m.sum() == 4 * 6
        csv = depth_table_csv([(0.5, planar_depth_stats(np.full((2, 2), 2.0), None, 0.5))])
        assert csv.splitlines()[1].startswith("0.5,0.5,0.0,0.0,4")
