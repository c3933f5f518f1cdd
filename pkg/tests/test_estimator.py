import math

import numpy as np
import pytest

from sparself.core import CENTER, FIVE_VIEWS, RigidTransform, SparseLightField, plus_pattern, se3_exp
from sparself.errors import EmptyGradient, IndivisibleDims, MissingView
from sparself.estimator import (
    EstimatorConfig,
    build_pyramid,
    estimate_pair,
    estimate_trajectory,
    normalized_regularizer,
)
from sparself.evaluation import rotation_angle_deg
from sparself.losses import total_loss, warp_photometric
from sparself.synth import default_layout, plane_scene, render_trajectory


@pytest.fixture(scope="module")
def multi_dolly(dolly_pair, camera):
    k, layout = camera
    return estimate_pair(*dolly_pair.lightfields, k, layout, EstimatorConfig())


class TestPyramid:
    def test_levels(self, dolly_pair):
        lf = dolly_pair.lightfields[0]
        pyr = build_pyramid(lf, 4)
        assert [p.shape for p in pyr] == [(160, 224), (80, 112), (40, 56), (20, 28)]
        assert build_pyramid(lf, 1)[0] is lf

    def test_constant(self):
        lf = SparseLightField({v: np.full((16, 24), 0.3) for v in plus_pattern(1)}, 0.01)
        for level in build_pyramid(lf, 3):
            for img in level.views.values():
                np.testing.assert_allclose(img, 0.3, atol=1e-15)

    def test_indivisible(self):
        lf = SparseLightField({CENTER: np.zeros((12, 20))}, 0.01)
        with pytest.raises(IndivisibleDims):
            build_pyramid(lf, 4)


class TestConfig:
    def test_defaults(self):
        cfg = EstimatorConfig()
        assert cfg.view_set == tuple(tuple(v) for v in FIVE_VIEWS)
        assert (cfg.beta1, cfg.beta2, cfg.regularizer_weight) == (0.9, 0.999, 0.3)
        assert cfg.init_invdepth == pytest.approx(1 / 0.55)

    def test_single_forces_center(self):
        assert EstimatorConfig(mode="single").view_set == ((0, 0),)

    @pytest.mark.parametrize("kw", [dict(view_set=((0, 0),)), dict(mode="both"), dict(pyramid_levels=0),
                                    dict(iterations=(1, 2)), dict(lr_pose=0.0), dict(beta1=1.0),
                                    dict(anchor="left"), dict(switch_fraction=1.5)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            EstimatorConfig(**kw)

    def test_dict_round_trip(self):
        cfg = EstimatorConfig(mode="single", iterations=5, pyramid_levels=2)
        assert cfg.iterations == (5, 5)
        assert EstimatorConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ValueError):
            EstimatorConfig.from_dict({"bogus": 1})


class TestPair:
    @pytest.mark.parametrize("cfg", [EstimatorConfig(mode="single"), EstimatorConfig(anchor="view")])
    def test_identical_frames(self, dolly_pair, camera, cfg):
        k, layout = camera
        lf = dolly_pair.lightfields[0]
        res = estimate_pair(lf, lf, k, layout, cfg, init_invdepth=dolly_pair.central_invdepths[0])
        assert res.pose.allclose(RigidTransform.identity(), atol=1e-12)
        assert res.final_loss < 1e-6

    def test_textureless(self, camera):
        k, layout = camera
        lf = SparseLightField({v: np.full((160, 224), 0.5) for v in plus_pattern(4)}, 0.01)
        with pytest.raises(EmptyGradient):
            estimate_pair(lf, lf, k, layout)

    def test_missing_view(self, camera):
        k, layout = camera
        lf = SparseLightField({CENTER: np.random.default_rng(0).random((160, 224))}, 0.01)
        with pytest.raises(MissingView):
            estimate_pair(lf, lf, k, layout)

    def test_shape_mismatch(self, dolly_pair, camera):
        k, layout = camera
        small = dolly_pair.lightfields[0].map(lambda a: a[:80, :112])
        with pytest.raises(ValueError):
            estimate_pair(dolly_pair.lightfields[0], small, k, layout)

    def test_dolly_metric(self, multi_dolly, dolly_pair):
        t = multi_dolly.pose.translation
        assert abs(np.linalg.norm(t) - 0.005) < 0.05 * 0.005
        depth = 1.0 / multi_dolly.invdepth
        assert abs(depth.mean() - 0.5) < 0.05 * 0.5
        assert 0.95 <= np.median(depth / 0.5) <= 1.05

    def test_trace(self, multi_dolly):
        tr = np.asarray(multi_dolly.loss_trace)
        assert len(tr) == 120
        assert np.all(np.diff(tr) <= 0)
        assert multi_dolly.final_loss <= tr[0] + 1e-12
        assert multi_dolly.final_loss == tr[-1]

    def test_deterministic(self, dolly_pair, camera):
        k, layout = camera
        cfg = EstimatorConfig(iterations=(10, 10, 10, 10))
        a = estimate_pair(*dolly_pair.lightfields, k, layout, cfg)
        b = estimate_pair(*dolly_pair.lightfields, k, layout, cfg)
        assert np.array_equal(a.pose.matrix(), b.pose.matrix())
        assert np.array_equal(a.invdepth, b.invdepth)
        assert a.loss_trace == b.loss_trace

    def test_swap_gives_inverse(self, general_pair, camera):
        k, layout = camera
        prev, cur = general_pair.lightfields
        fwd = estimate_pair(prev, cur, k, layout)
        bwd = estimate_pair(cur, prev, k, layout)
        e = fwd.pose @ bwd.pose
        assert np.linalg.norm(e.translation) < 1e-3
        assert rotation_angle_deg(e.rotation) < 0.1

    def test_single_warp_gauge_orbit(self, dolly_pair, camera):
        k, layout = camera
        cfg = EstimatorConfig(mode="single")
        near = estimate_pair(*dolly_pair.lightfields, k, layout, cfg, init_invdepth=1 / 0.5)
        far = estimate_pair(*dolly_pair.lightfields, k, layout, cfg, init_invdepth=1 / 1.0)
        ratio_t = np.linalg.norm(far.pose.translation) / np.linalg.norm(near.pose.translation)
        ratio_d = np.median(near.invdepth / far.invdepth)
        assert ratio_t == pytest.approx(ratio_d, rel=0.05)
        assert ratio_d == pytest.approx(2.0, rel=0.1)
        assert far.final_loss == pytest.approx(near.final_loss, rel=0.1, abs=2e-4)


def test_single_warp_objective_gauge(general_pair, camera):
    k, layout = camera
    prev, cur = general_pair.lightfields
    pose = general_pair.relative_poses[0]
    rho = general_pair.central_invdepths[1] * (1 + 0.05 * np.random.default_rng(0).random((160, 224)))
    base = total_loss(warp_photometric(prev, cur, k, layout, pose, rho), normalized_regularizer(rho, 0, 10)).value
    for alpha in (0.5, 2.0):
        scaled = RigidTransform(pose.rotation, alpha * pose.translation)
        val = total_loss(warp_photometric(prev, cur, k, layout, scaled, rho / alpha),
                         normalized_regularizer(rho / alpha, 0, 10)).value
        assert abs(val - base) < 1e-9


@pytest.mark.parametrize("it", [0, 10])
def test_normalized_regularizer_gradient(it):
    rng = np.random.default_rng(1)
    x = 2.0 + 0.2 * rng.random((16, 16))
    g = normalized_regularizer(x, it, 5).grad_invdepth
    step = 1e-7
    floor = 1e-6 * np.abs(g).max()
    for idx in rng.choice(x.size, 30, replace=False):
        r, c = divmod(int(idx), 16)
        up, dn = x.copy(), x.copy()
        up[r, c] += step
        dn[r, c] -= step
        fd = (normalized_regularizer(up, it, 5).value - normalized_regularizer(dn, it, 5).value) / (2 * step)
        den = max(abs(fd), abs(g[r, c]))
        assert den < floor or abs(fd - g[r, c]) / den < 1e-3


class TestTrajectory:
    def test_static(self, camera):
        k, layout = camera
        seq = render_trajectory(plane_scene(0.6, seed=5), k, layout, [RigidTransform.identity()] * 3)
        est = estimate_trajectory(seq.lightfields, k, layout)
        for t in est.relative_poses:
            assert np.linalg.norm(t.translation) < 1e-4
            assert rotation_angle_deg(t.rotation) < 0.01
        assert len(est.poses) == 3

    def test_chaining(self, camera):
        k, layout = camera
        poses = [RigidTransform.from_translation(0.004 * i, 0.0, 0.0) for i in range(3)]
        seq = render_trajectory(plane_scene(0.5, seed=8), k, layout, poses)
        est = estimate_trajectory(seq.lightfields, k, layout)
        np.testing.assert_allclose(est.poses[2].matrix(), (est.poses[1] @ est.relative_poses[1]).matrix(),
                                   atol=1e-15)
        assert est.poses[2].translation[0] == pytest.approx(0.008, rel=0.05)

    def test_too_short(self, dolly_pair, camera):
        with pytest.raises(ValueError):
            estimate_trajectory(dolly_pair.lightfields[:1], *camera)

    def test_error_names_frames(self, dolly_pair, camera):
        k, layout = camera
        flat = SparseLightField({v: np.full((160, 224), 0.5) for v in plus_pattern(4)}, 0.01)
        with pytest.raises(EmptyGradient, match="frames 1->2"):
            estimate_trajectory([*dolly_pair.lightfields, flat], k, layout)
