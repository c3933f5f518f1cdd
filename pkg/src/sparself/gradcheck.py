"""Finite-difference suites for the analytic gradients and Jacobians."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import CENTER, FIVE_VIEWS, RigidTransform, se3_exp
from .encodings import EpiEncoderWeights, encode_epi_stack, encoder_weight_gradients
from .losses import smoothness_loss, tv_loss, warp_photometric
from .synth import DEFAULT_INTRINSICS, default_layout, plane_scene, render_pair
from .warp import project_pixels_multi, project_pixels_single, warp_image

#: pose step for loss gradients; small enough that almost no probe straddles
#: a bilinear cell edge or an L1 sign change
LOSS_POSE_STEP = 1e-8
#: relative step on a single inverse-depth pixel
LOSS_DEPTH_REL_STEP = 1e-6
#: twist step for per-pixel warp Jacobians
JACOBIAN_STEP = 1e-4
TOLERANCE = 1e-3
#: both derivatives below this count as agreeing zeros
ZERO_FLOOR = 1e-13


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_error: float
    probes: int
    tol: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.probes > 0 and self.max_rel_error <= self.tol

    def as_dict(self) -> dict:
        return {"name": self.name, "max_rel_error": self.max_rel_error, "probes": self.probes,
                "tol": self.tol, "passed": self.passed}


def rel_error(a, b, floor: float = ZERO_FLOOR) -> np.ndarray:
    """``|a - b| / max(|a|, |b|)``; pairs with both magnitudes under ``floor`` score 0."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    den = np.maximum(np.abs(a), np.abs(b))
    return np.where(den < floor, 0.0, np.abs(a - b) / np.where(den < floor, 1.0, den))


@dataclass
class GradScene:
    lf_prev: object
    lf_cur: object
    pose: RigidTransform          # evaluation point (perturbed from truth)
    invdepth: np.ndarray
    true_depth: float


def random_scene(seed: int, shape=None) -> GradScene:
    """Textured plane, random small motion, and a state perturbed off the truth."""
    rng = np.random.default_rng(seed)
    depth = float(rng.uniform(0.4, 0.8))
    motion = se3_exp(np.concatenate([rng.normal(0, 0.003, 3), rng.normal(0, math.radians(0.3), 3)]))
    k = DEFAULT_INTRINSICS
    kw = {} if shape is None else {"shape": shape}
    seq = render_pair(plane_scene(depth, seed=seed), k, default_layout(), RigidTransform.identity(), motion, **kw)
    pose = se3_exp(np.concatenate([rng.normal(0, 5e-4, 3), rng.normal(0, 5e-4, 3)])) @ seq.relative_poses[0]
    inv = seq.central_invdepths[1]
    yy, xx = np.mgrid[0:inv.shape[0], 0:inv.shape[1]]
    field = 1.0 + 0.05 * np.sin(xx / 17.0 + rng.uniform(0, 6)) * np.cos(yy / 13.0 + rng.uniform(0, 6))
    return GradScene(seq.lightfields[0], seq.lightfields[1], pose, inv * field, depth)


def loss_gradient_check(scene: GradScene, views, n_pixels: int = 100, seed: int = 0,
                        pose_step: float = LOSS_POSE_STEP, depth_rel_step: float = LOSS_DEPTH_REL_STEP,
                        name: str = "loss") -> CheckResult:
    """Photometric loss gradient vs central differences on the pose and ``n_pixels`` depths."""
    k, layout = DEFAULT_INTRINSICS, default_layout()

    def f(pose, rho):
        return warp_photometric(scene.lf_prev, scene.lf_cur, k, layout, pose, rho, views).value

    ana = warp_photometric(scene.lf_prev, scene.lf_cur, k, layout, scene.pose, scene.invdepth, views)
    errs = []
    for i in range(6):
        e = np.zeros(6)
        e[i] = pose_step
        fd = (f(se3_exp(e) @ scene.pose, scene.invdepth) - f(se3_exp(-e) @ scene.pose, scene.invdepth)) / (2 * pose_step)
        errs.append(float(rel_error(ana.grad_pose[i], fd)))
    rng = np.random.default_rng(seed)
    h, w = scene.invdepth.shape
    flat = rng.choice(h * w, size=n_pixels, replace=False)
    for idx in flat:
        r, c = divmod(int(idx), w)
        step = depth_rel_step * scene.invdepth[r, c]
        up, dn = scene.invdepth.copy(), scene.invdepth.copy()
        up[r, c] += step
        dn[r, c] -= step
        fd = (f(scene.pose, up) - f(scene.pose, dn)) / (2 * step)
        errs.append(float(rel_error(ana.grad_invdepth[r, c], fd)))
    return CheckResult(name, max(errs), len(errs))


def _same_cells(u0, v0, u1, v1):
    return (np.floor(u0) == np.floor(u1)) & (np.floor(v0) == np.floor(v1))


def warp_jacobian_check(scene: GradScene, view=CENTER, n_probes: int = 100, seed: int = 0,
                        step: float = JACOBIAN_STEP, name: str = "warp_jacobian") -> CheckResult:
    """Per-pixel derivatives of the warped image w.r.t. the twist and inverse depth.

    Probes whose perturbed sample points leave the base bilinear cell are
    skipped: the interpolant is only piecewise smooth across cell edges.
    """
    k, layout = DEFAULT_INTRINSICS, default_layout()
    src = scene.lf_prev[view]

    def project(pose, rho, jac=False):
        if tuple(view) == tuple(CENTER):
            return project_pixels_single(k, pose, rho, jacobians=jac)
        return project_pixels_multi(k, layout, view, pose, rho, jacobians=jac)

    base_p = project(scene.pose, scene.invdepth, True)
    base = warp_image(src, base_p)
    rng = np.random.default_rng(seed)
    h, w = scene.invdepth.shape
    interior = np.flatnonzero(base.validity.ravel())
    order = rng.permutation(interior)
    errs = []
    perturbed = []
    for i in range(6):
        e = np.zeros(6)
        e[i] = step
        perturbed.append((project(se3_exp(e) @ scene.pose, scene.invdepth),
                          project(se3_exp(-e) @ scene.pose, scene.invdepth)))
    used = 0
    for idx in order:
        if used >= n_probes:
            break
        r, c = divmod(int(idx), w)
        ok = True
        for pp, pm in perturbed:
            ok &= bool(_same_cells(pp.u[r, c], pp.v[r, c], base_p.u[r, c], base_p.v[r, c]))
            ok &= bool(_same_cells(pm.u[r, c], pm.v[r, c], base_p.u[r, c], base_p.v[r, c]))
        rstep = step * scene.invdepth[r, c]
        up, dn = scene.invdepth.copy(), scene.invdepth.copy()
        up[r, c] += rstep
        dn[r, c] -= rstep
        pu, pd = project(scene.pose, up), project(scene.pose, dn)
        ok &= bool(_same_cells(pu.u[r, c], pu.v[r, c], base_p.u[r, c], base_p.v[r, c]))
        ok &= bool(_same_cells(pd.u[r, c], pd.v[r, c], base_p.u[r, c], base_p.v[r, c]))
        if not ok:
            continue
        used += 1
        for i, (pp, pm) in enumerate(perturbed):
            fd = (warp_image(src, pp).warped[r, c] - warp_image(src, pm).warped[r, c]) / (2 * step)
            errs.append(float(rel_error(base.jac_pose[r, c, i], fd)))
        fd = (warp_image(src, pu).warped[r, c] - warp_image(src, pd).warped[r, c]) / (2 * rstep)
        errs.append(float(rel_error(base.jac_invdepth[r, c], fd)))
    return CheckResult(name, max(errs) if errs else math.inf, used)


def regularizer_gradient_check(seed: int = 0, n_pixels: int = 100, step: float = 1e-7) -> list:
    rng = np.random.default_rng(seed)
    x = 2.0 + 0.1 * rng.standard_normal((32, 40))
    out = []
    for name, fn in (("smoothness", lambda a: smoothness_loss(a, scales=3)), ("tv", tv_loss)):
        g = fn(x).grad_invdepth
        # sign cancellations give exact zeros; FD roundoff there is ~1e-10
        floor = 1e-6 * float(np.abs(g).max())
        errs = []
        for idx in rng.choice(x.size, size=n_pixels, replace=False):
            r, c = divmod(int(idx), x.shape[1])
            up, dn = x.copy(), x.copy()
            up[r, c] += step
            dn[r, c] -= step
            errs.append(float(rel_error(g[r, c], (fn(up).value - fn(dn).value) / (2 * step), floor)))
        out.append(CheckResult(name, max(errs), len(errs)))
    return out


def encoder_gradient_check(seed: int = 0, n_probes: int = 50, step: float = 1e-6) -> CheckResult:
    """Encoder output (weighted sum) gradient w.r.t. kernel and bias entries."""
    from dataclasses import replace
    scene = random_scene(seed, shape=(32, 48))
    lf = scene.lf_cur
    weights = EpiEncoderWeights.random(lf.n_per_arm, seed=seed)
    rng = np.random.default_rng(seed)
    gout = rng.standard_normal(encode_epi_stack(lf, weights).data.shape)
    grads = encoder_weight_gradients(lf, weights, gout)

    def f(wts):
        return float(np.sum(gout * encode_epi_stack(lf, wts).data))

    errs = []
    names = ("tall_kernel", "tall_bias", "wide_kernel", "wide_bias")
    for _ in range(n_probes):
        name = names[int(rng.integers(len(names)))]
        arr = getattr(weights, name)
        idx = tuple(int(rng.integers(s)) for s in arr.shape)
        up, dn = arr.copy(), arr.copy()
        up[idx] += step
        dn[idx] -= step
        fd = (f(replace(weights, **{name: up})) - f(replace(weights, **{name: dn}))) / (2 * step)
        errs.append(float(rel_error(getattr(grads, name)[idx], fd)))
    return CheckResult("encoder", max(errs), len(errs))


def run_suites(n_scenes: int = 5, seed: int = 0, n_pixels: int = 100) -> list:
    """Every suite: single/multi loss gradients on ``n_scenes`` scenes, warp
    Jacobians for the central and a side view, regularizers and encoder."""
    results = []
    for i in range(n_scenes):
        scene = random_scene(seed + i)
        results.append(loss_gradient_check(scene, (CENTER,), n_pixels, seed + i, name=f"single_warp[{i}]"))
        results.append(loss_gradient_check(scene, FIVE_VIEWS, n_pixels, seed + i, name=f"multi_warp[{i}]"))
    scene = random_scene(seed + 100)
    results.append(warp_jacobian_check(scene, CENTER, seed=seed, name="warp_jacobian(0,0)"))
    results.append(warp_jacobian_check(scene, (1, 0), seed=seed, name="warp_jacobian(1,0)"))
    results.extend(regularizer_gradient_check(seed))
    results.append(encoder_gradient_check(seed))
    return results
