"""Direct coarse-to-fine estimation of relative pose and central inverse depth.

Parameters are an se(3) twist ``xi`` (``T = exp(xi)``, ``T = T_{t-1<-t}``)
and the log of the central inverse-depth map.  Both are updated with Adam on
the total loss (photometric + weighted smoothness/TV regularizer).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    CENTER,
    FIVE_VIEWS,
    Intrinsics,
    RigidTransform,
    SparseLightField,
    SubApertureLayout,
    check_views,
    downsample2x,
    se3_exp,
    se3_left_jacobian,
    se3_log,
)
from .errors import Diverged, EmptyGradient, IndivisibleDims, LightFieldError
from .losses import REGULARIZER_WEIGHT, LossValue, regularizer, total_loss, warp_photometric

MODES = ("single", "multi")
#: initial inverse depth, 1 / 0.55 m
DEFAULT_INIT_INVDEPTH = 1.0 / 0.55
#: intensity variance below which a frame counts as textureless
MIN_TEXTURE_VARIANCE = 1e-6


@dataclass(frozen=True)
class EstimatorConfig:
    mode: str = "multi"
    view_set: tuple = FIVE_VIEWS
    anchor: str = "central"
    pyramid_levels: int = 4
    #: iterations per level, coarsest first (an int applies to every level)
    iterations: tuple = (60, 60, 80, 120)
    lr_pose: float = 1e-3
    lr_invdepth: float = 1e-2
    #: step-size factor applied at each finer level
    lr_decay: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    regularizer_weight: float = REGULARIZER_WEIGHT
    #: fraction of all iterations after which smoothness gives way to TV
    switch_fraction: float = 0.3
    smoothness_scales: int = 1
    init_invdepth: float = DEFAULT_INIT_INVDEPTH
    #: relative best-loss improvement over the last 20 iterations counted as converged
    convergence_tol: float = 1e-4
    threads: int = 1
    #: kept for provenance; the optimizer itself draws no random numbers
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.anchor not in ("central", "view"):
            raise ValueError("anchor must be 'central' or 'view'")
        views = tuple(tuple(int(x) for x in v) for v in self.view_set)
        if self.mode == "single":
            views = (tuple(CENTER),)
        elif len(views) < 2:
            raise ValueError("multi-warp needs at least two views")
        object.__setattr__(self, "view_set", views)
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        its = self.iterations
        its = (int(its),) * self.pyramid_levels if np.isscalar(its) else tuple(int(i) for i in its)
        if len(its) != self.pyramid_levels or min(its) < 1:
            raise ValueError("need one positive iteration count per pyramid level")
        object.__setattr__(self, "iterations", its)
        for name in ("lr_pose", "lr_invdepth", "lr_decay", "adam_eps", "init_invdepth", "threads"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.regularizer_weight < 0 or not 0 <= self.switch_fraction <= 1:
            raise ValueError("invalid regularizer settings")

    @classmethod
    def from_dict(cls, data: dict) -> "EstimatorConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {name: (list(map(list, v)) if name == "view_set" else list(v) if name == "iterations" else v)
                for name, v in ((n, getattr(self, n)) for n in self.__dataclass_fields__)}


@dataclass
class EstimateResult:
    pose: RigidTransform
    invdepth: np.ndarray
    final_loss: float
    loss_trace: list = field(default_factory=list)
    converged: bool = False


def build_pyramid(lf: SparseLightField, levels: int) -> list:
    """``levels`` light fields, finest first, each a 2x2 box reduction of the previous."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    f = 2 ** (levels - 1)
    if lf.height % f or lf.width % f:
        raise IndivisibleDims(f"{lf.height}x{lf.width} is not divisible by {f}")
    out = [lf]
    for _ in range(levels - 1):
        out.append(out[-1].map(downsample2x))
    return out


def _upsample(x):
    return np.repeat(np.repeat(x, 2, axis=0), 2, axis=1)


def _check_texture(lf: SparseLightField):
    if float(np.var(lf.center)) < MIN_TEXTURE_VARIANCE:
        raise EmptyGradient("frame is textureless; pose is unobservable")


class _Adam:
    def __init__(self, size, beta1, beta2, eps):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.b1, self.b2, self.eps = beta1, beta2, eps

    def step(self, grad, lr):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mh = self.m / (1 - self.b1 ** self.t)
        vh = self.v / (1 - self.b2 ** self.t)
        return lr * mh / (np.sqrt(vh) + self.eps)


def estimate_pair(lf_prev: SparseLightField, lf_cur: SparseLightField, k: Intrinsics,
                  layout: SubApertureLayout, config: EstimatorConfig = EstimatorConfig(),
                  init_pose: RigidTransform | None = None, init_invdepth=None) -> EstimateResult:
    """Estimate ``T_{t-1<-t}`` and the central inverse depth of ``lf_cur``.

    The returned parameters are the best seen (lowest total loss) at the
    finest level; ``loss_trace`` holds that best-so-far value per iteration.
    """
    if lf_prev.shape != lf_cur.shape:
        raise ValueError(f"light fields differ in size: {lf_prev.shape} vs {lf_cur.shape}")
    views = check_views(config.view_set, layout, lf_prev, lf_cur)
    _check_texture(lf_cur)
    levels = config.pyramid_levels
    pyr_prev = build_pyramid(lf_prev, levels)
    pyr_cur = build_pyramid(lf_cur, levels)

    xi = np.zeros(6) if init_pose is None else se3_log(init_pose)
    if init_invdepth is None:
        h, w = pyr_cur[-1].shape
        log_rho = np.full((h, w), np.log(config.init_invdepth))
    else:
        rho0 = np.asarray(init_invdepth, dtype=np.float64)
        if np.isscalar(init_invdepth) or rho0.ndim == 0:
            h, w = pyr_cur[-1].shape
            log_rho = np.full((h, w), np.log(float(rho0)))
        else:
            for _ in range(levels - 1):
                rho0 = downsample2x(rho0)
            log_rho = np.log(rho0)

    total_its = sum(config.iterations)
    switch = int(round(config.switch_fraction * total_its))
    it_global = 0
    trace: list = []
    best_loss = np.inf
    # log inverse depth at level l is the sum of coefficient maps at levels >= l,
    # each repeated up to level l's resolution
    coeffs = [log_rho]
    for level in range(levels - 1, -1, -1):
        prev, cur = pyr_prev[level], pyr_cur[level]
        kl = k.scaled(level)
        scale = config.lr_decay ** (levels - 1 - level)
        lr_pose, lr_rho = config.lr_pose * scale, config.lr_invdepth * scale
        if level < levels - 1:
            coeffs.append(np.zeros(cur.shape))
        opt_pose = _Adam(6, config.beta1, config.beta2, config.adam_eps)
        opt_rho = [_Adam(c.shape, config.beta1, config.beta2, config.adam_eps) for c in coeffs]
        best_loss, best_xi, best_coeffs = np.inf, xi.copy(), [c.copy() for c in coeffs]
        trace = []
        for _ in range(config.iterations[levels - 1 - level]):
            if it_global == switch:
                best_loss = np.inf
            pose = se3_exp(xi)
            rho = np.exp(_compose_levels(coeffs))
            phot = warp_photometric(prev, cur, kl, layout, pose, rho, views, config.anchor,
                                    config.threads)
            reg = normalized_regularizer(rho, it_global, switch, config.smoothness_scales)
            loss = total_loss(phot, reg, config.regularizer_weight)
            if not np.isfinite(loss.value) or not np.all(np.isfinite(loss.grad_pose)):
                raise Diverged(f"loss became non-finite at iteration {it_global}")
            if loss.value < best_loss:
                best_loss, best_xi, best_coeffs = loss.value, xi.copy(), [c.copy() for c in coeffs]
            trace.append(best_loss)
            g_xi = se3_left_jacobian(xi).T @ loss.grad_pose
            g = loss.grad_invdepth * rho
            xi = xi - opt_pose.step(g_xi, lr_pose)
            for i in range(len(coeffs) - 1, -1, -1):
                coeffs[i] = coeffs[i] - opt_rho[i].step(g, lr_rho)
                if i:
                    g = _block_sum(g)
            it_global += 1
        xi, coeffs = best_xi, best_coeffs
    converged = False
    if len(trace) > 20:
        converged = bool(trace[-21] - trace[-1] <= config.convergence_tol * abs(trace[-1]))
    return EstimateResult(se3_exp(xi), np.exp(_compose_levels(coeffs)), float(best_loss), trace, converged)


def _compose_levels(coeffs):
    out = coeffs[0]
    for c in coeffs[1:]:
        out = _upsample(out) + c
    return out


def _block_sum(g):
    h, w = g.shape
    return g.reshape(h // 2, 2, w // 2, 2).sum(axis=(1, 3))


def normalized_regularizer(invdepth, iteration: int, switch_iteration: int, scales: int = 1) -> LossValue:
    """Regularizer evaluated on ``invdepth / mean(invdepth)``.

    Normalising by the mean makes the term blind to global scale, so the
    single-warp total objective keeps its exact scale gauge.
    """
    rho = np.asarray(invdepth, dtype=np.float64)
    mu = rho.mean()
    reg = regularizer(rho / mu, iteration, switch_iteration, scales)
    g = reg.grad_invdepth
    grad = g / mu - np.sum(g * rho) / (mu * mu * rho.size)
    return LossValue(reg.value, None, grad, reg.valid_count)


@dataclass
class TrajectoryEstimate:
    relative: list           # EstimateResult per consecutive pair
    poses: list              # integrated camera-to-world, first frame at identity

    @property
    def relative_poses(self) -> list:
        return [r.pose for r in self.relative]


def estimate_trajectory(lightfields, k: Intrinsics, layout: SubApertureLayout,
                        config: EstimatorConfig = EstimatorConfig(), warm_start: bool = True) -> TrajectoryEstimate:
    """Pairwise estimates chained into absolute poses ``P_{i+1} = P_i T_i``.

    Each pair starts from the previous pair's pose (constant velocity).
    """
    lfs = list(lightfields)
    if len(lfs) < 2:
        raise ValueError("need at least two frames")
    results = []
    poses = [RigidTransform.identity()]
    init = None
    for i in range(len(lfs) - 1):
        try:
            res = estimate_pair(lfs[i], lfs[i + 1], k, layout, config, init_pose=init)
        except LightFieldError as exc:
            raise type(exc)(f"frames {i}->{i + 1}: {exc}") from exc
        results.append(res)
        poses.append(poses[-1] @ res.pose)
        init = res.pose if warm_start else None
    return TrajectoryEstimate(results, poses)
