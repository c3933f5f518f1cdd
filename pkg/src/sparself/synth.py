"""Ground-truth renderer for sparse light fields of textured planar scenes.

Planes are fronto-parallel in the world frame (``z = depth``).  Each view is
a pinhole camera; rays are intersected with every plane and the nearest hit
is shaded by a bilinear texture lookup.  Inverse depth is the reciprocal of
the camera-frame ``z`` of the hit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import (
    DEFAULT_ARM_LENGTH,
    SYNTHETIC_BASELINE,
    Intrinsics,
    RigidTransform,
    SparseLightField,
    SubApertureLayout,
)
from .errors import SceneBehindCamera

#: image size of the cropped module output, (height, width)
DEFAULT_SHAPE = (160, 224)
DEFAULT_INTRINSICS = Intrinsics(200.0, 200.0, (DEFAULT_SHAPE[1] - 1) / 2, (DEFAULT_SHAPE[0] - 1) / 2)
#: blur of the band-limited noise textures, in texels
TEXTURE_SIGMA = 1.5
#: texel size as seen from the camera, radians (4 px at fx=200); scene builders
#: set the pitch to ``TEXEL_ANGLE * depth`` so bilinear texture kinks stay well
#: above the pixel scale at every distance
TEXEL_ANGLE = 0.02
DEFAULT_TEXEL_PITCH = 0.01
#: distances of the planar depth evaluation, metres
TABLE_DISTANCES = (0.4, 0.5, 0.6, 0.7, 0.8)


def random_texture(shape=(256, 256), seed=0, sigma=TEXTURE_SIGMA, low=0.1, high=0.9) -> np.ndarray:
    """Gaussian-blurred uniform noise rescaled to ``[low, high]`` (periodic)."""
    rng = np.random.default_rng(seed)
    tex = gaussian_filter(rng.random(shape), sigma, mode="wrap")
    lo, hi = tex.min(), tex.max()
    if hi - lo < 1e-12:
        return np.full(shape, 0.5 * (low + high))
    return low + (high - low) * (tex - lo) / (hi - lo)


@dataclass(frozen=True)
class Plane:
    """Fronto-parallel textured plane ``z = depth``.

    ``texture`` texel ``(j, i)`` sits at world ``center + pitch * (i - (W-1)/2,
    j - (H-1)/2)``.  Finite planes end at the outer texel centres; infinite
    planes repeat the texture.
    """
    depth: float
    texture: np.ndarray
    pitch: float = DEFAULT_TEXEL_PITCH
    finite: bool = False
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        tex = np.array(self.texture, dtype=np.float64)
        if tex.ndim != 2 or not np.all(np.isfinite(tex)):
            raise ValueError("texture must be a finite 2-D array")
        if not (self.depth > 0 and self.pitch > 0):
            raise ValueError("plane depth and pitch must be positive")
        tex.flags.writeable = False
        object.__setattr__(self, "texture", tex)

    @property
    def extent(self) -> tuple:
        th, tw = self.texture.shape
        return (tw - 1) * self.pitch, (th - 1) * self.pitch

    def shade(self, x, y):
        """Texture value at world points, and whether they lie on the plane."""
        th, tw = self.texture.shape
        tx = (x - self.center[0]) / self.pitch + (tw - 1) / 2
        ty = (y - self.center[1]) / self.pitch + (th - 1) / 2
        if self.finite:
            inside = (tx >= 0) & (tx <= tw - 1) & (ty >= 0) & (ty <= th - 1)
            tx = np.clip(tx, 0, tw - 1)
            ty = np.clip(ty, 0, th - 1)
            x0 = np.minimum(np.floor(tx), max(tw - 2, 0)).astype(np.intp)
            y0 = np.minimum(np.floor(ty), max(th - 2, 0)).astype(np.intp)
            x1 = np.minimum(x0 + 1, tw - 1)
            y1 = np.minimum(y0 + 1, th - 1)
        else:
            inside = np.ones(np.shape(tx), dtype=bool)
            fx0 = np.floor(tx)
            fy0 = np.floor(ty)
            x0 = np.mod(fx0, tw).astype(np.intp)
            y0 = np.mod(fy0, th).astype(np.intp)
            x1 = (x0 + 1) % tw
            y1 = (y0 + 1) % th
            tx = tx - fx0 + x0
            ty = ty - fy0 + y0
        ax = tx - x0
        ay = ty - y0
        t = self.texture
        top = t[y0, x0] + ax * (t[y0, x1] - t[y0, x0])
        bot = t[y1, x0] + ax * (t[y1, x1] - t[y1, x0])
        return top + ay * (bot - top), inside


@dataclass(frozen=True)
class PlanarScene:
    """Planes ordered front to back (strictly increasing depth)."""
    planes: tuple = field(default_factory=tuple)
    seed: int = 0

    def __post_init__(self):
        planes = tuple(self.planes)
        if not planes:
            raise ValueError("scene needs at least one plane")
        depths = [p.depth for p in planes]
        if any(b <= a for a, b in zip(depths, depths[1:])):
            raise ValueError("planes must be strictly ordered front to back")
        object.__setattr__(self, "planes", planes)


def plane_scene(depth: float, seed: int = 0, pitch: float | None = None,
                texture_shape=(128, 128)) -> PlanarScene:
    """A single infinite textured plane at ``depth`` filling every view."""
    pitch = TEXEL_ANGLE * depth if pitch is None else pitch
    return PlanarScene((Plane(depth, random_texture(texture_shape, seed), pitch),), seed)


def occlusion_scene(front_depth=0.45, back_depth=0.7, seed=0) -> PlanarScene:
    """Finite textured card in front of an infinite textured background."""
    card = Plane(front_depth, random_texture((24, 24), seed + 1), TEXEL_ANGLE * front_depth, finite=True)
    back = Plane(back_depth, random_texture((128, 128), seed), TEXEL_ANGLE * back_depth)
    return PlanarScene((card, back), seed)


def render_view(scene: PlanarScene, k: Intrinsics, camera_to_world: RigidTransform,
                shape=DEFAULT_SHAPE):
    """Render one pinhole view; returns ``(image, inverse_depth)``."""
    h, w = shape[:2]
    u = np.arange(w, dtype=np.float64)[None, :]
    v = np.arange(h, dtype=np.float64)[:, None]
    d_cam = np.stack(np.broadcast_arrays((u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones((1, 1))), -1)
    d_world = d_cam @ camera_to_world.rotation.T
    origin = camera_to_world.translation
    image = np.zeros((h, w))
    lam_best = np.full((h, w), np.inf)
    for plane in reversed(scene.planes):
        dz = d_world[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = (plane.depth - origin[2]) / dz
        ok = np.isfinite(lam) & (lam > 0)
        x = origin[0] + lam * d_world[..., 0]
        y = origin[1] + lam * d_world[..., 1]
        val, inside = plane.shade(np.where(ok, x, 0.0), np.where(ok, y, 0.0))
        hit = ok & inside & (lam < lam_best)
        image[hit] = val[hit]
        lam_best[hit] = lam[hit]
    if not np.all(np.isfinite(lam_best)):
        raise SceneBehindCamera(f"{int(np.sum(~np.isfinite(lam_best)))} pixels see no plane in front of the camera")
    # d_cam has unit z, so lam is the camera-frame depth
    return image, 1.0 / lam_best


def render_lf(scene: PlanarScene, k: Intrinsics, layout: SubApertureLayout,
              camera_pose: RigidTransform, shape=DEFAULT_SHAPE):
    """Render every sub-aperture of ``layout`` from central camera-to-world ``camera_pose``.

    Returns ``(SparseLightField, {view: inverse_depth})``.
    """
    views, depths = {}, {}
    for view, offset in layout.offsets.items():
        img, inv = render_view(scene, k, camera_pose @ offset, shape)
        views[view] = img
        depths[view] = inv
    return SparseLightField(views, layout.baseline), depths


@dataclass
class RenderedSequence:
    lightfields: list
    invdepths: list          # per frame: {view: inverse depth}
    poses: list              # camera-to-world of the central view
    timestamps: list

    @property
    def relative_poses(self) -> list:
        """``T_{i-1 <- i}`` for consecutive frames."""
        return [a.inverse() @ b for a, b in zip(self.poses, self.poses[1:])]

    @property
    def central_invdepths(self) -> list:
        return [d[(0, 0)] for d in self.invdepths]


def render_trajectory(scene: PlanarScene, k: Intrinsics, layout: SubApertureLayout, poses,
                      shape=DEFAULT_SHAPE, timestamps=None) -> RenderedSequence:
    poses = list(poses)
    if not poses:
        raise ValueError("need at least one pose")
    lfs, invs = [], []
    for p in poses:
        lf, inv = render_lf(scene, k, layout, p, shape)
        lfs.append(lf)
        invs.append(inv)
    if timestamps is None:
        timestamps = [float(i) for i in range(len(poses))]
    return RenderedSequence(lfs, invs, poses, list(timestamps))


def render_pair(scene, k, layout, pose_prev, pose_cur, shape=DEFAULT_SHAPE) -> RenderedSequence:
    return render_trajectory(scene, k, layout, [pose_prev, pose_cur], shape)


def dolly_poses(n: int = 10, step: float = 0.005, axis=(1.0, 0.0, 0.0)) -> list:
    """Straight-line motion, ``step`` metres per frame along ``axis``."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    return [RigidTransform.from_translation(i * step * a) for i in range(n)]


def arc_poses(n: int = 10, step_deg: float = 0.5, radius: float = 0.5) -> list:
    """Orbit about the point ``(0, 0, radius)``, yawing ``step_deg`` per frame."""
    pivot = np.array([0.0, 0.0, radius])
    out = []
    for i in range(n):
        a = math.radians(i * step_deg)
        r = np.array([[math.cos(a), 0.0, math.sin(a)], [0.0, 1.0, 0.0], [-math.sin(a), 0.0, math.cos(a)]])
        out.append(RigidTransform(r, pivot - r @ np.array([0.0, 0.0, radius])))
    return out


def default_layout(arm_length: int = DEFAULT_ARM_LENGTH, baseline: float = SYNTHETIC_BASELINE):
    return SubApertureLayout.plus(arm_length, baseline)


def expected_disparity(k: Intrinsics, baseline: float, depth: float) -> float:
    """Inter-view disparity ``fx * b / Z`` in pixels."""
    return k.fx * baseline / depth

