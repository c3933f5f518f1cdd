"""Sparse light-field data model, pinhole intrinsics and SE(3) geometry.

Conventions
-----------
* Images are ``(H, W)`` (grayscale) or ``(H, W, C)`` float64 arrays in [0, 1].
  Integer pixel ``(u, v)`` is a sample centre; ``u`` indexes columns and
  ``v`` rows, both zero-based.
* A :class:`RigidTransform` ``T_ab`` maps points from frame ``b`` to frame
  ``a``: ``p_a = R p_b + t``.
* Twists are ordered ``(rho, phi)``: translation part first, rotation last.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .errors import (
    DimensionMismatch,
    MissingView,
    NonPositiveDepth,
    NonPositiveInverseDepth,
)

#: views of the 17-aperture module: arm length 4 in each direction
DEFAULT_ARM_LENGTH = 4
#: baseline used for synthetic data; real data must provide its own
SYNTHETIC_BASELINE = 0.01


class ViewIndex(NamedTuple):
    s: int
    t: int

    def __str__(self):
        return f"({self.s:+d},{self.t:+d})"


def plus_pattern(arm_length: int) -> list[ViewIndex]:
    """Views of a plus-shaped array.

    The horizontal arm comes first (left to right, centre included), then the
    vertical arm top to bottom without repeating the centre.
    """
    if arm_length < 0:
        raise ValueError("arm_length must be >= 0")
    a = int(arm_length)
    views = [ViewIndex(s, 0) for s in range(-a, a + 1)]
    views += [ViewIndex(0, t) for t in range(-a, a + 1) if t != 0]
    return views


def is_plus_member(view, arm_length: int) -> bool:
    s, t = view
    return (s == 0 or t == 0) and abs(s) <= arm_length and abs(t) <= arm_length


#: the centre plus its four nearest neighbours
FIVE_VIEWS = (ViewIndex(0, 0), ViewIndex(-1, 0), ViewIndex(1, 0), ViewIndex(0, -1), ViewIndex(0, 1))
CENTER = ViewIndex(0, 0)


def as_image(data, name: str = "image") -> np.ndarray:
    """Validate and return a read-only float64 copy of an image."""
    img = np.array(data, dtype=np.float64, copy=True)
    if img.ndim not in (2, 3) or img.shape[0] == 0 or img.shape[1] == 0:
        raise DimensionMismatch(f"{name}: expected (H, W) or (H, W, C), got {img.shape}")
    if img.ndim == 3 and img.shape[2] == 0:
        raise DimensionMismatch(f"{name}: zero channels")
    if not np.all(np.isfinite(img)):
        raise ValueError(f"{name}: non-finite samples")
    img.flags.writeable = False
    return img


def as_channels_last(img: np.ndarray) -> np.ndarray:
    """View of ``img`` as a C-contiguous ``(H, W, C)`` array."""
    if img.ndim == 2:
        img = img[:, :, None]
    return np.ascontiguousarray(img, dtype=np.float64)


def as_inverse_depth(data, shape=None) -> np.ndarray:
    """Validate an inverse-depth map (strictly positive, finite, 2-D)."""
    inv = np.array(data, dtype=np.float64, copy=True)
    if inv.ndim != 2:
        raise DimensionMismatch(f"inverse depth must be 2-D, got {inv.shape}")
    if shape is not None and inv.shape != tuple(shape[:2]):
        raise DimensionMismatch(f"inverse depth {inv.shape} does not match view {tuple(shape[:2])}")
    if not np.all(np.isfinite(inv)) or np.any(inv <= 0):
        raise NonPositiveInverseDepth("inverse depth must be finite and > 0")
    inv.flags.writeable = False
    return inv


class SparseLightField:
    """Plus-pattern set of sub-aperture images sharing one size.

    ``views`` maps :class:`ViewIndex` to images; the index set must be exactly
    ``plus_pattern(arm_length)``.
    """

    def __init__(self, views: Mapping, baseline: float, arm_length: int | None = None):
        if baseline is None or not baseline > 0:
            raise ValueError("baseline must be > 0")
        keyed = {ViewIndex(*k): v for k, v in views.items()}
        if arm_length is None:
            arm_length = max((max(abs(k.s), abs(k.t)) for k in keyed), default=0)
        expected = plus_pattern(arm_length)
        if set(keyed) != set(expected):
            missing = sorted(set(expected) - set(keyed))
            extra = sorted(set(keyed) - set(expected))
            raise MissingView(f"view set is not a plus pattern of arm {arm_length}: "
                              f"missing {missing}, unexpected {extra}")
        images = {}
        shape = None
        for k in expected:
            img = as_image(keyed[k], name=f"view {k}")
            if shape is None:
                shape = img.shape
            elif img.shape != shape:
                raise DimensionMismatch(f"view {k} has shape {img.shape}, expected {shape}")
            images[k] = img
        self._views = MappingProxyType(images)
        self.baseline = float(baseline)
        self.arm_length = int(arm_length)
        self.shape = shape

    @property
    def views(self) -> Mapping[ViewIndex, np.ndarray]:
        return self._views

    @property
    def height(self) -> int:
        return self.shape[0]

    @property
    def width(self) -> int:
        return self.shape[1]

    @property
    def channels(self) -> int:
        return 1 if len(self.shape) == 2 else self.shape[2]

    @property
    def center(self) -> np.ndarray:
        return self._views[CENTER]

    @property
    def n_per_arm(self) -> int:
        return 2 * self.arm_length + 1

    def __getitem__(self, view) -> np.ndarray:
        try:
            return self._views[ViewIndex(*view)]
        except KeyError:
            raise MissingView(f"view {tuple(view)} not in light field") from None

    def __contains__(self, view) -> bool:
        return ViewIndex(*view) in self._views

    def __iter__(self):
        return iter(self._views)

    def __len__(self):
        return len(self._views)

    def map(self, fn) -> "SparseLightField":
        """New light field with ``fn`` applied to each view image."""
        return SparseLightField({k: fn(v) for k, v in self._views.items()},
                                self.baseline, self.arm_length)

    def __repr__(self):
        return (f"SparseLightField(arm_length={self.arm_length}, shape={self.shape}, "
                f"baseline={self.baseline})")


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    def check_bounds(self, height: int, width: int) -> None:
        if not (0 <= self.cx <= width - 1 and 0 <= self.cy <= height - 1):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside {width}x{height} image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, levels: int = 1) -> "Intrinsics":
        """Intrinsics after ``levels`` 2x2 box downsamplings.

        Pixel centres move as ``u' = (u + 0.5) / 2 - 0.5``.
        """
        fx, fy, cx, cy = self.fx, self.fy, self.cx, self.cy
        for _ in range(levels):
            fx, fy = fx / 2, fy / 2
            cx, cy = (cx + 0.5) / 2 - 0.5, (cy + 0.5) / 2 - 0.5
        return Intrinsics(fx, fy, cx, cy)

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy], dtype=np.float64)


def hat(w) -> np.ndarray:
    """Skew-symmetric matrix with ``hat(w) @ x == cross(w, x)``."""
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("transform must be finite")
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation is not a proper orthonormal matrix")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        if m.shape not in ((4, 4), (3, 4)):
            raise ValueError(f"expected 3x4 or 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_translation(cls, x, y=None, z=None) -> "RigidTransform":
        t = np.array([x, y, z], dtype=np.float64) if y is not None else np.asarray(x, dtype=np.float64)
        return cls(np.eye(3), t)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        """Transform ``(..., 3)`` points."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def rotation_angle(self) -> float:
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return math.acos(min(1.0, max(-1.0, c)))

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return (np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
                and np.allclose(self.translation, other.translation, rtol=0, atol=atol))

    def __repr__(self):
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


def invert(a: RigidTransform) -> RigidTransform:
    return a.inverse()


def _so3_coefficients(theta: float):
    """(sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3) with series near 0."""
    if theta < 1e-3:
        t2 = theta * theta
        return (1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0,
                1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0)
    return (math.sin(theta) / theta, (1.0 - math.cos(theta)) / theta ** 2,
            (theta - math.sin(theta)) / theta ** 3)


def so3_exp(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64)
    a, b, _ = _so3_coefficients(float(np.linalg.norm(phi)))
    k = hat(phi)
    return np.eye(3) + a * k + b * (k @ k)


def so3_left_jacobian(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64)
    _, b, c = _so3_coefficients(float(np.linalg.norm(phi)))
    k = hat(phi)
    return np.eye(3) + b * k + c * (k @ k)


def so3_log(r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    vee = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    cos_t = (np.trace(r) - 1.0) / 2.0
    theta = math.atan2(0.5 * np.linalg.norm(vee), cos_t)
    if theta < 1e-6:
        return 0.5 * vee
    if math.pi - theta < 1e-3:
        # near pi the antisymmetric part vanishes; sym(R) = cos I + (1 - cos) a a^T
        m = ((r + r.T) / 2.0 - cos_t * np.eye(3)) / (1.0 - cos_t)
        i = int(np.argmax(np.diag(m)))
        axis = m[:, i] / math.sqrt(max(m[i, i], 1e-300))
        axis /= np.linalg.norm(axis)
        if np.dot(axis, vee) < 0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * math.sin(theta)) * vee


def se3_exp(twist) -> RigidTransform:
    """Exponential map of a ``(rho, phi)`` twist."""
    xi = np.asarray(twist, dtype=np.float64).reshape(6)
    if not np.all(np.isfinite(xi)):
        raise ValueError("twist must be finite")
    rho, phi = xi[:3], xi[3:]
    return RigidTransform(so3_exp(phi), so3_left_jacobian(phi) @ rho)


def se3_log(transform: RigidTransform) -> np.ndarray:
    phi = so3_log(transform.rotation)
    rho = np.linalg.solve(so3_left_jacobian(phi), transform.translation)
    return np.concatenate([rho, phi])


def _q_matrix(rho, phi) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    rx, px = hat(rho), hat(phi)
    if theta < 0.1:
        t2 = theta * theta
        c1 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2 ** 3 / 362880.0
        c2 = 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0 - t2 ** 3 / 3628800.0
        c3 = 1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0 - t2 ** 3 / 9979200.0
    else:
        s, c = math.sin(theta), math.cos(theta)
        c1 = (theta - s) / theta ** 3
        c2 = (theta ** 2 + 2.0 * c - 2.0) / (2.0 * theta ** 4)
        c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * theta ** 5)
    pr = px @ rx
    rp = rx @ px
    prp = pr @ px
    return (0.5 * rx + c1 * (pr + rp + prp)
            + c2 * (px @ pr + rp @ px - 3.0 * prp)
            + c3 * (prp @ px + px @ prp))


def se3_left_jacobian(twist) -> np.ndarray:
    """6x6 left Jacobian: ``exp(xi + d) ~= exp(J d) exp(xi)`` for small ``d``."""
    xi = np.asarray(twist, dtype=np.float64).reshape(6)
    rho, phi = xi[:3], xi[3:]
    j = so3_left_jacobian(phi)
    out = np.zeros((6, 6))
    out[:3, :3] = j
    out[3:, 3:] = j
    out[:3, 3:] = _q_matrix(rho, phi)
    return out


def project(k: Intrinsics, point) -> tuple[float, float, float]:
    """Pinhole projection; returns ``(u, v, depth)``."""
    x, y, z = (float(c) for c in point)
    if not z > 0:
        raise NonPositiveDepth(f"point depth {z} <= 0")
    return k.fx * x / z + k.cx, k.fy * y / z + k.cy, z


def backproject(k: Intrinsics, pixel, inverse_depth: float) -> np.ndarray:
    if not inverse_depth > 0:
        raise NonPositiveInverseDepth(f"inverse depth {inverse_depth} <= 0")
    u, v = pixel
    return np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0]) / inverse_depth


def backproject_map(k: Intrinsics, inverse_depth: np.ndarray) -> np.ndarray:
    """Back-project every pixel of an inverse-depth map, shape ``(H, W, 3)``."""
    h, w = inverse_depth.shape
    u = np.arange(w, dtype=np.float64)[None, :]
    v = np.arange(h, dtype=np.float64)[:, None]
    z = 1.0 / inverse_depth
    out = np.empty((h, w, 3))
    out[..., 0] = (u - k.cx) / k.fx * z
    out[..., 1] = (v - k.cy) / k.fy * z
    out[..., 2] = z
    return out


class SubApertureLayout:
    """Per-view offsets ``cT_s`` (pose of sub-aperture ``s`` in the centre frame)."""

    def __init__(self, offsets: Mapping, baseline: float):
        if not baseline > 0:
            raise ValueError("baseline must be > 0")
        offs = {ViewIndex(*k): v for k, v in offsets.items()}
        if CENTER not in offs or not offs[CENTER].allclose(RigidTransform.identity(), atol=1e-12):
            raise ValueError("layout offset of the centre view must be the identity")
        self._offsets = MappingProxyType(offs)
        self.baseline = float(baseline)

    @classmethod
    def plus(cls, arm_length: int = DEFAULT_ARM_LENGTH, baseline: float = SYNTHETIC_BASELINE):
        """Coplanar plus layout: view ``(s, t)`` sits at ``(s*b, t*b, 0)``."""
        return cls({v: RigidTransform.from_translation(v.s * baseline, v.t * baseline, 0.0)
                    for v in plus_pattern(arm_length)}, baseline)

    @classmethod
    def for_lightfield(cls, lf: SparseLightField) -> "SubApertureLayout":
        return cls.plus(lf.arm_length, lf.baseline)

    @property
    def offsets(self) -> Mapping[ViewIndex, RigidTransform]:
        return self._offsets

    def __getitem__(self, view) -> RigidTransform:
        try:
            return self._offsets[ViewIndex(*view)]
        except KeyError:
            raise MissingView(f"view {tuple(view)} not in layout") from None

    def __contains__(self, view) -> bool:
        return ViewIndex(*view) in self._offsets

    def views(self) -> list[ViewIndex]:
        return list(self._offsets)


def check_views(views: Iterable, *containers) -> list[ViewIndex]:
    out = []
    for v in views:
        v = ViewIndex(*v)
        for c in containers:
            if v not in c:
                raise MissingView(f"view {v} not available")
        out.append(v)
    return out


def downsample2x(img: np.ndarray) -> np.ndarray:
    """2x2 box filter with stride 2 over the first two axes (even dims only)."""
    h, w = img.shape[:2]
    if h % 2 or w % 2:
        raise ValueError(f"cannot halve odd dims {h}x{w}")
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])
