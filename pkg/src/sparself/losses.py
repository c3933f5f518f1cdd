"""Photometric, smoothness and total-variation losses with analytic gradients."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .core import (
    CENTER,
    Intrinsics,
    RigidTransform,
    SparseLightField,
    SubApertureLayout,
    as_channels_last,
    as_inverse_depth,
    check_views,
    downsample2x,
)
from .errors import DimensionMismatch, EmptyMask
from .warp import EPS_Z, WarpResult, chain_transforms, warp_targets

#: weight applied to the smoothness / total-variation term
REGULARIZER_WEIGHT = 0.3


@dataclass(frozen=True)
class LossValue:
    """A scalar loss and, when available, its gradients.

    ``grad_pose`` is w.r.t. a left perturbation of the pose (6-vector);
    ``grad_invdepth`` is w.r.t. each inverse-depth pixel.
    """
    value: float
    grad_pose: np.ndarray | None = None
    grad_invdepth: np.ndarray | None = None
    valid_count: int = 0

    def __add__(self, other: "LossValue") -> "LossValue":
        return LossValue(self.value + other.value, _add(self.grad_pose, other.grad_pose),
                         _add(self.grad_invdepth, other.grad_invdepth),
                         max(self.valid_count, other.valid_count))

    def scaled(self, factor: float) -> "LossValue":
        return LossValue(factor * self.value, _scale(self.grad_pose, factor),
                         _scale(self.grad_invdepth, factor), self.valid_count)


def _add(a, b):
    if a is None:
        return None if b is None else b.copy()
    if b is None:
        return a.copy()
    return a + b


def _scale(a, f):
    return None if a is None else f * a


def photometric_single(target, estimate, mask=None) -> LossValue:
    """Mean absolute intensity difference over valid pixels.

    ``estimate`` is an image or a :class:`WarpResult`; for the latter the
    mask defaults to its validity and Jacobians, if present, are chained into
    pose and inverse-depth gradients.
    """
    jp = jr = None
    if isinstance(estimate, WarpResult):
        jp, jr = estimate.jac_pose, estimate.jac_invdepth
        if mask is None:
            mask = estimate.validity
        estimate = estimate.warped
    tgt = as_channels_last(np.asarray(target, dtype=np.float64))
    est = as_channels_last(np.asarray(estimate, dtype=np.float64))
    if tgt.shape != est.shape:
        raise DimensionMismatch(f"target {tgt.shape} vs estimate {est.shape}")
    h, w, c = tgt.shape
    m = np.ones((h, w), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != (h, w):
        raise DimensionMismatch(f"mask {m.shape} vs image {(h, w)}")
    count = int(m.sum())
    if count == 0:
        raise EmptyMask("no valid pixels")
    r = np.where(m[..., None], est - tgt, 0.0)
    n = count * c
    value = float(np.abs(r).sum() / n)
    gp = gr = None
    if jp is not None:
        s = np.sign(r) / n
        jp = jp.reshape(h, w, c, 6)
        jr = jr.reshape(h, w, c)
        gp = np.einsum("ijc,ijck->k", s, jp)
        gr = (s * jr).sum(axis=2)
    return LossValue(value, gp, gr, count)


def photometric_multi(targets, estimates: dict, masks: dict | None = None) -> LossValue:
    """Mean over views of per-view :func:`photometric_single` losses.

    ``targets`` maps view to image (or is a light field).  Views with no valid
    pixel are left out of the mean; if none remains :class:`EmptyMask`.
    """
    if not estimates:
        raise EmptyMask("no views")
    parts = []
    for view, est in estimates.items():
        mask = None if masks is None else masks.get(view)
        try:
            parts.append(photometric_single(targets[view], est, mask))
        except EmptyMask:
            continue
    if not parts:
        raise EmptyMask("no view has valid pixels")
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    total = total.scaled(1.0 / len(parts))
    return replace(total, valid_count=sum(p.valid_count for p in parts))


def warp_photometric(lf_prev: SparseLightField, lf_cur: SparseLightField, k: Intrinsics,
                     layout: SubApertureLayout, pose: RigidTransform, invdepth,
                     view_set=(CENTER,), anchor: str = "central", threads: int = 1) -> LossValue:
    """Fused warp + photometric loss over ``view_set`` using the compiled kernel.

    Same value and gradients as ``photometric_multi(warp_targets(...),
    warp_lightfield(..., jacobians=True))`` with shared per-view depth.
    """
    views = check_views(view_set, layout, lf_prev, lf_cur)
    rho = np.ascontiguousarray(as_inverse_depth(invdepth, lf_cur.shape))
    intr = k.as_array()
    targets = warp_targets(lf_cur, views, anchor)

    def one(view):
        offset = layout[view]
        if view == CENTER:
            inner = outer = None
        else:
            inner = offset if anchor == "view" else None
            outer = offset.inverse()
        m, b = chain_transforms(pose, inner, outer)
        return kernels.warp_l1(as_channels_last(lf_prev[view]), as_channels_last(targets[view]),
                               rho, intr, m.rotation, m.translation, b.rotation, b.translation,
                               EPS_Z)

    if threads > 1 and len(views) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, views))
    else:
        results = [one(v) for v in views]
    c = lf_cur.channels
    value = 0.0
    gp = np.zeros(6)
    gr = np.zeros(rho.shape)
    used = 0
    total_count = 0
    for loss_sum, count, gd, grho, _, _ in results:
        if count == 0:
            continue
        n = count * c
        value += loss_sum / n
        gp += gd / n
        gr += grho / n
        used += 1
        total_count += count
    if used == 0:
        raise EmptyMask("no view has valid pixels")
    return LossValue(value / used, gp / used, gr / used, total_count)


def _second_differences(x):
    return x[:, 2:] - 2.0 * x[:, 1:-1] + x[:, :-2], x[2:, :] - 2.0 * x[1:-1, :] + x[:-2, :]


def _smooth_level(x):
    dxx, dyy = _second_differences(x)
    n = dxx.size + dyy.size
    g = np.zeros_like(x)
    if n == 0:
        return 0.0, g
    sx, sy = np.sign(dxx), np.sign(dyy)
    g[:, :-2] += sx
    g[:, 1:-1] -= 2.0 * sx
    g[:, 2:] += sx
    g[:-2, :] += sy
    g[1:-1, :] -= 2.0 * sy
    g[2:, :] += sy
    return float((np.abs(dxx).sum() + np.abs(dyy).sum()) / n), g / n


def _upsample_adjoint(g):
    return np.repeat(np.repeat(g, 2, axis=0), 2, axis=1) * 0.25


def smoothness_loss(invdepth, scales: int = 1) -> LossValue:
    """Multi-scale second-order smoothness of an inverse-depth map.

    Level ``l`` of a 2x2 box pyramid contributes ``2^-l`` times the mean
    absolute value of its horizontal and vertical second differences (pooled
    over both directions).  Levels stop early when a dimension turns odd.
    """
    x = np.asarray(invdepth, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch("inverse depth must be 2-D")
    if scales < 1:
        raise ValueError("scales must be >= 1")
    maps = [x]
    while len(maps) < scales and maps[-1].shape[0] % 2 == 0 and maps[-1].shape[1] % 2 == 0 \
            and min(maps[-1].shape) >= 2:
        maps.append(downsample2x(maps[-1]))
    value = 0.0
    grad = None
    for level in range(len(maps) - 1, -1, -1):
        v, g = _smooth_level(maps[level])
        weight = 0.5 ** level
        value += weight * v
        g = weight * g
        grad = g if grad is None else g + _upsample_adjoint(grad)
    return LossValue(value, None, grad, x.size)


def tv_loss(invdepth) -> LossValue:
    """Anisotropic total variation: mean absolute forward difference."""
    x = np.asarray(invdepth, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch("inverse depth must be 2-D")
    dx = x[:, 1:] - x[:, :-1]
    dy = x[1:, :] - x[:-1, :]
    n = dx.size + dy.size
    g = np.zeros_like(x)
    if n == 0:
        return LossValue(0.0, None, g, x.size)
    sx, sy = np.sign(dx), np.sign(dy)
    g[:, 1:] += sx
    g[:, :-1] -= sx
    g[1:, :] += sy
    g[:-1, :] -= sy
    return LossValue(float((np.abs(dx).sum() + np.abs(dy).sum()) / n), None, g / n, x.size)


def regularizer(invdepth, iteration: int, switch_iteration: int, scales: int = 1) -> LossValue:
    """Smoothness before ``switch_iteration``, total variation from then on."""
    if iteration < switch_iteration:
        return smoothness_loss(invdepth, scales)
    return tv_loss(invdepth)


def total_loss(photometric: LossValue, reg: LossValue, weight: float = REGULARIZER_WEIGHT) -> LossValue:
    if weight < 0:
        raise ValueError("weight must be >= 0")
    return photometric + reg.scaled(weight)
