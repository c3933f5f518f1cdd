"""Differentiable view synthesis by depth/pose reprojection and bilinear sampling.

Pixels of a target view are back-projected with their inverse depth, moved by
a chain ``X' = B T A X`` and projected into a source image:

* single warp: ``A = B = I`` (central view to central view);
* multi warp, ``anchor="view"``: ``A = cT_s``, ``B = cT_s^-1``; the target
  is view ``s`` with its own inverse depth;
* multi warp, ``anchor="central"`` (default): ``A = I``, ``B = cT_s^-1``; the
  target pixels and inverse depth are those of the central view and the
  source is view ``s`` at the previous time.  This is the same ray
  correspondence as ``anchor="view"`` with target pixels indexed in the
  central image, and it is the variant that pins metric scale under pure
  translation.

Pose derivatives are taken w.r.t. a left perturbation ``T <- exp(d) T`` with
``d = (rho, phi)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import (
    CENTER,
    Intrinsics,
    RigidTransform,
    SparseLightField,
    SubApertureLayout,
    ViewIndex,
    as_channels_last,
    as_inverse_depth,
    backproject_map,
    check_views,
)
from .errors import MissingView

#: cheirality threshold on transformed depth, metres
EPS_Z = 1e-6

ANCHORS = ("central", "view")
DEPTH_MODES = ("shared", "splat")


@dataclass(frozen=True)
class BilinearSample:
    value: np.ndarray
    valid: bool
    dx: np.ndarray
    dy: np.ndarray


def bilinear_sample(img, x: float, y: float) -> BilinearSample:
    """Sample one point; values are per channel (length-1 for grayscale)."""
    vals, gx, gy, valid = kernels.bilinear_gather(as_channels_last(img), np.array([x], float),
                                                  np.array([y], float))
    return BilinearSample(vals[0], bool(valid[0]), gx[0], gy[0])


@dataclass(frozen=True)
class Projection:
    """Source-image coordinates for every target pixel.

    ``du_dpose`` is ``(H, W, 2, 6)`` (rows ``u``, ``v``), ``du_dinvdepth`` is
    ``(H, W, 2)``; both only when requested.
    """
    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray
    depth: np.ndarray
    du_dpose: np.ndarray | None = None
    du_dinvdepth: np.ndarray | None = None


@dataclass(frozen=True)
class WarpResult:
    warped: np.ndarray
    validity: np.ndarray
    jac_pose: np.ndarray | None = None
    jac_invdepth: np.ndarray | None = None


def chain_transforms(pose: RigidTransform, inner: RigidTransform | None = None,
                     outer: RigidTransform | None = None):
    """Composite ``B T A`` plus the outer factor ``B`` used by the derivatives."""
    inner = inner or RigidTransform.identity()
    outer = outer or RigidTransform.identity()
    return outer @ pose @ inner, outer


def _project(k: Intrinsics, pose, invdepth, inner=None, outer=None, jacobians=False,
             valid_in=None) -> Projection:
    rho = as_inverse_depth(invdepth)
    m, b = chain_transforms(pose, inner, outer)
    x = backproject_map(k, rho)
    xp = m.apply(x)
    z = xp[..., 2]
    valid = z > EPS_Z
    if valid_in is not None:
        valid &= valid_in
    zs = np.where(valid, z, 1.0)
    # displacement form on normalised rays: the identity motion maps every
    # pixel to itself exactly
    h, w = rho.shape
    xn = ((np.arange(w, dtype=np.float64) - k.cx) / k.fx)[None, :]
    yn = ((np.arange(h, dtype=np.float64) - k.cy) / k.fy)[:, None]
    r, t = m.rotation, m.translation
    qx = r[0, 0] * xn + r[0, 1] * yn + r[0, 2] + rho * t[0]
    qy = r[1, 0] * xn + r[1, 1] * yn + r[1, 2] + rho * t[1]
    qz = np.where(valid, r[2, 0] * xn + r[2, 1] * yn + r[2, 2] + rho * t[2], 1.0)
    u = np.where(valid, np.arange(w, dtype=np.float64)[None, :] + k.fx * (qx / qz - xn), np.nan)
    v = np.where(valid, np.arange(h, dtype=np.float64)[:, None] + k.fy * (qy / qz - yn), np.nan)
    if not jacobians:
        return Projection(u, v, valid, z)
    iz = 1.0 / zs
    dproj = np.zeros(z.shape + (2, 3))
    dproj[..., 0, 0] = k.fx * iz
    dproj[..., 0, 2] = -k.fx * xp[..., 0] * iz * iz
    dproj[..., 1, 1] = k.fy * iz
    dproj[..., 1, 2] = -k.fy * xp[..., 1] * iz * iz
    # dX'/dd = B_R [I | -[Y]x],  Y = B^-1 X'
    y = b.inverse().apply(xp)
    dxd = np.zeros(z.shape + (3, 6))
    dxd[..., :, :3] = b.rotation
    skew = np.zeros(z.shape + (3, 3))
    skew[..., 0, 1], skew[..., 0, 2] = y[..., 2], -y[..., 1]
    skew[..., 1, 0], skew[..., 1, 2] = -y[..., 2], y[..., 0]
    skew[..., 2, 0], skew[..., 2, 1] = y[..., 1], -y[..., 0]
    dxd[..., :, 3:] = b.rotation @ skew
    du_dpose = dproj @ dxd
    dx_drho = -(x @ m.rotation.T) / rho[..., None]
    du_drho = np.einsum("...ij,...j->...i", dproj, dx_drho)
    du_dpose[~valid] = 0.0
    du_drho[~valid] = 0.0
    return Projection(u, v, valid, z, du_dpose, du_drho)


def project_pixels_single(k: Intrinsics, pose: RigidTransform, invdepth, jacobians=False) -> Projection:
    """Where each pixel of frame ``t`` lands in frame ``t-1``.

    ``pose`` is ``T_{t-1<-t}``, ``invdepth`` the inverse depth of frame ``t``.
    """
    return _project(k, pose, invdepth, jacobians=jacobians)


def project_pixels_multi(k: Intrinsics, layout: SubApertureLayout, view, pose: RigidTransform,
                         invdepth, anchor: str = "central", jacobians=False, valid=None) -> Projection:
    """Projection into sub-aperture ``view`` of the previous frame.

    With ``anchor="central"`` ``invdepth`` is the central map and the output
    grid is the central image; with ``anchor="view"`` it is the inverse depth
    of ``view`` itself (see :func:`transfer_invdepth`).
    """
    offset = layout[view]
    if anchor == "central":
        return _project(k, pose, invdepth, None, offset.inverse(), jacobians, valid)
    if anchor == "view":
        return _project(k, pose, invdepth, offset, offset.inverse(), jacobians, valid)
    raise ValueError(f"anchor must be one of {ANCHORS}")


def transfer_invdepth(k: Intrinsics, layout: SubApertureLayout, view, central_invdepth,
                      mode: str = "shared"):
    """Inverse depth of sub-aperture ``view`` derived from the central map.

    ``"shared"`` reuses the central value at the same pixel; ``"splat"``
    forward-projects every central pixel into ``view`` (nearest pixel, nearest
    surface wins).  Returns ``(invdepth, valid)``; splat holes are invalid and
    filled with the shared value.
    """
    rho = as_inverse_depth(central_invdepth)
    if mode == "shared":
        return rho, np.ones(rho.shape, dtype=bool)
    if mode != "splat":
        raise ValueError(f"mode must be one of {DEPTH_MODES}")
    h, w = rho.shape
    pts = layout[view].inverse().apply(backproject_map(k, rho)).reshape(-1, 3)
    z = pts[:, 2]
    ok = z > EPS_Z
    zs = np.where(ok, z, 1.0)
    ui = np.rint(k.fx * pts[:, 0] / zs + k.cx)
    vi = np.rint(k.fy * pts[:, 1] / zs + k.cy)
    ok &= (ui >= 0) & (ui <= w - 1) & (vi >= 0) & (vi <= h - 1)
    dest = (vi[ok] * w + ui[ok]).astype(np.intp)
    zk = z[ok]
    order = np.lexsort((zk, dest))
    dest, zk = dest[order], zk[order]
    first = np.ones(dest.shape, dtype=bool)
    first[1:] = dest[1:] != dest[:-1]
    out = rho.copy().reshape(-1)
    valid = np.zeros(h * w, dtype=bool)
    out[dest[first]] = 1.0 / zk[first]
    valid[dest[first]] = True
    return out.reshape(h, w), valid.reshape(h, w)


def warp_image(src, projection: Projection) -> WarpResult:
    """Resample ``src`` at projected coordinates; chain Jacobians if present."""
    img = as_channels_last(src)
    h, w = projection.u.shape
    xs = np.where(projection.valid, projection.u, -1.0).reshape(-1)
    ys = np.where(projection.valid, projection.v, -1.0).reshape(-1)
    vals, gx, gy, ok = kernels.bilinear_gather(img, xs, ys)
    valid = ok.reshape(h, w) & projection.valid
    c = img.shape[2]
    warped = vals.reshape(h, w, c)
    jp = jr = None
    if projection.du_dpose is not None:
        gx = gx.reshape(h, w, c, 1)
        gy = gy.reshape(h, w, c, 1)
        jp = gx * projection.du_dpose[:, :, None, 0, :] + gy * projection.du_dpose[:, :, None, 1, :]
        jr = (gx[..., 0] * projection.du_dinvdepth[:, :, None, 0]
              + gy[..., 0] * projection.du_dinvdepth[:, :, None, 1])
        jp[~valid] = 0.0
        jr[~valid] = 0.0
    if np.ndim(src) == 2:
        warped = warped[..., 0]
        if jp is not None:
            jp, jr = jp[:, :, 0], jr[:, :, 0]
    return WarpResult(warped, valid, jp, jr)


def warp_targets(lf_t: SparseLightField, view_set, anchor: str = "central") -> dict:
    """Images each warped view is compared against."""
    views = check_views(view_set, lf_t)
    if anchor == "central":
        return {v: lf_t.center for v in views}
    return {v: lf_t[v] for v in views}


def warp_lightfield(lf_prev: SparseLightField, k: Intrinsics, layout: SubApertureLayout,
                    pose: RigidTransform, invdepth, view_set, anchor: str = "central",
                    depth_mode: str = "shared", jacobians=False) -> dict:
    """Warp each sub-aperture of ``lf_prev`` in ``view_set`` to the current time.

    ``invdepth`` is the central map, or (``anchor="view"`` only) a mapping
    from view to that view's own map.
    """
    views = check_views(view_set, layout, lf_prev)
    out = {}
    for view in views:
        valid = None
        if anchor == "view":
            if isinstance(invdepth, dict):
                if view not in invdepth:
                    raise MissingView(f"no inverse depth for view {view}")
                rho = invdepth[view]
            else:
                rho, valid = transfer_invdepth(k, layout, view, invdepth, depth_mode)
        else:
            rho = invdepth[CENTER] if isinstance(invdepth, dict) else invdepth
        proj = project_pixels_multi(k, layout, view, pose, rho, anchor, jacobians, valid)
        out[ViewIndex(*view)] = warp_image(lf_prev[view], proj)
    return out
