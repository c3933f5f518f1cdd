"""Vectorised numpy implementations of the hot kernels.

Same signatures and semantics as the compiled ``_kernels`` module; used when
the extension is not built or ``SPARSELF_BACKEND=python`` is set.
"""
import numpy as np

NAME = "python"


def _cells(coord, size):
    if size == 1:
        c0 = np.zeros(coord.shape, dtype=np.intp)
        return c0, c0, np.zeros_like(coord)
    c0 = np.clip(np.floor(coord), 0, size - 2).astype(np.intp)
    return c0, c0 + 1, coord - c0


def bilinear_gather(img, xs, ys):
    """Bilinear samples of ``img`` (H, W, C) at points ``(xs, ys)``.

    Returns ``(values, d/dx, d/dy, valid)``; values and derivatives are
    ``(N, C)`` and zero where the point is outside ``[0, W-1] x [0, H-1]``.
    """
    h, w, c = img.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    valid = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    n = xs.shape[0]
    vals = np.zeros((n, c))
    gx = np.zeros((n, c))
    gy = np.zeros((n, c))
    if not valid.any():
        return vals, gx, gy, valid
    x = xs[valid]
    y = ys[valid]
    x0, x1, ax = _cells(x, w)
    y0, y1, ay = _cells(y, h)
    i00 = img[y0, x0]
    i01 = img[y0, x1]
    i10 = img[y1, x0]
    i11 = img[y1, x1]
    ax = ax[:, None]
    ay = ay[:, None]
    top = i00 + ax * (i01 - i00)
    bot = i10 + ax * (i11 - i10)
    vals[valid] = top + ay * (bot - top)
    if w > 1:
        gx[valid] = (1.0 - ay) * (i01 - i00) + ay * (i11 - i10)
    if h > 1:
        gy[valid] = bot - top
    return vals, gx, gy, valid


def warp_l1(src, tgt, rho, intr, m_rot, m_trans, b_rot, b_trans, eps_z, mask=None, want_warped=False):
    """Masked L1 photometric residual of one warped view and its gradients.

    Target pixel ``p`` (inverse depth ``rho[p]``) is back-projected to ``X``,
    moved by ``X' = M X`` with ``M = B exp(d) T A`` and sampled in ``src``.
    Returns ``(loss_sum, count, grad_delta, grad_rho, warped, valid)`` where
    ``loss_sum`` sums ``|src(X') - tgt(p)|`` over valid pixels and channels,
    ``grad_delta`` is the gradient of ``loss_sum`` w.r.t. the left
    perturbation ``d`` and ``grad_rho`` w.r.t. each inverse-depth pixel.
    """
    h, w, c = tgt.shape
    fx, fy, cx, cy = (float(v) for v in intr)
    u = np.arange(w, dtype=np.float64)
    v = np.arange(h, dtype=np.float64)
    z = 1.0 / rho
    X = np.empty((h, w, 3))
    X[..., 0] = ((u[None, :] - cx) / fx) * z
    X[..., 1] = ((v[:, None] - cy) / fy) * z
    X[..., 2] = z
    X = X.reshape(-1, 3)
    Xp = X @ np.asarray(m_rot).T + np.asarray(m_trans)
    zp = Xp[:, 2]
    front = zp > eps_z
    if mask is not None:
        front &= np.asarray(mask, dtype=bool).reshape(-1)
    iz = np.where(front, 1.0 / np.where(front, zp, 1.0), 0.0)
    # displacement form on the normalised ray (exact for identity motion)
    xn = np.broadcast_to(((u - cx) / fx)[None, :], (h, w)).reshape(-1)
    yn = np.broadcast_to(((v - cy) / fy)[:, None], (h, w)).reshape(-1)
    mr, mt = np.asarray(m_rot), np.asarray(m_trans)
    rr = rho.reshape(-1)
    q0 = mr[0, 0] * xn + mr[0, 1] * yn + mr[0, 2] + rr * mt[0]
    q1 = mr[1, 0] * xn + mr[1, 1] * yn + mr[1, 2] + rr * mt[1]
    q2 = np.where(front, mr[2, 0] * xn + mr[2, 1] * yn + mr[2, 2] + rr * mt[2], 1.0)
    uu = np.broadcast_to(u[None, :], (h, w)).reshape(-1)
    vv = np.broadcast_to(v[:, None], (h, w)).reshape(-1)
    us = np.where(front, uu + fx * (q0 / q2 - xn), -1.0)
    vs = np.where(front, vv + fy * (q1 / q2 - yn), -1.0)
    vals, gx, gy, valid = bilinear_gather(src, us, vs)
    valid &= front
    r = vals - tgt.reshape(-1, c)
    r[~valid] = 0.0
    loss_sum = float(np.abs(r).sum())
    count = int(valid.sum())
    sgn = np.sign(r)
    acc_u = (sgn * gx).sum(axis=1)
    acc_v = (sgn * gy).sum(axis=1)
    gX = np.zeros((X.shape[0], 3))
    gX[:, 0] = acc_u * fx * iz
    gX[:, 1] = acc_v * fy * iz
    gX[:, 2] = -(acc_u * fx * Xp[:, 0] + acc_v * fy * Xp[:, 1]) * iz * iz
    gX[~valid] = 0.0
    # dX'/drho = -M_R X / rho
    dXp = -(X @ np.asarray(m_rot).T) / rho.reshape(-1, 1)
    grad_rho = np.einsum("ij,ij->i", gX, dXp).reshape(h, w)
    b_rot = np.asarray(b_rot)
    Y = (Xp - np.asarray(b_trans)) @ b_rot
    wv = gX @ b_rot
    grad_delta = np.concatenate([wv.sum(axis=0), np.cross(Y, wv).sum(axis=0)])
    warped = vals.reshape(h, w, c) if want_warped else None
    return loss_sum, count, grad_delta, grad_rho, warped, valid.reshape(h, w)
