# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; see ``_kernels_py`` for the reference semantics."""
import numpy as np

from libc.math cimport floor

NAME = "cython"


cdef inline bint _sample(const double[:, :, ::1] img, double x, double y,
                         double* val, double* gx, double* gy) noexcept nogil:
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], c = img.shape[2]
    cdef Py_ssize_t x0, x1, y0, y1, k
    cdef double ax, ay, i00, i01, i10, i11, top, bot
    if not (x >= 0.0 and x <= w - 1 and y >= 0.0 and y <= h - 1):
        return 0
    if w == 1:
        x0 = 0
        x1 = 0
        ax = 0.0
    else:
        x0 = <Py_ssize_t>floor(x)
        if x0 > w - 2:
            x0 = w - 2
        x1 = x0 + 1
        ax = x - x0
    if h == 1:
        y0 = 0
        y1 = 0
        ay = 0.0
    else:
        y0 = <Py_ssize_t>floor(y)
        if y0 > h - 2:
            y0 = h - 2
        y1 = y0 + 1
        ay = y - y0
    for k in range(c):
        i00 = img[y0, x0, k]
        i01 = img[y0, x1, k]
        i10 = img[y1, x0, k]
        i11 = img[y1, x1, k]
        top = i00 + ax * (i01 - i00)
        bot = i10 + ax * (i11 - i10)
        val[k] = top + ay * (bot - top)
        gx[k] = (1.0 - ay) * (i01 - i00) + ay * (i11 - i10) if w > 1 else 0.0
        gy[k] = bot - top if h > 1 else 0.0
    return 1


def bilinear_gather(const double[:, :, ::1] img, xs, ys):
    cdef const double[::1] xv = np.ascontiguousarray(xs, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(ys, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], c = img.shape[2], i
    vals_a = np.zeros((n, c))
    gx_a = np.zeros((n, c))
    gy_a = np.zeros((n, c))
    valid_a = np.zeros(n, dtype=np.bool_)
    cdef double[:, ::1] vals = vals_a
    cdef double[:, ::1] gx = gx_a
    cdef double[:, ::1] gy = gy_a
    cdef unsigned char[::1] valid = valid_a.view(np.uint8)
    with nogil:
        for i in range(n):
            valid[i] = _sample(img, xv[i], yv[i], &vals[i, 0], &gx[i, 0], &gy[i, 0])
    return vals_a, gx_a, gy_a, valid_a


def warp_l1(const double[:, :, ::1] src, const double[:, :, ::1] tgt, const double[:, ::1] rho,
            intr, m_rot, m_trans, b_rot, b_trans, double eps_z, mask=None, bint want_warped=False):
    cdef Py_ssize_t h = tgt.shape[0], w = tgt.shape[1], c = tgt.shape[2]
    cdef Py_ssize_t i, j, k, a
    cdef double fx = intr[0], fy = intr[1], cx = intr[2], cy = intr[3]
    cdef double M[3][3]
    cdef double mt[3]
    cdef double B[3][3]
    cdef double bt[3]
    for i in range(3):
        mt[i] = m_trans[i]
        bt[i] = b_trans[i]
        for j in range(3):
            M[i][j] = m_rot[i, j]
            B[i][j] = b_rot[i, j]
    cdef const unsigned char[:, ::1] mk
    cdef bint has_mask = mask is not None
    if has_mask:
        mk = np.ascontiguousarray(mask, dtype=np.uint8)
    else:
        mk = np.ones((1, 1), dtype=np.uint8)

    grad_rho_a = np.zeros((h, w))
    valid_a = np.zeros((h, w), dtype=np.bool_)
    row_loss_a = np.zeros(h)
    row_count_a = np.zeros(h, dtype=np.int64)
    row_gd_a = np.zeros((h, 6))
    warped_a = np.zeros((h, w, c)) if want_warped else np.zeros((1, 1, c))
    vals_a = np.zeros(c)
    gxs_a = np.zeros(c)
    gys_a = np.zeros(c)
    cdef double[:, ::1] grad_rho = grad_rho_a
    cdef unsigned char[:, ::1] valid = valid_a.view(np.uint8)
    cdef double[::1] row_loss = row_loss_a
    cdef long long[::1] row_count = row_count_a
    cdef double[:, ::1] row_gd = row_gd_a
    cdef double[:, :, ::1] warped = warped_a
    cdef double[::1] vals = vals_a
    cdef double[::1] gxs = gxs_a
    cdef double[::1] gys = gys_a

    cdef double r, z, X0, X1, X2, P0, P1, P2, iz, us, vs, acc_u, acc_v, s
    cdef double xn, yn, q0, q1, q2
    cdef double g0, g1, g2, w0, w1, w2, Y0, Y1, Y2, d0, d1, d2, lsum
    cdef long long cnt
    cdef double gd[6]
    with nogil:
        for i in range(h):
            lsum = 0.0
            cnt = 0
            for a in range(6):
                gd[a] = 0.0
            for j in range(w):
                if has_mask and not mk[i, j]:
                    continue
                r = rho[i, j]
                z = 1.0 / r
                X0 = (j - cx) / fx * z
                X1 = (i - cy) / fy * z
                X2 = z
                P0 = M[0][0] * X0 + M[0][1] * X1 + M[0][2] * X2 + mt[0]
                P1 = M[1][0] * X0 + M[1][1] * X1 + M[1][2] * X2 + mt[1]
                P2 = M[2][0] * X0 + M[2][1] * X1 + M[2][2] * X2 + mt[2]
                if not P2 > eps_z:
                    continue
                iz = 1.0 / P2
                # displacement form on the normalised ray (exact for identity motion)
                xn = (j - cx) / fx
                yn = (i - cy) / fy
                q0 = M[0][0] * xn + M[0][1] * yn + M[0][2] + r * mt[0]
                q1 = M[1][0] * xn + M[1][1] * yn + M[1][2] + r * mt[1]
                q2 = M[2][0] * xn + M[2][1] * yn + M[2][2] + r * mt[2]
                us = j + fx * (q0 / q2 - xn)
                vs = i + fy * (q1 / q2 - yn)
                if not _sample(src, us, vs, &vals[0], &gxs[0], &gys[0]):
                    continue
                valid[i, j] = 1
                cnt += 1
                acc_u = 0.0
                acc_v = 0.0
                for k in range(c):
                    if want_warped:
                        warped[i, j, k] = vals[k]
                    s = vals[k] - tgt[i, j, k]
                    if s > 0:
                        lsum += s
                        acc_u += gxs[k]
                        acc_v += gys[k]
                    elif s < 0:
                        lsum -= s
                        acc_u -= gxs[k]
                        acc_v -= gys[k]
                g0 = acc_u * fx * iz
                g1 = acc_v * fy * iz
                g2 = -(acc_u * fx * P0 + acc_v * fy * P1) * iz * iz
                # dX'/drho = -(M_R X) / rho
                d0 = M[0][0] * X0 + M[0][1] * X1 + M[0][2] * X2
                d1 = M[1][0] * X0 + M[1][1] * X1 + M[1][2] * X2
                d2 = M[2][0] * X0 + M[2][1] * X1 + M[2][2] * X2
                grad_rho[i, j] = -(g0 * d0 + g1 * d1 + g2 * d2) / r
                # Y = B_R^T (X' - B_t), w = B_R^T g
                Y0 = B[0][0] * (P0 - bt[0]) + B[1][0] * (P1 - bt[1]) + B[2][0] * (P2 - bt[2])
                Y1 = B[0][1] * (P0 - bt[0]) + B[1][1] * (P1 - bt[1]) + B[2][1] * (P2 - bt[2])
                Y2 = B[0][2] * (P0 - bt[0]) + B[1][2] * (P1 - bt[1]) + B[2][2] * (P2 - bt[2])
                w0 = B[0][0] * g0 + B[1][0] * g1 + B[2][0] * g2
                w1 = B[0][1] * g0 + B[1][1] * g1 + B[2][1] * g2
                w2 = B[0][2] * g0 + B[1][2] * g1 + B[2][2] * g2
                gd[0] += w0
                gd[1] += w1
                gd[2] += w2
                gd[3] += Y1 * w2 - Y2 * w1
                gd[4] += Y2 * w0 - Y0 * w2
                gd[5] += Y0 * w1 - Y1 * w0
            row_loss[i] = lsum
            row_count[i] = cnt
            for a in range(6):
                row_gd[i, a] = gd[a]
    loss_sum = float(np.sum(row_loss_a))
    count = int(row_count_a.sum())
    grad_delta = row_gd_a.sum(axis=0)
    return loss_sum, count, grad_delta, grad_rho_a, (warped_a if want_warped else None), valid_a
