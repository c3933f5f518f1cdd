"""2-D encodings of sparse light fields: volumetric stack, focal stack, tiled EPIs.

Index maps (``N = 2A + 1`` views per arm, views of an arm ordered by ``s``
or ``t`` ascending, channels-first arrays):

* ``tall[c, v*N + k, u] = view(s_k, 0)[v, u, c]``  shape ``(C, N*H, W)``
* ``wide[c, v, u*N + k] = view(0, t_k)[v, u, c]``  shape ``(C, H, N*W)``

A view ``(s, t)`` sits at ``(s*b, t*b, 0)`` in the central camera frame, so a
point imaged at column ``u`` in the central view appears at ``u - s*d`` in
view ``(s, 0)`` with ``d = fx*b/Z``; EPI lines therefore have slope ``-d``
pixels per view step.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels
from .core import CENTER, FIVE_VIEWS, SparseLightField, ViewIndex, as_channels_last, check_views
from .errors import DimensionMismatch

FOCALSTACK_5 = (0.0, 1.0, 2.0, 3.0, 4.0)
FOCALSTACK_9 = tuple(0.5 * i for i in range(9))
#: encoder output channels per branch
DEFAULT_C_OUT = 8


class EncodingKind(str, Enum):
    VOLUMETRIC = "volumetric"
    FOCAL = "focal"
    TILED_EPI_TALL = "tiled_epi_tall"
    TILED_EPI_WIDE = "tiled_epi_wide"
    ENCODED_EPI = "encoded_epi"
    POSE_INPUT = "pose_input"


@dataclass(frozen=True)
class EncodedStack:
    data: np.ndarray
    kind: EncodingKind

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or not np.all(np.isfinite(d)):
            raise ValueError("encoded stack must be a finite (C, H, W) array")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def _chw(img) -> np.ndarray:
    return np.transpose(as_channels_last(img), (2, 0, 1))


def volumetric_stack(lf: SparseLightField, view_order=None) -> EncodedStack:
    """Views stacked along the channel axis, in ``view_order`` (default: all)."""
    views = check_views(lf.views if view_order is None else view_order, lf)
    return EncodedStack(np.concatenate([_chw(lf[v]) for v in views], axis=0), EncodingKind.VOLUMETRIC)


def unstack_volumetric(stack: EncodedStack, view_order, baseline: float, channels: int = 1):
    """Inverse of :func:`volumetric_stack` for a complete plus-pattern ``view_order``."""
    views = {}
    for i, v in enumerate(view_order):
        block = stack.data[i * channels:(i + 1) * channels]
        views[ViewIndex(*v)] = block[0] if channels == 1 else np.transpose(block, (1, 2, 0))
    return SparseLightField(views, baseline)


def refocus(lf: SparseLightField, disparity: float) -> np.ndarray:
    """Shift-and-add refocus onto the plane of inter-view disparity ``disparity``.

    ``out(u, v)`` is the mean over views of ``view(s,t)`` sampled at
    ``(u - s*disparity, v - t*disparity)``; samples outside a view are left
    out of that pixel's mean.
    """
    h, w = lf.height, lf.width
    c = lf.channels
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    # running mean: equal samples reproduce their value exactly
    mean = np.zeros((h * w, c))
    cnt = np.zeros(h * w)
    for view, img in lf.views.items():
        xs = (uu - view.s * disparity).reshape(-1)
        ys = (vv - view.t * disparity).reshape(-1)
        vals, _, _, ok = kernels.bilinear_gather(as_channels_last(img), xs, ys)
        cnt += ok
        mean += np.where(ok[:, None], vals - mean, 0.0) / np.maximum(cnt, 1.0)[:, None]
    out = mean.reshape(h, w, c)
    return out[..., 0] if lf.center.ndim == 2 else out


def focal_stack(lf: SparseLightField, disparities=FOCALSTACK_5) -> EncodedStack:
    disparities = list(disparities)
    if not disparities:
        raise ValueError("need at least one disparity")
    return EncodedStack(np.concatenate([_chw(refocus(lf, d)) for d in disparities], axis=0),
                        EncodingKind.FOCAL)


def sharpness(img) -> float:
    """Mean local variance over 3x3 windows."""
    from scipy.ndimage import uniform_filter
    x = np.asarray(img, dtype=np.float64)
    if x.ndim == 3:
        x = x.mean(axis=2)
    mean = uniform_filter(x, 3, mode="reflect")
    return float(np.mean(uniform_filter(x * x, 3, mode="reflect") - mean * mean))


def extract_epis(lf: SparseLightField):
    """Horizontal and vertical EPIs.

    Returns ``(horizontal, vertical)`` with ``horizontal[c, v]`` the ``N x W``
    slice of image row ``v`` across the horizontal arm (rows ordered by
    ``s``) and ``vertical[c, u]`` the ``H x N`` slice of column ``u`` across
    the vertical arm (columns ordered by ``t``).
    """
    a = lf.arm_length
    hviews = np.stack([_chw(lf[(s, 0)]) for s in range(-a, a + 1)], axis=1)  # (C, N, H, W)
    vviews = np.stack([_chw(lf[(0, t)]) for t in range(-a, a + 1)], axis=1)
    horizontal = np.transpose(hviews, (0, 2, 1, 3))   # (C, H, N, W)
    vertical = np.transpose(vviews, (0, 3, 2, 1))     # (C, W, H, N)
    return np.ascontiguousarray(horizontal), np.ascontiguousarray(vertical)


def tile_epis(horizontal, vertical):
    """Tall ``(C, N*H, W)`` and wide ``(C, H, N*W)`` tilings of the EPIs."""
    c, h, n, w = horizontal.shape
    tall = horizontal.reshape(c, h * n, w)
    wide = np.transpose(vertical, (0, 2, 1, 3)).reshape(c, h, w * n)
    return tall, wide


def untile_epis(tall, wide, n: int):
    c, hn, w = tall.shape
    h = hn // n
    horizontal = tall.reshape(c, h, n, w)
    vertical = np.transpose(wide.reshape(c, h, w, n), (0, 2, 1, 3))
    return horizontal, vertical


def tiled_epi_stacks(lf: SparseLightField):
    tall, wide = tile_epis(*extract_epis(lf))
    return EncodedStack(tall, EncodingKind.TILED_EPI_TALL), EncodedStack(wide, EncodingKind.TILED_EPI_WIDE)


def untile_lightfield(tall, wide, n: int, baseline: float) -> SparseLightField:
    """Rebuild the light field from its two tilings (lossless)."""
    horizontal, vertical = untile_epis(np.asarray(tall), np.asarray(wide), n)
    a = (n - 1) // 2
    views = {}
    for k, s in enumerate(range(-a, a + 1)):
        views[ViewIndex(s, 0)] = np.transpose(horizontal[:, :, k, :], (1, 2, 0))
    for k, t in enumerate(range(-a, a + 1)):
        if t:
            views[ViewIndex(0, t)] = np.transpose(vertical[:, :, :, k], (2, 1, 0))
    if horizontal.shape[0] == 1:
        views = {v: img[..., 0] for v, img in views.items()}
    return SparseLightField(views, baseline)


@dataclass(frozen=True)
class EpiEncoderWeights:
    """Independent ``N x N x C_out`` kernels and biases for the tall and wide branches.

    Kernels are shared across input colour channels (the branch responses of
    each channel are summed).
    """
    tall_kernel: np.ndarray
    tall_bias: np.ndarray
    wide_kernel: np.ndarray
    wide_bias: np.ndarray

    def __post_init__(self):
        for name in ("tall_kernel", "tall_bias", "wide_kernel", "wide_bias"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        for kern, bias in ((self.tall_kernel, self.tall_bias), (self.wide_kernel, self.wide_bias)):
            if kern.ndim != 3 or kern.shape[0] != kern.shape[1] or bias.shape != (kern.shape[2],):
                raise DimensionMismatch("kernel must be (N, N, C_out) with a C_out bias")
        if self.tall_kernel.shape != self.wide_kernel.shape:
            raise DimensionMismatch("tall and wide kernels must have the same shape")

    @property
    def n(self) -> int:
        return self.tall_kernel.shape[0]

    @property
    def c_out(self) -> int:
        return self.tall_kernel.shape[2]

    @classmethod
    def random(cls, n: int, c_out: int = DEFAULT_C_OUT, seed: int = 0, scale: float | None = None):
        """Seeded Glorot-uniform kernels and zero biases."""
        rng = np.random.default_rng(seed)
        limit = np.sqrt(6.0 / (n * n + n * n * c_out)) if scale is None else scale
        return cls(rng.uniform(-limit, limit, (n, n, c_out)), np.zeros(c_out),
                   rng.uniform(-limit, limit, (n, n, c_out)), np.zeros(c_out))

    @classmethod
    def center_picking(cls, n: int, c_out: int = 1):
        """Kernel that is 1 at its centre: each branch returns the central view."""
        k = np.zeros((n, n, c_out))
        k[n // 2, n // 2, :] = 1.0
        return cls(k, np.zeros(c_out), k.copy(), np.zeros(c_out))

    def to_bytes(self) -> bytes:
        """``b"EPIW"``, uint32 version/N/C_out, then little-endian float64
        tall kernel (N, N, C_out row-major), tall bias, wide kernel, wide bias."""
        head = b"EPIW" + struct.pack("<III", 1, self.n, self.c_out)
        body = np.concatenate([self.tall_kernel.ravel(), self.tall_bias, self.wide_kernel.ravel(),
                               self.wide_bias]).astype("<f8")
        return head + body.tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "EpiEncoderWeights":
        if len(raw) < 16 or raw[:4] != b"EPIW":
            raise ValueError("not an EPI encoder weight file")
        version, n, c_out = struct.unpack("<III", raw[4:16])
        if version != 1:
            raise ValueError(f"unsupported weight file version {version}")
        expected = 2 * (n * n * c_out + c_out)
        body = np.frombuffer(raw[16:], dtype="<f8")
        if body.size != expected:
            raise ValueError(f"weight file holds {body.size} values, expected {expected}")
        k = n * n * c_out
        tk, tb = body[:k], body[k:k + c_out]
        wk, wb = body[k + c_out:2 * k + c_out], body[2 * k + c_out:]
        return cls(tk.reshape(n, n, c_out), tb, wk.reshape(n, n, c_out), wb)


def _conv_tall(tall, kernel, n):
    # out[o, v, u] = sum_{i,j} k[i, j, o] * tall[v*n + i, u + j - a]
    c, hn, w = tall.shape
    a = n // 2
    padded = np.pad(tall, ((0, 0), (0, 0), (a, a)))
    blocks = padded.reshape(c, hn // n, n, w + 2 * a)
    win = np.lib.stride_tricks.sliding_window_view(blocks, n, axis=3)  # (c, h, n_i, w, n_j)
    return np.einsum("chiwj,ijo->ohw", win, kernel)


def _conv_wide(wide, kernel, n):
    # out[o, v, u] = sum_{i,j} k[i, j, o] * wide[v + i - a, u*n + j]
    c, h, wn = wide.shape
    a = n // 2
    padded = np.pad(wide, ((0, 0), (a, a), (0, 0)))
    blocks = padded.reshape(c, h + 2 * a, wn // n, n)
    win = np.stack([blocks[:, i:i + h] for i in range(n)], axis=1)     # (c, n_i, h, w, n_j)
    return np.einsum("cihwj,ijo->ohw", win, kernel)


def encoder_preactivations(lf: SparseLightField, weights: EpiEncoderWeights):
    n = lf.n_per_arm
    if weights.n != n:
        raise DimensionMismatch(f"kernel size {weights.n} does not match {n} views per arm")
    tall, wide = tile_epis(*extract_epis(lf))
    zt = _conv_tall(tall, weights.tall_kernel, n) + weights.tall_bias[:, None, None]
    zw = _conv_wide(wide, weights.wide_kernel, n) + weights.wide_bias[:, None, None]
    return tall, wide, zt, zw


def encode_epi_stack(lf: SparseLightField, weights: EpiEncoderWeights) -> EncodedStack:
    """Strided ``N x N`` convolution of both tilings, ReLU, stacked (tall first)."""
    _, _, zt, zw = encoder_preactivations(lf, weights)
    out = np.concatenate([np.maximum(zt, 0.0), np.maximum(zw, 0.0)], axis=0)
    return EncodedStack(out, EncodingKind.ENCODED_EPI)


def encoder_weight_gradients(lf: SparseLightField, weights: EpiEncoderWeights, grad_output):
    """Gradients of ``sum(grad_output * encode_epi_stack(lf, weights))`` w.r.t. the weights."""
    n = weights.n
    tall, wide, zt, zw = encoder_preactivations(lf, weights)
    g = np.asarray(grad_output, dtype=np.float64)
    co = weights.c_out
    gt = g[:co] * (zt > 0)
    gw = g[co:] * (zw > 0)
    a = n // 2
    c, hn, w = tall.shape
    pt = np.pad(tall, ((0, 0), (0, 0), (a, a))).reshape(c, hn // n, n, w + 2 * a)
    win_t = np.lib.stride_tricks.sliding_window_view(pt, n, axis=3)
    d_tall = np.einsum("chiwj,ohw->ijo", win_t, gt)
    c, h, wn = wide.shape
    pw = np.pad(wide, ((0, 0), (a, a), (0, 0))).reshape(c, h + 2 * a, wn // n, n)
    win_w = np.stack([pw[:, i:i + h] for i in range(n)], axis=1)
    d_wide = np.einsum("cihwj,ohw->ijo", win_w, gw)
    return EpiEncoderWeights(d_tall, gt.sum(axis=(1, 2)), d_wide, gw.sum(axis=(1, 2)))


def depth_input(lf: SparseLightField, weights: EpiEncoderWeights) -> EncodedStack:
    return encode_epi_stack(lf, weights)


def pose_input(lf: SparseLightField, weights: EpiEncoderWeights) -> EncodedStack:
    """Encoded EPI stack followed by the raw centre and its four neighbours."""
    views = [v for v in FIVE_VIEWS if v in lf] or [CENTER]
    enc = encode_epi_stack(lf, weights)
    vol = volumetric_stack(lf, views)
    return EncodedStack(np.concatenate([enc.data, vol.data], axis=0), EncodingKind.POSE_INPUT)


def _row_shift(a, b, max_shift):
    """Shift ``delta`` minimising ``sum (b(x) - a(x - delta))^2`` over the rows of ``a``, ``b``."""
    from scipy.optimize import minimize_scalar
    w = a.shape[-1]
    x = np.arange(w, dtype=np.float64)
    a0 = a - a.mean(axis=-1, keepdims=True)
    b0 = b - b.mean(axis=-1, keepdims=True)
    corr = [np.sum(a0[..., max(0, -s):w - max(0, s)] * b0[..., max(0, s):w - max(0, -s)])
            for s in range(-max_shift, max_shift + 1)]
    start = float(np.argmax(corr) - max_shift)
    lo = int(np.ceil(max_shift + 1))
    core = slice(lo, w - lo)

    def ssd(delta):
        shifted = np.stack([np.interp(x[core] - delta, x, row) for row in a.reshape(-1, w)])
        return float(np.sum((b.reshape(-1, w)[:, core] - shifted) ** 2))

    res = minimize_scalar(ssd, bounds=(start - 1.0, start + 1.0), method="bounded",
                          options={"xatol": 1e-6})
    return float(res.x)


def epi_slope(horizontal, max_shift: int = 12) -> float:
    """Median over image rows of the sub-pixel shift between adjacent EPI rows.

    ``horizontal`` is ``(C, H, N, W)`` from :func:`extract_epis`.  The value
    is the column offset of view ``s + 1`` relative to view ``s`` (pixels per
    view step); a fronto-parallel plane at depth ``Z`` gives ``-fx*b/Z``.
    Each image row is refined from its cross-correlation peak by bounded
    minimisation of the linearly interpolated squared difference.
    """
    epi = np.asarray(horizontal, dtype=np.float64)
    c, h, n, w = epi.shape
    if n < 2:
        raise ValueError("need at least two views per arm")
    shifts = []
    for v in range(h):
        rows = epi[:, v]                       # (C, N, W)
        shifts.append(_row_shift(rows[:, :-1].reshape(-1, w), rows[:, 1:].reshape(-1, w), max_shift))
    return float(np.median(shifts))
