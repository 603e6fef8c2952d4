"""Raster primitives shared by the whole pipeline.

Images are plain float64 numpy arrays, ``(H, W)`` for one channel or
``(H, W, 3)`` for colour.  Kernels are odd-sided square arrays that are
nonnegative and sum to one.  Every operation here is a pure function.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from . import _kernels
from .errors import InvalidInput, NoBimodalStructure

KERNEL_SUM_TOL = 1e-6


@dataclass
class FlowField:
    """Per-pixel displacement. Output pixel (x, y) samples the source at (x+dx, y+dy)."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        self.dx = np.asarray(self.dx, dtype=np.float64)
        self.dy = np.asarray(self.dy, dtype=np.float64)
        if self.dx.shape != self.dy.shape or self.dx.ndim != 2:
            raise InvalidInput("flow components must be 2D arrays of equal shape")
        if not (np.all(np.isfinite(self.dx)) and np.all(np.isfinite(self.dy))):
            raise InvalidInput("flow contains non-finite displacements")

    @property
    def shape(self):
        return self.dx.shape

    @classmethod
    def zeros(cls, height, width):
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @classmethod
    def uniform(cls, height, width, dx, dy):
        return cls(np.full((height, width), float(dx)), np.full((height, width), float(dy)))

    @classmethod
    def _raw(cls, dx, dy):
        # internal fast path for arrays the caller already knows are valid
        v = object.__new__(cls)
        v.dx = dx
        v.dy = dy
        return v

    def __add__(self, other):
        return FlowField._raw(self.dx + other.dx, self.dy + other.dy)


def as_image(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] not in (1, 3)):
        raise InvalidInput(f"expected (H, W) or (H, W, 3) image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise InvalidInput("image contains non-finite values")
    return img


def _require_gray(img, what):
    img = as_image(img)
    if img.ndim == 3:
        if img.shape[2] != 1:
            raise InvalidInput(f"{what} needs a single-channel image")
        img = img[..., 0]
    return np.ascontiguousarray(img)


def _per_channel(fn, img, *args):
    if img.ndim == 2:
        return fn(img, *args)
    return np.stack([fn(np.ascontiguousarray(img[..., c]), *args) for c in range(img.shape[2])], axis=-1)


def validate_kernel(k, tol=KERNEL_SUM_TOL):
    """Check the PSF contract (odd square support, nonnegative, unit sum) and return float64 copy."""
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
        raise InvalidInput(f"kernel must be odd-sided square, got shape {k.shape}")
    if not np.all(np.isfinite(k)) or np.any(k < 0):
        raise InvalidInput("kernel weights must be finite and nonnegative")
    if abs(k.sum() - 1.0) > tol:
        raise InvalidInput(f"kernel must sum to 1 (got {k.sum():.9f})")
    return k


def delta_kernel(side):
    if side % 2 == 0 or side < 1:
        raise InvalidInput("kernel side must be odd and positive")
    k = np.zeros((side, side))
    k[side // 2, side // 2] = 1.0
    return k


def gaussian_kernel(side, sigma):
    r = side // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma**2))
    return g / g.sum()


# ----------------------------------------------------------- convolution

def conv2d(img, k):
    """True 2D convolution (kernel flipped) with edge replication; same-size output."""
    img = as_image(img)
    k = validate_kernel(k)
    r = k.shape[0] // 2

    def one(plane):
        padded = np.pad(plane, r, mode="edge")
        return _kernels.conv_valid(padded, k)

    return _per_channel(one, img)


def edge_pad_adjoint(g, r):
    """Adjoint of ``np.pad(x, r, mode='edge')``: fold the apron back onto the border pixels."""
    if r == 0:
        return g.copy()
    g = g.copy()
    g[:, r] += g[:, :r].sum(axis=1)
    g[:, -r - 1] += g[:, -r:].sum(axis=1)
    g = g[:, r:-r]
    g[r, :] += g[:r, :].sum(axis=0)
    g[-r - 1, :] += g[-r:, :].sum(axis=0)
    return g[r:-r, :]


class FftConvolver:
    """Replicate-border convolution with cached FFTs and an exact reverse pass.

    Used inside the optimisation loop where one forward and one backward
    pass per iteration dominate the cost.
    """

    def __init__(self, height, width, side):
        self.h, self.w, self.side = height, width, side
        self.r = side // 2
        # N >= H + 2r suffices: with the upstream gradient placed at offset 2r,
        # neither the valid output, the kernel gradient nor the input adjoint wraps
        self.fh = sfft.next_fast_len(height + 2 * self.r, real=True)
        self.fw = sfft.next_fast_len(width + 2 * self.r, real=True)
        self._pf = None
        self._kf = None

    def forward(self, latent, k, reuse_latent=False):
        """Same-size convolution; ``reuse_latent`` skips the latent FFT when it has not changed."""
        r, h, w = self.r, self.h, self.w
        if not (reuse_latent and self._pf is not None):
            padded = np.pad(latent, r, mode="edge")
            self._pf = sfft.rfft2(padded, s=(self.fh, self.fw))
        self._kf = sfft.rfft2(k, s=(self.fh, self.fw))
        full = sfft.irfft2(self._pf * self._kf, s=(self.fh, self.fw))
        return full[2 * r:2 * r + h, 2 * r:2 * r + w]

    def backward(self, g, need_latent=True):
        """Return (d loss/d latent, d loss/d kernel) for upstream gradient ``g``."""
        r, h, w, s = self.r, self.h, self.w, self.side
        gp = np.zeros((self.fh, self.fw))
        gp[2 * r:2 * r + h, 2 * r:2 * r + w] = g
        gf = sfft.rfft2(gp)
        dk = sfft.irfft2(gf * np.conj(self._pf), s=(self.fh, self.fw))[:s, :s]
        if not need_latent:
            return None, dk
        dp = sfft.irfft2(gf * np.conj(self._kf), s=(self.fh, self.fw))[:h + 2 * r, :w + 2 * r]
        return edge_pad_adjoint(dp, r), dk


# ------------------------------------------------------------------ warp

def warp(img, v):
    """Backward bilinear warp: out(x, y) = img(x + dx, y + dy), samples clamped to the border."""
    img = as_image(img)
    if img.shape[:2] != v.shape:
        raise InvalidInput(f"flow shape {v.shape} does not match image {img.shape[:2]}")
    return _per_channel(lambda p: _kernels.warp_with_grad(p, v.dx, v.dy)[0], img)


def warp_with_grad(img, v):
    """Warp a single-channel image and return the per-pixel partials d out/d dx, d out/d dy."""
    img = _require_gray(img, "warp_with_grad")
    if img.shape != v.shape:
        raise InvalidInput(f"flow shape {v.shape} does not match image {img.shape}")
    return _kernels.warp_with_grad(img, v.dx, v.dy)


# ------------------------------------------------------------ morphology

def _check_radius(radius):
    if int(radius) != radius or radius < 1:
        raise InvalidInput("morphology radius must be an integer >= 1")
    return int(radius)


def dilate(img, radius):
    """Grayscale max filter over a (2r+1)-square window."""
    img = _require_gray(img, "dilate")
    return _kernels.minmax_filter(img, _check_radius(radius), True)


def erode(img, radius):
    """Grayscale min filter over a (2r+1)-square window."""
    img = _require_gray(img, "erode")
    return _kernels.minmax_filter(img, _check_radius(radius), False)


# ------------------------------------------------------------------ otsu

def otsu_threshold(img, nbins=256):
    """Threshold maximising between-class variance of a 256-bin histogram over [0, 1].

    Pixels strictly below the returned value form the dark class.  Ties go
    to the lowest candidate bin.
    """
    img = _require_gray(img, "otsu_threshold")
    idx = np.clip(np.floor(img * nbins).astype(np.int64), 0, nbins - 1)
    hist = np.bincount(idx.ravel(), minlength=nbins).astype(np.float64)
    if np.count_nonzero(hist) < 2:
        raise NoBimodalStructure("image has fewer than two distinct intensity levels")
    p = hist / hist.sum()
    centers = (np.arange(nbins) + 0.5) / nbins
    # candidate t splits bins [0, t) | [t, nbins)
    w0 = np.cumsum(p)[:-1]
    m0 = np.cumsum(p * centers)[:-1]
    mt = m0[-1] + p[-1] * centers[-1]
    w1 = 1.0 - w0
    valid = (w0 > 0) & (w1 > 0)
    var = np.zeros_like(w0)
    var[valid] = (mt * w0[valid] - m0[valid]) ** 2 / (w0[valid] * w1[valid])
    t = int(np.argmax(var)) + 1
    return t / nbins


# -------------------------------------------------------------- gradients

def gradient_xy(img):
    """Forward differences; the last column (gx) and last row (gy) are zero."""
    img = as_image(img)
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise InvalidInput("gradient needs at least a 2x2 image")
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, :-1] = img[:, 1:] - img[:, :-1]
    gy[:-1, :] = img[1:, :] - img[:-1, :]
    return gx, gy


def gradient_xy_adjoint(gx, gy):
    """Adjoint of :func:`gradient_xy` applied to the pair (gx, gy)."""
    out = np.zeros_like(gx)
    ex = gx[:, :-1]
    out[:, 1:] += ex
    out[:, :-1] -= ex
    ey = gy[:-1, :]
    out[1:, :] += ey
    out[:-1, :] -= ey
    return out


# --------------------------------------------------------------- pyramid

def downsample2(img):
    """Binomial [1 2 1]/4 prefilter (edge replicated) then keep every other pixel."""
    img = as_image(img)
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise InvalidInput("downsample2 needs at least a 2x2 image")

    def one(p):
        q = np.pad(p, 1, mode="edge")
        q = 0.25 * q[:, :-2] + 0.5 * q[:, 1:-1] + 0.25 * q[:, 2:]
        q = 0.25 * q[:-2, :] + 0.5 * q[1:-1, :] + 0.25 * q[2:, :]
        return q[::2, ::2]

    return _per_channel(one, img)


@lru_cache(maxsize=64)
def upsample_matrix(n_in, n_out):
    """Linear-interpolation matrix for a 2x grid refinement (half-pixel aligned, clamped)."""
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        s = min(max((i + 0.5) / 2.0 - 0.5, 0.0), n_in - 1.0)
        i0 = min(int(np.floor(s)), max(n_in - 2, 0))
        f = s - i0
        m[i, i0] += 1.0 - f
        if f > 0:
            m[i, i0 + 1] += f
    m.setflags(write=False)
    return m


def upsample_flow(v, shape=None):
    """Bilinearly double a flow field's resolution and scale displacements by 2.

    ``shape`` crops the result to the next pyramid level (which may be one
    pixel smaller than 2x for odd sizes).
    """
    h, w = v.shape
    if shape is None:
        shape = (2 * h, 2 * w)
    if shape[0] > 2 * h or shape[1] > 2 * w:
        raise InvalidInput("target shape exceeds 2x the flow resolution")
    uy = upsample_matrix(h, shape[0])
    ux = upsample_matrix(w, shape[1])
    return FlowField._raw(2.0 * uy @ v.dx @ ux.T, 2.0 * uy @ v.dy @ ux.T)


def upsample_flow_adjoint(g, coarse_shape):
    """Adjoint of :func:`upsample_flow` for a gradient field ``g`` at the fine shape."""
    uy = upsample_matrix(coarse_shape[0], g.shape[0])
    ux = upsample_matrix(coarse_shape[1], g.shape[1])
    return FlowField._raw(2.0 * uy.T @ g.dx @ ux, 2.0 * uy.T @ g.dy @ ux)


def psnr(a, b, peak=1.0):
    mse = float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(peak**2 / mse)


def tile_bounds(height, width, rows, cols):
    """Row/column cut points for a rows x cols tiling; remainders go to the last tile."""
    if rows < 1 or cols < 1 or rows > height or cols > width:
        raise InvalidInput(f"cannot tile a {height}x{width} image into {rows}x{cols} regions")
    ch, cw = height // rows, width // cols
    ys = [i * ch for i in range(rows)] + [height]
    xs = [j * cw for j in range(cols)] + [width]
    return ys, xs
