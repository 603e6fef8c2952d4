"""Bayer sampling and bilinear demosaicing.

Both stages are linear, and the bilinear demosaic of a channel depends only
on that channel's own samples, so the capture operator splits into three
independent per-channel operators ``A_c = D_c M_c``.  The adjoints below are
exact and are what the calibration loop back-propagates through.
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InvalidInput
from .imagecore import as_image

# channel index (0=R, 1=G, 2=B) at (row parity, col parity)
CFA_PATTERNS = {
    "RGGB": ((0, 1), (1, 2)),
    "BGGR": ((2, 1), (1, 0)),
    "GRBG": ((1, 0), (2, 1)),
    "GBRG": ((1, 2), (0, 1)),
}

_K_RB = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 4.0
_K_G = np.array([[0.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 0.0]]) / 4.0


def check_pattern(pattern):
    name = str(pattern).upper()
    if name not in CFA_PATTERNS:
        raise InvalidInput(f"unknown CFA pattern {pattern!r}; expected one of {sorted(CFA_PATTERNS)}")
    return name


def shift_pattern(pattern, y0, x0):
    """Name of the pattern seen by a crop whose top-left pixel is (y0, x0)."""
    table = CFA_PATTERNS[check_pattern(pattern)]
    shifted = tuple(tuple(table[(y0 + i) % 2][(x0 + j) % 2] for j in range(2)) for i in range(2))
    for name, t in CFA_PATTERNS.items():
        if t == shifted:
            return name
    raise AssertionError("CFA shift produced an unknown layout")


def channel_mask(shape, pattern, channel):
    """Boolean map of the sites sampling ``channel``."""
    table = np.array(CFA_PATTERNS[check_pattern(pattern)])
    h, w = shape
    ch = table[np.arange(h)[:, None] % 2, np.arange(w)[None, :] % 2]
    return ch == channel


@dataclass
class RawMosaic:
    data: np.ndarray
    pattern: str = "RGGB"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.pattern = check_pattern(self.pattern)
        if self.data.ndim != 2:
            raise InvalidInput("raw mosaic must be single-channel")


def mosaic(img, pattern="RGGB"):
    """Keep, at every pixel, only the channel the CFA places there."""
    img = as_image(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInput("mosaic needs a 3-channel image")
    pattern = check_pattern(pattern)
    table = np.array(CFA_PATTERNS[pattern])
    h, w = img.shape[:2]
    ch = table[np.arange(h)[:, None] % 2, np.arange(w)[None, :] % 2]
    data = np.take_along_axis(img, ch[..., None], axis=2)[..., 0]
    return RawMosaic(data, pattern)


def _conv3(x, k):
    """3x3 symmetric-kernel 'same' convolution with zero padding."""
    return _kernels.conv3(np.ascontiguousarray(x, dtype=np.float64), k)


class ChannelCapture:
    """Sampling + bilinear interpolation for one colour plane, with its adjoint.

    Interpolation is a normalised convolution: at the border only the
    same-colour neighbours that exist contribute, and every sampled site
    reproduces its own value exactly.
    """

    def __init__(self, shape, pattern, channel):
        self.mask = channel_mask(shape, pattern, channel).astype(np.float64)
        self.kernel = _K_G if channel == 1 else _K_RB
        weight = _conv3(self.mask, self.kernel)
        if np.any(weight <= 0):
            raise InvalidInput("image too small for bilinear demosaicing")
        self.inv_weight = 1.0 / weight

    def interpolate(self, sampled):
        return _conv3(sampled, self.kernel) * self.inv_weight

    def forward(self, x):
        return self.interpolate(self.mask * x)

    def adjoint(self, g):
        return self.mask * _conv3(g * self.inv_weight, self.kernel)


def demosaic_bilinear(raw):
    """Bilinear demosaic of a :class:`RawMosaic` into an (H, W, 3) image."""
    shape = raw.data.shape
    planes = []
    for c in range(3):
        cap = ChannelCapture(shape, raw.pattern, c)
        out = cap.interpolate(cap.mask * raw.data)
        # sampled sites keep the raw value bit-for-bit
        out = np.where(cap.mask > 0, raw.data, out)
        planes.append(out)
    return np.stack(planes, axis=-1)


def capture_forward(img_rgb, pattern="RGGB"):
    """``demosaic_bilinear(mosaic(img))``: the sensor operator applied to a synthetic image."""
    return demosaic_bilinear(mosaic(img_rgb, pattern))


def capture_adjoint(g_rgb, pattern="RGGB"):
    g_rgb = as_image(g_rgb)
    if g_rgb.ndim != 3 or g_rgb.shape[2] != 3:
        raise InvalidInput("capture_adjoint needs a 3-channel image")
    shape = g_rgb.shape[:2]
    return np.stack(
        [ChannelCapture(shape, pattern, c).adjoint(g_rgb[..., c]) for c in range(3)], axis=-1
    )
