"""Two-level proxy of the sharp chart built from a blurred observation."""
import logging
import os
from dataclasses import dataclass

import numpy as np

from .errors import EmptyRoi, InvalidInput
from .imagecore import _require_gray, dilate, erode, otsu_threshold

log = logging.getLogger(__name__)

MIN_ROI_PIXELS = 16


@dataclass
class BinaryProxy:
    image: np.ndarray
    dark_level: float
    bright_level: float
    dark_mask: np.ndarray
    threshold: float = float("nan")


def precursor(b, radius):
    """Mean of the morphological opening and closing of ``b``.

    The opening (erode, then dilate) removes bright specks inside dark
    regions and the closing (dilate, then erode) removes dark specks inside
    bright ones; both leave a straight or gently curved edge where it is,
    so the mean keeps the edge geometry and suppresses noise.
    """
    opened = dilate(erode(b, radius), radius)
    closed = erode(dilate(b, radius), radius)
    return 0.5 * (opened + closed)


def _shrink(mask, radius):
    if radius < 1:
        return mask
    return erode(mask.astype(np.float64), radius) > 0.5


def build_proxy(b, morph_radius=2, roi_margin=None, debug_dir=None):
    """Binarise a blurred single-channel patch into a two-valued proxy.

    Steps: precursor from the morphology branches, Otsu threshold on the
    precursor, dark ROI ``p < t``; the black/white levels are the means of
    ``b`` over the dark and bright ROIs after shrinking each by
    ``roi_margin`` (default ``morph_radius``) to drop transition pixels.
    """
    b = _require_gray(b, "build_proxy")
    if roi_margin is None:
        roi_margin = morph_radius
    if roi_margin < 0:
        raise InvalidInput("roi_margin must be >= 0")
    p = precursor(b, morph_radius)
    t = otsu_threshold(np.clip(p, 0.0, 1.0))
    dark = p < t
    dark_core = _shrink(dark, roi_margin)
    bright_core = _shrink(~dark, roi_margin)
    if dark_core.sum() < MIN_ROI_PIXELS or bright_core.sum() < MIN_ROI_PIXELS:
        raise EmptyRoi(
            f"ROI too small after shrinking by {roi_margin}px "
            f"(dark {int(dark_core.sum())}, bright {int(bright_core.sum())})"
        )
    lo = float(b[dark_core].mean())
    hi = float(b[bright_core].mean())
    if not lo < hi:
        raise EmptyRoi("dark ROI is not darker than the bright ROI")
    image = np.where(dark, lo, hi)
    if debug_dir is not None or os.environ.get("PSFCAL_DEBUG_PROXY"):
        _dump(debug_dir or os.environ["PSFCAL_DEBUG_PROXY"], p, dark)
    return BinaryProxy(image, lo, hi, dark, t)


def _dump(directory, p, mask):
    from .io import write_png16

    os.makedirs(directory, exist_ok=True)
    n = len([f for f in os.listdir(directory) if f.startswith("precursor_")])
    write_png16(os.path.join(directory, f"precursor_{n:04d}.png"), np.clip(p, 0, 1))
    write_png16(os.path.join(directory, f"mask_{n:04d}.png"), mask.astype(np.float64))
    log.debug("proxy diagnostics written to %s", directory)
