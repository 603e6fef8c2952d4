"""Spatially varying non-blind restoration with a per-region Wiener filter."""
import numpy as np

from .errors import DivergentRestoration, InvalidInput
from .imagecore import as_image, tile_bounds, validate_kernel

# |K|^2 below this counts as a spectral zero when no regularisation is given
ZERO_GUARD = 1e-12


def _ramp(n, start, stop, taper, lo_edge, hi_edge):
    """1-D blend weight over ``n`` samples for the region [start, stop).

    Raised-cosine ramps of width ``2 * taper`` centred on each interior cut;
    neighbouring ramps sum to one.
    """
    x = np.arange(n) + 0.5
    w = np.ones(n)
    if taper > 0:
        if not lo_edge:
            t = np.clip((x - (start - taper)) / (2.0 * taper), 0.0, 1.0)
            w *= 0.5 - 0.5 * np.cos(np.pi * t)
        if not hi_edge:
            t = np.clip(((stop + taper) - x) / (2.0 * taper), 0.0, 1.0)
            w *= 0.5 - 0.5 * np.cos(np.pi * t)
    else:
        w[(x < start) | (x >= stop)] = 0.0
    return w


def wiener_filter(block, k, nsr):
    """Frequency-domain Wiener restoration of one block (circular boundary)."""
    k = validate_kernel(k)
    h, w = block.shape
    s = k.shape[0]
    if s > min(h, w):
        raise InvalidInput("kernel larger than the block")
    pad = np.zeros((h, w))
    pad[:s, :s] = k
    # put the kernel centre at the origin so the restoration is not shifted
    pad = np.roll(pad, (-(s // 2), -(s // 2)), axis=(0, 1))
    kf = np.fft.rfft2(pad)
    power = (kf * kf.conj()).real
    if nsr == 0 and power.min() < ZERO_GUARD:
        raise DivergentRestoration(
            f"kernel spectrum has zeros (min |K|^2 = {power.min():.3g}) and nsr is 0")
    filt = kf.conj() / (power + nsr)
    return np.fft.irfft2(np.fft.rfft2(block) * filt, s=(h, w))


def wiener_deblur(img, field, nsr=1e-3):
    """Restore ``img`` region by region with the kernels of ``field``.

    Each region is extended by an apron of one kernel radius, filtered,
    weighted with a cosine taper over the apron and accumulated
    (overlap-add).  An extra margin absorbs the circular
    wrap-around of the FFT; the image border is extended by edge
    replication, the same convention the forward blur uses.  The result
    is clamped to [0, 1].
    """
    img = as_image(img)
    if nsr < 0:
        raise InvalidInput("nsr must be >= 0")
    rows, cols = field.grid
    h, w = img.shape[:2]
    ys, xs = tile_bounds(h, w, rows, cols)
    r = field.side // 2
    margin = 2 * field.side
    planes = img[..., None] if img.ndim == 2 else img
    nch = planes.shape[2]
    if field.channels not in (1, nch):
        raise InvalidInput(f"field has {field.channels} channels, image has {nch}")
    ext = r + margin
    out = np.zeros_like(planes)
    for c in range(nch):
        # edge replication matches the boundary convention of the forward blur;
        # one spare row/column lets every block be padded to even size
        padded = np.pad(planes[..., c], ((ext, ext + 1), (ext, ext + 1)), mode="edge")
        kc = 0 if field.channels == 1 else c
        for i in range(rows):
            wy = _ramp(h, ys[i], ys[i + 1], r, i == 0, i == rows - 1)
            y0, y1 = max(0, ys[i] - r), min(h, ys[i + 1] + r)
            for j in range(cols):
                if not field.valid[i, j, kc]:
                    raise InvalidInput(f"field has a hole at cell ({i}, {j}, {kc})")
                wx = _ramp(w, xs[j], xs[j + 1], r, j == 0, j == cols - 1)
                x0, x1 = max(0, xs[j] - r), min(w, xs[j + 1] + r)
                # even block sides put Nyquist on an exact bin, so zeros there are seen
                ey, ex = (y1 - y0) % 2, (x1 - x0) % 2
                block = padded[y0:y1 + 2 * ext + ey, x0:x1 + 2 * ext + ex]
                rest = wiener_filter(block, field.kernels[i, j, kc], nsr)
                rest = rest[ext:ext + (y1 - y0), ext:ext + (x1 - x0)]
                out[y0:y1, x0:x1, c] += rest * np.outer(wy[y0:y1], wx[x0:x1])
    out = np.clip(out, 0.0, 1.0)
    return out[..., 0] if img.ndim == 2 else out
