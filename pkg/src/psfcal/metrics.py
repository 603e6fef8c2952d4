"""Kernel scores, MTF from a PSF, and the slanted-edge SFR reference measurement."""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates, uniform_filter

from .errors import InvalidInput, NoEdgeFound
from .imagecore import _require_gray, validate_kernel

log = logging.getLogger(__name__)

PSNR_CAP = 300.0


def _same_side(est, gt):
    est = np.asarray(est, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if est.shape != gt.shape or est.ndim != 2:
        raise InvalidInput(f"kernel shapes differ: {est.shape} vs {gt.shape}")
    return est, gt


def kernel_psnr(est, gt):
    """PSNR in dB with the ground-truth peak as MAX; identical kernels give the 300 dB cap.

    Not symmetric in its arguments: MAX always comes from ``gt``.
    """
    est, gt = _same_side(est, gt)
    mse = float(np.mean((est - gt) ** 2))
    peak = float(gt.max())
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def ssim(a, b, data_range, win=7, k1=0.01, k2=0.03):
    """Mean SSIM with a uniform ``win`` x ``win`` window over the fully covered region.

    Uses the sample-covariance normalisation, so it agrees with
    scikit-image's default ``structural_similarity``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInput("ssim inputs must have equal shape")
    if min(a.shape) < win:
        raise InvalidInput(f"ssim window {win} larger than the image")
    npix = win * win
    cov_norm = npix / (npix - 1.0)
    ux = uniform_filter(a, win)
    uy = uniform_filter(b, win)
    uxx = uniform_filter(a * a, win)
    uyy = uniform_filter(b * b, win)
    uxy = uniform_filter(a * b, win)
    vx = cov_norm * (uxx - ux * ux)
    vy = cov_norm * (uyy - uy * uy)
    vxy = cov_norm * (uxy - ux * uy)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
    pad = (win - 1) // 2
    return float(s[pad:-pad or None, pad:-pad or None].mean())


def kernel_ssim(est, gt):
    """SSIM over the kernel grid, window 7, dynamic range = peak of ``gt``."""
    est, gt = _same_side(est, gt)
    if np.array_equal(est, gt):
        return 1.0
    return ssim(est, gt, float(gt.max()))


# ------------------------------------------------------------------ MTF


@dataclass
class MtfCurve:
    frequencies: np.ndarray  # cycles/pixel, 0 .. 0.5
    modulation: np.ndarray
    orientation: float = 0.0  # radians
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=np.float64)
        self.modulation = np.asarray(self.modulation, dtype=np.float64)
        if self.frequencies.shape != self.modulation.shape:
            raise InvalidInput("frequency and modulation arrays differ in length")

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("frequency,modulation\n")
            for fr, m in zip(self.frequencies, self.modulation):
                f.write(f"{float(fr)!r},{float(m)!r}\n")


def mtf_from_psf(k, n_freq=65, orientations=(0.0, math.pi / 2), pad_factor=4):
    """Radial slices of |FFT(k)| (DC = 1) along each orientation.

    The kernel is zero-padded to ``pad_factor`` times its side; slices are
    sampled from the periodic spectrum with bilinear interpolation.
    Orientation 0 runs along +x, pi/2 along +y.
    """
    k = validate_kernel(k)
    n = pad_factor * k.shape[0]
    spec = np.abs(np.fft.fft2(k, s=(n, n)))
    spec /= spec[0, 0]
    freqs = np.linspace(0.0, 0.5, n_freq)
    out = []
    for theta in orientations:
        # frequency f cycles/pixel sits at bin f * n
        fx = freqs * math.cos(theta) * n
        fy = freqs * math.sin(theta) * n
        mod = map_coordinates(spec, [fy, fx], order=1, mode="grid-wrap")
        mod[0] = 1.0
        out.append(MtfCurve(freqs, mod, float(theta)))
    return out


def gaussian_mtf(sigma, freqs):
    return np.exp(-2.0 * math.pi**2 * sigma**2 * np.asarray(freqs) ** 2)


def curve_rms_delta(a, b, f_max=0.5):
    """RMS modulation difference over [0, f_max] on ``a``'s grid (``b`` is resampled linearly)."""
    sel = a.frequencies <= f_max + 1e-12
    if not sel.any() or b.frequencies.size == 0 or b.frequencies[0] > f_max:
        raise InvalidInput("curves do not overlap on [0, f_max]")
    fa = a.frequencies[sel]
    if fa.max() > b.frequencies.max() + 1e-12:
        fa = fa[fa <= b.frequencies.max() + 1e-12]
        if fa.size == 0:
            raise InvalidInput("curves do not overlap on [0, f_max]")
    ma = a.modulation[: fa.size] if sel.all() else a.modulation[sel][: fa.size]
    mb = np.interp(fa, b.frequencies, b.modulation)
    return float(np.sqrt(np.mean((ma - mb) ** 2)))


# ------------------------------------------------------------------ slanted edge


def _edge_centroids(patch):
    """Per-row sub-pixel location of the horizontal gradient peak (centroid of |d/dx|)."""
    d = np.abs(np.diff(patch, axis=1))
    h, w = d.shape
    xs = np.arange(w) + 0.5
    rows, cents = [], []
    for y in range(h):
        row = d[y]
        peak = row.max()
        if peak <= 0:
            continue
        # restrict to a window around the peak so noise far away does not drag the centroid
        j = int(np.argmax(row))
        lo, hi = max(0, j - 6), min(w, j + 7)
        seg = row[lo:hi]
        rows.append(y)
        cents.append(float((seg * xs[lo:hi]).sum() / seg.sum()))
    return np.array(rows, dtype=np.float64), np.array(cents)


def slanted_edge_sfr(patch, nominal_angle=None, n_freq=65, oversample=4):
    """SFR of a near-vertical slanted edge.

    Steps: per-row gradient-centroid edge positions, least-squares line fit,
    projection of every pixel onto the edge normal, ESF binned at
    ``oversample`` x, finite-difference LSF, Hamming window, DFT normalised
    to DC = 1, then division by the sinc responses of the central
    difference and of the bin aperture.
    ``nominal_angle`` (radians from vertical) is only used for the
    reliability check; the measured angle drives the projection.
    """
    patch = _require_gray(patch, "slanted_edge_sfr")
    h, w = patch.shape
    if h < 8 or w < 8:
        raise NoEdgeFound("patch too small for an edge measurement")
    contrast = float(patch.max() - patch.min())
    if contrast < 1e-6:
        raise NoEdgeFound("patch is constant")
    rows, cents = _edge_centroids(patch)
    if rows.size < h // 2:
        raise NoEdgeFound("no consistent edge across the rows")
    slope, intercept = np.polyfit(rows, cents, 1)  # x = slope * y + intercept
    resid = cents - (slope * rows + intercept)
    if np.sqrt(np.mean(resid**2)) > 2.0:
        raise NoEdgeFound("row centroids do not lie on a line")
    angle = math.atan(slope)
    diag = {"angle": angle}
    deg = abs(math.degrees(angle))
    if not 1.0 < deg < 15.0:
        diag["warning"] = "UnreliableAngle"
        log.warning("edge angle %.2f deg is outside the reliable (1, 15) deg range", deg)
    if nominal_angle is not None:
        diag["nominal_angle"] = float(nominal_angle)

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    # signed distance of pixel centres from the fitted line, measured along x-normal
    cos_a = math.cos(angle)
    dist = (xx - (slope * yy + intercept)) * cos_a
    bins = np.round(dist * oversample).astype(np.int64)
    lo = bins.min()
    idx = bins - lo
    counts = np.bincount(idx.ravel())
    sums = np.bincount(idx.ravel(), weights=patch.ravel())
    filled = counts > 0
    centre = -lo
    # keep a symmetric window about the edge that stays fully populated
    half = min(centre, counts.size - 1 - centre)
    half = min(half, int(oversample * (w // 2 - 2)))
    if half < 4 * oversample:
        raise NoEdgeFound("edge too close to the patch border")
    esf = np.empty(counts.size)
    esf[filled] = sums[filled] / counts[filled]
    if not filled.all():
        pos = np.arange(counts.size)
        esf[~filled] = np.interp(pos[~filled], pos[filled], esf[filled])
    esf = esf[centre - half: centre + half + 1]

    lsf = np.zeros_like(esf)
    lsf[1:-1] = 0.5 * (esf[2:] - esf[:-2])
    lsf *= np.hamming(lsf.size)
    if abs(lsf.sum()) < 1e-12:
        raise NoEdgeFound("edge has no measurable line spread")
    n = lsf.size
    spec = np.abs(np.fft.rfft(lsf))
    spec /= spec[0]
    f_os = np.fft.rfftfreq(n)  # cycles per oversampled bin
    f_px = f_os * oversample
    freqs = np.linspace(0.0, 0.5, n_freq)
    mod = np.interp(freqs, f_px, spec)
    # central difference over +-1 bin has response sin(2 pi f / os) / (2 pi f / os)
    arg = 2.0 * math.pi * freqs / oversample
    corr = np.ones_like(freqs)
    nz = arg > 0
    corr[nz] = np.sin(arg[nz]) / arg[nz]
    # each ESF bin averages a 1/os px wide slab, a box aperture of that width
    box = np.ones_like(freqs)
    b_arg = math.pi * freqs / oversample
    box[nz] = np.sin(b_arg[nz]) / b_arg[nz]
    mod = mod / (corr * box)
    mod[0] = 1.0
    return MtfCurve(freqs, mod, angle, diag)
