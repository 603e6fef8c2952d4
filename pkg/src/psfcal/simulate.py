"""End-to-end synthetic capture: chart -> misregistration -> lens blur -> noise -> Bayer -> demosaic."""
from dataclasses import dataclass

import numpy as np

from .chart import AffinePerturbation, CircleGridSpec, render_chart
from .imagecore import as_image
from .optics_sim import AberrationSpec, NoiseSpec, PsfField, add_noise, blur_field
from .sensor import demosaic_bilinear, mosaic


@dataclass
class Capture:
    raw: object  # RawMosaic
    rgb: np.ndarray  # demosaiced observation
    sharp: np.ndarray  # latent chart after the perturbation, single channel
    gt: PsfField


def simulate_capture(sharp, gt_field, noise=None, pattern="RGGB"):
    """Blur a sharp (gray or RGB) image with ``gt_field``, add noise, mosaic and demosaic."""
    sharp = as_image(sharp)
    rgb = np.repeat(sharp[..., None], 3, axis=2) if sharp.ndim == 2 else sharp
    blurred = blur_field(rgb, gt_field)
    if noise is not None:
        blurred = add_noise(blurred, noise)
    raw = mosaic(blurred, pattern)
    return raw, demosaic_bilinear(raw)


def simulate_chart(chart_spec=None, grid=(3, 3), aberration=None, noise=None, pattern="RGGB",
                   xform=None):
    """Render the circle chart, perturb it, and capture it through a synthetic lens.

    Ground-truth kernels are evaluated at the centre of each ``grid`` cell.
    """
    chart_spec = chart_spec or CircleGridSpec()
    aberration = aberration or AberrationSpec()
    sharp = render_chart(chart_spec, xform)
    gt = PsfField.from_spec(aberration, grid[0], grid[1], channels=3)
    raw, rgb = simulate_capture(sharp, gt, noise, pattern)
    return Capture(raw, rgb, sharp, gt)


def benchmark_capture(noisy=True, misregistration=0.0, seed=0, rows=3, cols=3, pattern="RGGB"):
    """The desk-scale benchmark: ``rows`` x ``cols`` circles at 64 px pitch, side-15 kernels.

    ``misregistration`` translates the chart by that many pixels along both
    axes so the proxy and the observation disagree at subpixel level.
    """
    spec = CircleGridSpec(rows=rows, cols=cols)
    xform = None
    if misregistration:
        xform = AffinePerturbation.from_params(tx=misregistration, ty=misregistration)
    noise = NoiseSpec.for_total_variance(0.01, seed=seed) if noisy else None
    return simulate_chart(spec, (rows, cols), AberrationSpec(seed=seed), noise, pattern, xform)


def render_scene(height=192, width=192, n_shapes=40, seed=0):
    """Seeded piecewise-smooth test scene: discs and rectangles over a gentle ramp."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    img = 0.3 + 0.2 * (xx / width) + 0.1 * (yy / height)
    for _ in range(n_shapes):
        level = rng.uniform(0.05, 0.95)
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        size = rng.uniform(3, 20)
        if rng.random() < 0.5:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= size * size
        else:
            a = rng.uniform(0.3, 1.0) * size
            mask = (np.abs(yy - cy) <= a) & (np.abs(xx - cx) <= size)
        img[mask] = level
    return img
