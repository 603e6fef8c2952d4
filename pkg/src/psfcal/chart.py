"""Circle-grid calibration target: rendering and field partitioning."""
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidInput
from .imagecore import as_image, tile_bounds

log = logging.getLogger(__name__)


@dataclass
class CircleGridSpec:
    """Dark circles on a bright background.

    Circle (i, j) is centred at ``margin + pitch/2 + (j, i) * pitch`` in
    continuous pixel-edge coordinates (pixel x covers [x, x+1)).  The canvas
    defaults to ``cols*pitch + 2*margin`` by ``rows*pitch + 2*margin``.
    """

    rows: int = 3
    cols: int = 3
    pitch: float = 64.0
    radius: float = 20.0
    dark_level: float = 0.1
    bright_level: float = 0.9
    margin: float = 0.0
    supersample: int = 8
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        if self.rows < 0 or self.cols < 0:
            raise InvalidInput("rows and cols must be nonnegative")
        if not 0 < self.radius < self.pitch / 2:
            raise InvalidInput("radius must be positive and below pitch/2")
        if not self.dark_level < self.bright_level:
            raise InvalidInput("dark_level must be below bright_level")
        if int(self.supersample) < 1:
            raise InvalidInput("supersample must be >= 1")

    @property
    def canvas(self):
        w = self.width if self.width is not None else int(round(self.cols * self.pitch + 2 * self.margin))
        h = self.height if self.height is not None else int(round(self.rows * self.pitch + 2 * self.margin))
        return h, w

    def centers(self):
        i, j = np.mgrid[0:self.rows, 0:self.cols]
        cx = self.margin + self.pitch / 2 + j * self.pitch
        cy = self.margin + self.pitch / 2 + i * self.pitch
        return np.stack([cx.ravel(), cy.ravel()], axis=1).astype(np.float64)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class AffinePerturbation:
    """2x3 matrix mapping chart coordinates to image coordinates."""

    matrix: np.ndarray = field(default_factory=lambda: np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64).reshape(2, 3)
        if np.linalg.det(self.matrix[:, :2]) <= 0:
            raise InvalidInput("affine perturbation must preserve orientation")

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_params(cls, rotation_deg=0.0, scale=1.0, shear=0.0, tx=0.0, ty=0.0, center=(0.0, 0.0)):
        """Rotation/scale/shear about ``center`` (x, y), followed by a translation."""
        a = np.deg2rad(rotation_deg)
        rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        lin = scale * rot @ np.array([[1.0, shear], [0.0, 1.0]])
        c = np.asarray(center, dtype=np.float64)
        t = c - lin @ c + np.array([tx, ty])
        return cls(np.hstack([lin, t[:, None]]))

    @classmethod
    def random(cls, seed, center=(0.0, 0.0), max_rotation_deg=3.0, scale_range=(0.98, 1.02), max_shift=2.0):
        rng = np.random.default_rng(seed)
        return cls.from_params(
            rotation_deg=rng.uniform(-max_rotation_deg, max_rotation_deg),
            scale=rng.uniform(*scale_range),
            tx=rng.uniform(-max_shift, max_shift),
            ty=rng.uniform(-max_shift, max_shift),
            center=center,
        )

    def to_dict(self):
        return {"matrix": self.matrix.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["matrix"])


def _subsample_offsets(n):
    return (np.arange(n) + 0.5) / n


def render_chart(spec, xform=None, chunk_rows=64):
    """Anti-aliased rendering of the ideal (unblurred) chart.

    Each pixel is ``bright + (dark - bright) * coverage`` with coverage
    estimated from ``supersample**2`` samples per pixel.
    """
    xform = xform or AffinePerturbation.identity()
    h, w = spec.canvas
    s = int(spec.supersample)
    centers = spec.centers()
    out = np.full((h, w), float(spec.bright_level))
    if len(centers) == 0:
        return out

    lin = xform.matrix[:, :2]
    inv = np.linalg.inv(lin)
    t = xform.matrix[:, 2]
    img_centers = centers @ lin.T + t
    outside = (
        (img_centers[:, 0] - spec.radius < 0) | (img_centers[:, 0] + spec.radius > w)
        | (img_centers[:, 1] - spec.radius < 0) | (img_centers[:, 1] + spec.radius > h)
    )
    if np.any(outside):
        log.warning("%d circle(s) clipped by the canvas under the affine perturbation", int(outside.sum()))

    off = _subsample_offsets(s)
    xs = (np.arange(w)[:, None] + off[None, :]).ravel()
    r2 = spec.radius**2
    c0 = spec.margin + spec.pitch / 2
    for y0 in range(0, h, chunk_rows):
        y1 = min(y0 + chunk_rows, h)
        ys = (np.arange(y0, y1)[:, None] + off[None, :]).ravel()
        px = xs[None, :] - t[0]
        py = ys[:, None] - t[1]
        cx = inv[0, 0] * px + inv[0, 1] * py
        cy = inv[1, 0] * px + inv[1, 1] * py
        # nearest grid centre is the only circle that can contain the point
        j = np.clip(np.round((cx - c0) / spec.pitch), 0, spec.cols - 1)
        i = np.clip(np.round((cy - c0) / spec.pitch), 0, spec.rows - 1)
        inside = (cx - (c0 + j * spec.pitch)) ** 2 + (cy - (c0 + i * spec.pitch)) ** 2 <= r2
        cov = inside.reshape(y1 - y0, s, w, s).mean(axis=(1, 3))
        out[y0:y1] = spec.bright_level + (spec.dark_level - spec.bright_level) * cov
    return out


def render_edge(height, width, angle, dark_level=0.1, bright_level=0.9, supersample=1, offset=0.0):
    """Straight step edge through the image centre, tilted ``angle`` radians from vertical.

    The dark side is on the left.  ``supersample=1`` point-samples pixel
    centres, which keeps the edge free of pixel-aperture blur.
    """
    s = int(supersample)
    off = _subsample_offsets(s) - 0.5 if s > 1 else np.zeros(1)
    ys = (np.arange(height)[:, None] + off[None, :]).ravel()
    xs = (np.arange(width)[:, None] + off[None, :]).ravel()
    cx, cy = (width - 1) / 2 + offset, (height - 1) / 2
    n = np.array([np.cos(angle), -np.sin(angle)])
    d = n[0] * (xs[None, :] - cx) + n[1] * (ys[:, None] - cy)
    cov = (d < 0).reshape(height, s, width, s).mean(axis=(1, 3))
    return bright_level + (dark_level - bright_level) * cov


@dataclass
class Patch:
    image: np.ndarray
    field_pos: tuple
    origin: tuple
    index: tuple


def patchify(img, grid_rows, grid_cols):
    """Split an image into a grid of regions with normalised field coordinates in [-1, 1]^2.

    ``field_pos`` is (u, v) of the region centre, (0, 0) at the image centre.
    Remainder pixels go to the last row/column of regions.
    """
    img = as_image(img)
    h, w = img.shape[:2]
    ys, xs = tile_bounds(h, w, grid_rows, grid_cols)
    patches = []
    for i in range(grid_rows):
        for j in range(grid_cols):
            u = ((xs[j] + xs[j + 1]) / 2 - w / 2) / (w / 2)
            v = ((ys[i] + ys[i + 1]) / 2 - h / 2) / (h / 2)
            patches.append(Patch(img[ys[i]:ys[i + 1], xs[j]:xs[j + 1]].copy(), (u, v), (ys[i], xs[j]), (i, j)))
    return patches


def reassemble(patches, grid_rows, grid_cols):
    rows = [np.concatenate([patches[i * grid_cols + j].image for j in range(grid_cols)], axis=1)
            for i in range(grid_rows)]
    return np.concatenate(rows, axis=0)
