"""Synthetic lens: field-dependent Gaussian-mixture PSFs, spatially varying blur, sensor noise.

Component parameters are quadratic polynomials in the normalised field
radius ``r`` (0 at the centre, 1 at the corners) and are oriented along the
radial direction, so kernels stretch and develop a coma-like tail toward
the edge of the field.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .errors import DegenerateKernel, InvalidInput
from .imagecore import as_image, tile_bounds, validate_kernel


def _poly(coeffs, r):
    return sum(c * r**i for i, c in enumerate(coeffs))


@dataclass
class MixtureComponent:
    amplitude: tuple = (1.0, 0.0, 0.0)
    radial_offset: tuple = (0.0, 0.0, 0.0)
    sigma_radial: tuple = (1.2, 0.0, 0.0)
    sigma_tangential: tuple = (1.2, 0.0, 0.0)


def _default_components():
    return [
        MixtureComponent(amplitude=(1.0, 0.0, 0.0), radial_offset=(0.0, 0.0, 0.0),
                         sigma_radial=(1.1, 0.0, 0.9), sigma_tangential=(1.1, 0.0, 0.3)),
        MixtureComponent(amplitude=(0.0, 0.0, 0.35), radial_offset=(0.0, 1.6, 0.6),
                         sigma_radial=(1.3, 0.0, 0.5), sigma_tangential=(0.9, 0.0, 0.2)),
    ]


@dataclass
class AberrationSpec:
    """Gaussian-mixture PSF model parameterised over the field.

    ``channel_scale`` multiplies every sigma per colour channel.  With
    ``centered`` the mixture is translated so its continuous centroid sits
    on the kernel centre; a PSF estimated against a self-registered target
    is only defined up to translation, so ground truth uses the same gauge.
    ``jitter`` adds a seeded relative perturbation to the sigmas.
    """

    components: list = field(default_factory=_default_components)
    side: int = 15
    channel_scale: tuple = (1.08, 1.0, 0.94)
    centered: bool = True
    jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.components = [c if isinstance(c, MixtureComponent) else MixtureComponent(**c)
                           for c in self.components]
        if self.side % 2 == 0 or self.side < 1:
            raise InvalidInput("kernel side must be odd")
        if not self.components:
            raise InvalidInput("aberration spec needs at least one component")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class NoiseSpec:
    gaussian_var: float = 0.005
    poisson_scale: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if self.gaussian_var < 0 or self.poisson_scale <= 0:
            raise InvalidInput("gaussian_var must be >= 0 and poisson_scale > 0")

    @classmethod
    def for_total_variance(cls, variance=0.01, level=0.5, gaussian_fraction=0.5, seed=0):
        """Split ``variance`` between read noise and shot noise evaluated at intensity ``level``."""
        shot = (1.0 - gaussian_fraction) * variance
        scale = level / shot if shot > 0 else 1e12
        return cls(gaussian_var=gaussian_fraction * variance, poisson_scale=scale, seed=seed)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def synth_psf(spec, field_pos, channel=1):
    """Rasterise the mixture at kernel cell centres and normalise to unit sum."""
    u, v = field_pos
    r = min(np.hypot(u, v) / np.sqrt(2.0), 1.0)
    phi = np.arctan2(v, u)
    radial = np.array([np.cos(phi), np.sin(phi)])
    tangential = np.array([-radial[1], radial[0]])
    scale = spec.channel_scale[channel] if channel is not None else 1.0
    if spec.jitter > 0:
        key = [spec.seed, int(round((u + 2) * 1e6)), int(round((v + 2) * 1e6)), int(channel or 0)]
        scale = scale * (1.0 + spec.jitter * np.random.default_rng(key).uniform(-1, 1))

    amps, means, covs = [], [], []
    for comp in spec.components:
        a = _poly(comp.amplitude, r)
        if a == 0:
            continue
        sr = scale * _poly(comp.sigma_radial, r)
        st = scale * _poly(comp.sigma_tangential, r)
        if sr <= 0 or st <= 0:
            raise InvalidInput("component sigmas must stay positive over the field")
        rot = np.stack([radial, tangential], axis=1)
        amps.append(a)
        means.append(_poly(comp.radial_offset, r) * radial)
        covs.append(rot @ np.diag([sr**2, st**2]) @ rot.T)
    if not amps:
        raise DegenerateKernel("every mixture component has zero amplitude here")
    amps = np.array(amps)
    means = np.array(means)
    if spec.centered and amps.sum() != 0:
        means = means - (amps[:, None] * means).sum(axis=0) / amps.sum()

    h = spec.side // 2
    ax = np.arange(-h, h + 1, dtype=np.float64)
    gx, gy = np.meshgrid(ax, ax)
    k = _rasterise(gx, gy, amps, means, covs)
    if spec.centered:
        # truncation moves the discrete centroid slightly; walk it back to the centre
        for _ in range(4):
            shift = np.array([(k * gx).sum(), (k * gy).sum()])
            if np.abs(shift).max() < 1e-12:
                break
            means = means - shift
            k = _rasterise(gx, gy, amps, means, covs)
    return k


def _rasterise(gx, gy, amps, means, covs):
    k = np.zeros_like(gx)
    for a, m, c in zip(amps, means, covs):
        ci = np.linalg.inv(c)
        dx, dy = gx - m[0], gy - m[1]
        q = ci[0, 0] * dx * dx + 2 * ci[0, 1] * dx * dy + ci[1, 1] * dy * dy
        k += a * np.exp(-0.5 * q) / (2 * np.pi * np.sqrt(np.linalg.det(c)))
    k = np.clip(k, 0.0, None)
    total = k.sum()
    if not total > 0:
        raise DegenerateKernel("mixture rasterised to an all-zero kernel")
    return k / total


@dataclass
class PsfField:
    """Grid of per-region, per-channel kernels.

    ``kernels`` has shape (rows, cols, channels, side, side); ``valid`` marks
    cells that hold a kernel (failed calibrations leave holes).
    """

    kernels: np.ndarray
    valid: np.ndarray = None
    field_pos: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kernels = np.asarray(self.kernels, dtype=np.float64)
        if self.kernels.ndim != 5 or self.kernels.shape[3] != self.kernels.shape[4]:
            raise InvalidInput("PsfField kernels must have shape (rows, cols, channels, side, side)")
        if self.valid is None:
            self.valid = np.ones(self.kernels.shape[:3], dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)

    @property
    def grid(self):
        return self.kernels.shape[:2]

    @property
    def channels(self):
        return self.kernels.shape[2]

    @property
    def side(self):
        return self.kernels.shape[3]

    def kernel(self, i, j, c=0):
        return self.kernels[i, j, c]

    @classmethod
    def uniform(cls, k, rows, cols, channels=1):
        k = validate_kernel(k)
        return cls(np.broadcast_to(k, (rows, cols, channels) + k.shape).copy())

    @classmethod
    def from_spec(cls, spec, rows, cols, channels=3):
        """Ground-truth field: one kernel per region centre (field coordinates as in ``patchify``)."""
        ks = np.zeros((rows, cols, channels, spec.side, spec.side))
        pos = np.zeros((rows, cols, 2))
        for i in range(rows):
            for j in range(cols):
                u = (2 * j + 1) / cols - 1.0
                v = (2 * i + 1) / rows - 1.0
                pos[i, j] = (u, v)
                for c in range(channels):
                    ks[i, j, c] = synth_psf(spec, (u, v), c if channels == 3 else 1)
        return cls(ks, field_pos=pos)


def blur_field(img, field_):
    """Spatially varying blur: each region is convolved with its own kernel.

    Regions are cut with a kernel-radius apron of true neighbouring pixels
    (edge replication only at the image border), so the result equals a
    global convolution wherever the kernels agree.
    """
    img = as_image(img)
    rows, cols = field_.grid
    h, w = img.shape[:2]
    ys, xs = tile_bounds(h, w, rows, cols)
    s = field_.side
    r = s // 2
    if s > min(np.diff(ys).min(), np.diff(xs).min()):
        raise InvalidInput("kernel side exceeds the region size")
    planes = img[..., None] if img.ndim == 2 else img
    nch = planes.shape[2]
    if field_.channels not in (1, nch):
        raise InvalidInput(f"field has {field_.channels} channels, image has {nch}")
    out = np.empty_like(planes)
    for c in range(nch):
        padded = np.pad(planes[..., c], r, mode="edge")
        kc = 0 if field_.channels == 1 else c
        for i in range(rows):
            for j in range(cols):
                k = validate_kernel(field_.kernels[i, j, kc])
                sub = padded[ys[i]:ys[i + 1] + 2 * r, xs[j]:xs[j + 1] + 2 * r]
                out[ys[i]:ys[i + 1], xs[j]:xs[j + 1], c] = _kernels.conv_valid(np.ascontiguousarray(sub), k)
    return out[..., 0] if img.ndim == 2 else out


def add_noise(img, spec, clip=True):
    """Poisson shot noise followed by additive Gaussian read noise, deterministic per seed."""
    img = as_image(img)
    rng = np.random.default_rng(spec.seed)
    shot = rng.poisson(np.clip(img, 0.0, None) * spec.poisson_scale) / spec.poisson_scale
    out = shot + rng.normal(0.0, np.sqrt(spec.gaussian_var), size=img.shape)
    return np.clip(out, 0.0, 1.0) if clip else out
