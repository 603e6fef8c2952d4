import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import conv_oracle, random_kernel
from psfcal.errors import DegenerateKernel, InvalidInput
from psfcal.imagecore import conv2d, delta_kernel, validate_kernel
from psfcal.optics_sim import (AberrationSpec, MixtureComponent, NoiseSpec, PsfField, add_noise,
                               blur_field, synth_psf)


def _iso(sigma, side=21):
    return AberrationSpec(components=[MixtureComponent(sigma_radial=(sigma, 0, 0),
                                                       sigma_tangential=(sigma, 0, 0))],
                          side=side, channel_scale=(1.0, 1.0, 1.0))


def test_small_sigma_near_delta():
    k = synth_psf(_iso(0.2, 7), (0.0, 0.0))
    assert k[3, 3] > 0.95


def test_isotropic_matches_closed_form():
    k = synth_psf(_iso(1.5), (0.0, 0.0))
    ax = np.arange(-10, 11)
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * 1.5**2))
    assert np.allclose(k, g / g.sum(), atol=1e-12)


def test_centre_reduces_to_isotropic():
    k = synth_psf(AberrationSpec(), (0.0, 0.0), channel=1)
    assert np.allclose(k, k.T, atol=1e-12) and np.allclose(k, k[::-1], atol=1e-12)


@given(st.floats(-1, 1), st.floats(-1, 1), st.integers(0, 2))
def test_every_kernel_is_valid(u, v, c):
    k = synth_psf(AberrationSpec(jitter=0.1, seed=3), (u, v), channel=c)
    validate_kernel(k)
    # centred gauge: discrete centroid on the middle cell
    ax = np.arange(-7, 8)
    assert abs((k.sum(axis=0) * ax).sum()) < 1e-9 and abs((k.sum(axis=1) * ax).sum()) < 1e-9


def test_blur_grows_toward_the_corner():
    spec = AberrationSpec()
    ax = np.arange(-7, 8)

    def spread(k):
        return float((k * (ax[None, :] ** 2 + ax[:, None] ** 2)).sum())

    assert spread(synth_psf(spec, (1, 1))) > 1.5 * spread(synth_psf(spec, (0, 0)))


def test_zero_amplitude_is_degenerate():
    spec = AberrationSpec(components=[MixtureComponent(amplitude=(0, 0, 0))])
    with pytest.raises(DegenerateKernel):
        synth_psf(spec, (0, 0))


def test_specs_round_trip():
    a = AberrationSpec(jitter=0.05, seed=9)
    assert AberrationSpec.from_dict(a.to_dict()) == a
    n = NoiseSpec(0.003, 50.0, 4)
    assert NoiseSpec.from_dict(n.to_dict()) == n
    with pytest.raises(InvalidInput):
        NoiseSpec(-1.0)
    with pytest.raises(InvalidInput):
        AberrationSpec(side=14)


def test_blur_field_delta_identity(rng):
    img = rng.random((30, 30, 3))
    f = PsfField.uniform(delta_kernel(5), 3, 3, 3)
    assert np.array_equal(blur_field(img, f), img)


def test_blur_field_single_cell_equals_conv2d(rng):
    img = rng.random((24, 20))
    k = random_kernel(rng, 5)
    assert np.allclose(blur_field(img, PsfField.uniform(k, 1, 1)), conv2d(img, k), atol=1e-13)


def test_blur_field_per_patch_oracle(rng):
    img = np.add.outer(np.arange(16.0), 0.5 * np.arange(16.0)) / 24
    ks = np.stack([random_kernel(rng, 3) for _ in range(4)]).reshape(2, 2, 1, 3, 3)
    out = blur_field(img, PsfField(ks))
    for i in range(2):
        for j in range(2):
            full = conv_oracle(img, ks[i, j, 0])
            sl = np.s_[8 * i:8 * i + 8, 8 * j:8 * j + 8]
            assert np.allclose(out[sl], full[sl], atol=1e-13)


def test_blur_field_constant():
    img = np.full((30, 30), 0.37)
    out = blur_field(img, PsfField.from_spec(AberrationSpec(side=9), 3, 3, channels=1))
    assert np.allclose(out, 0.37, atol=1e-12)


def test_blur_field_kernel_too_large():
    with pytest.raises(InvalidInput):
        blur_field(np.zeros((12, 12)), PsfField.uniform(delta_kernel(9), 2, 2))


def test_noise_noiseless_limit(rng):
    img = rng.random((20, 20))
    out = add_noise(img, NoiseSpec(gaussian_var=0.0, poisson_scale=1e9))
    assert np.abs(out - img).max() < 1e-4


def test_noise_variance_at_target():
    img = np.full((200, 200), 0.5)
    out = add_noise(img, NoiseSpec.for_total_variance(0.01, seed=5), clip=False)
    assert 0.008 <= out.var() <= 0.012
    # mean preserving before clamping
    assert abs(out.mean() - 0.5) < 3 * 0.1 / 200


def test_noise_deterministic():
    img = np.full((16, 16), 0.4)
    spec = NoiseSpec.for_total_variance(0.01, seed=11)
    assert np.array_equal(add_noise(img, spec), add_noise(img, spec))
    assert not np.array_equal(add_noise(img, spec), add_noise(img, NoiseSpec.for_total_variance(0.01, seed=12)))


def test_psf_field_from_spec_layout():
    f = PsfField.from_spec(AberrationSpec(), 3, 4, channels=3)
    assert f.kernels.shape == (3, 4, 3, 15, 15)
    assert f.valid.all()
    assert np.allclose(f.field_pos[1, 0], (-0.75, 0.0))
