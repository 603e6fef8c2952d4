import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psfcal.chart import CircleGridSpec, render_chart
from psfcal.deblur import _ramp, wiener_deblur, wiener_filter
from psfcal.errors import DivergentRestoration, InvalidInput
from psfcal.imagecore import conv2d, delta_kernel, gaussian_kernel, psnr
from psfcal.optics_sim import AberrationSpec, PsfField, blur_field
from psfcal.simulate import render_scene


@pytest.mark.parametrize("n,cuts", [(50, [0, 17, 33, 50]), (40, [0, 40]), (31, [0, 10, 20, 31])])
def test_ramps_partition_unity(n, cuts):
    total = sum(_ramp(n, cuts[i], cuts[i + 1], 3, i == 0, i == len(cuts) - 2) for i in range(len(cuts) - 1))
    assert np.allclose(total, 1.0)


def test_delta_identity(rng):
    img = rng.random((40, 50, 3))
    out = wiener_deblur(img, PsfField.uniform(delta_kernel(7), 2, 3, 3), nsr=1e-4)
    assert np.abs(out - img).max() < 1e-3


def test_wiener_filter_inverts_circular_blur(rng):
    x = rng.random((32, 32))
    k = gaussian_kernel(5, 0.7)
    pad = np.zeros((32, 32))
    pad[:5, :5] = k
    pad = np.roll(pad, (-2, -2), axis=(0, 1))
    b = np.real(np.fft.ifft2(np.fft.fft2(x) * np.fft.fft2(pad)))
    assert np.abs(wiener_filter(b, k, 0.0) - x).max() < 1e-8


def test_zero_nsr_spectral_zero_raises():
    k = np.zeros((3, 3))
    k[1] = [0.25, 0.5, 0.25]  # vanishes at Nyquist along x
    with pytest.raises(DivergentRestoration):
        wiener_deblur(np.full((24, 24), 0.5), PsfField.uniform(k, 1, 1), nsr=0.0)


def test_negative_nsr():
    with pytest.raises(InvalidInput):
        wiener_deblur(np.zeros((16, 16)), PsfField.uniform(delta_kernel(3), 1, 1), nsr=-1.0)


def test_hole_rejected():
    f = PsfField.uniform(delta_kernel(3), 2, 2)
    f.valid[1, 1, 0] = False
    with pytest.raises(InvalidInput):
        wiener_deblur(np.zeros((16, 16)), f)


def test_true_kernel_improves_chart():
    sharp = render_chart(CircleGridSpec(rows=3, cols=3))
    gt = PsfField.from_spec(AberrationSpec(seed=0), 3, 3, channels=1)
    blurred = blur_field(sharp, gt)
    restored = wiener_deblur(blurred, gt, nsr=1e-3)
    assert psnr(restored, sharp) - psnr(blurred, sharp) >= 5.0


@settings(max_examples=10)
@given(st.integers(0, 10_000), st.sampled_from([1e-4, 1e-3, 1e-2]))
def test_energy_guard(seed, nsr):
    scene = render_scene(96, 96, n_shapes=15, seed=seed)
    gt = PsfField.from_spec(AberrationSpec(seed=seed), 2, 2, channels=1)
    blurred = blur_field(scene, gt)
    out = wiener_deblur(blurred, gt, nsr)
    assert abs(out.mean() - blurred.mean()) <= 0.05 * blurred.mean()


def test_true_beats_mismatched():
    wins, trials = 0, 20
    for t in range(trials):
        field = PsfField.from_spec(AberrationSpec(seed=t), 3, 3, channels=1)
        k_true, k_other = field.kernels[0, 0, 0], field.kernels[2, 2, 0]
        scene = render_scene(96, 96, n_shapes=20, seed=100 + t)
        blurred = conv2d(scene, k_true)
        good = psnr(wiener_deblur(blurred, PsfField.uniform(k_true, 1, 1), 1e-3), scene)
        bad = psnr(wiener_deblur(blurred, PsfField.uniform(k_other, 1, 1), 1e-3), scene)
        wins += good >= bad
    assert wins >= 0.9 * trials


def test_channels_must_match(rng):
    with pytest.raises(InvalidInput):
        wiener_deblur(rng.random((16, 16, 3)), PsfField.uniform(delta_kernel(3), 1, 1, channels=2))
