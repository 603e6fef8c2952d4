import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from psfcal.errors import InvalidInput
from psfcal.sensor import (CFA_PATTERNS, ChannelCapture, RawMosaic, capture_adjoint, capture_forward,
                           channel_mask, demosaic_bilinear, mosaic, shift_pattern)

PATTERNS = sorted(CFA_PATTERNS)
COLOUR = {"R": 0, "G": 1, "B": 2}


def test_constant_gray_mosaic():
    raw = mosaic(np.full((6, 6, 3), 0.5), "RGGB")
    assert np.all(raw.data == 0.5)


@pytest.mark.parametrize("pattern", PATTERNS)
def test_mosaic_parity_table(pattern, rng):
    img = rng.random((6, 8, 3))
    raw = mosaic(img, pattern)
    for y in range(6):
        for x in range(8):
            c = COLOUR[pattern[2 * (y % 2) + (x % 2)]]
            assert raw.data[y, x] == img[y, x, c]


def test_pure_red_mosaic():
    img = np.zeros((4, 4, 3))
    img[..., 0] = 0.5
    raw = mosaic(img, "RGGB")
    expect = np.zeros((4, 4))
    expect[::2, ::2] = 0.5
    assert np.array_equal(raw.data, expect)


def test_mosaic_rejects_gray():
    with pytest.raises(InvalidInput):
        mosaic(np.zeros((4, 4)))


@pytest.mark.parametrize("pattern", PATTERNS)
def test_constant_round_trip(pattern):
    img = np.full((7, 9, 3), 0.3)
    assert np.allclose(capture_forward(img, pattern), img, atol=1e-15)


def test_ramp_reconstruction_interior():
    x = np.arange(12) / 12
    img = np.repeat(np.tile(x, (10, 1))[..., None], 3, axis=2)
    out = capture_forward(img, "RGGB")
    assert np.allclose(out[2:-2, 2:-2], img[2:-2, 2:-2], atol=1e-14)


@pytest.mark.parametrize("pattern", PATTERNS)
def test_sampled_sites_preserved(pattern, rng):
    raw = RawMosaic(rng.random((8, 10)), pattern)
    out = demosaic_bilinear(raw)
    for c in range(3):
        m = channel_mask(raw.data.shape, pattern, c)
        assert np.array_equal(out[..., c][m], raw.data[m])
    assert np.array_equal(mosaic(out, pattern).data, raw.data)


@given(st.integers(0, 10_000), st.sampled_from(PATTERNS))
def test_capture_linear(seed, pattern):
    rng = np.random.default_rng(seed)
    x, y = rng.random((2, 8, 8, 3))
    a, b = rng.normal(size=2)
    assert np.allclose(capture_forward(a * x + b * y, pattern),
                       a * capture_forward(x, pattern) + b * capture_forward(y, pattern), atol=1e-12)


@pytest.mark.parametrize("pattern", PATTERNS)
def test_capture_idempotent(pattern, rng):
    x = rng.random((10, 12, 3))
    once = capture_forward(x, pattern)
    assert np.allclose(capture_forward(once, pattern), once, atol=1e-14)


@given(st.integers(0, 10_000), st.sampled_from(PATTERNS))
def test_capture_adjoint(seed, pattern):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 9, 11, 3))
    assert abs(np.sum(capture_forward(x, pattern) * y) - np.sum(x * capture_adjoint(y, pattern))) < 1e-10


def test_channel_capture_adjoint(rng):
    cap = ChannelCapture((12, 10), "GRBG", 2)
    x, y = rng.standard_normal((2, 12, 10))
    assert abs(np.sum(cap.forward(x) * y) - np.sum(x * cap.adjoint(y))) < 1e-12


def test_gray_world_constant():
    img = np.full((8, 8, 3), 0.61)
    assert np.allclose(capture_forward(img), img, atol=1e-15)


def test_shift_pattern():
    assert shift_pattern("RGGB", 0, 1) == "GRBG"
    assert shift_pattern("RGGB", 1, 0) == "GBRG"
    assert shift_pattern("RGGB", 1, 1) == "BGGR"
    assert shift_pattern("RGGB", 2, 4) == "RGGB"


def test_unknown_pattern():
    with pytest.raises(InvalidInput):
        mosaic(np.zeros((4, 4, 3)), "RGBG")
