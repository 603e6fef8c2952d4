import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from psfcal.chart import (AffinePerturbation, CircleGridSpec, patchify, reassemble, render_chart,
                          render_edge)
from psfcal.errors import InvalidInput


def test_empty_grid_is_bright():
    spec = CircleGridSpec(rows=0, cols=0, width=32, height=24)
    img = render_chart(spec)
    assert img.shape == (24, 32)
    assert np.all(img == spec.bright_level)


def test_single_circle_area():
    spec = CircleGridSpec(rows=1, cols=1, pitch=40, radius=10, dark_level=0.0, bright_level=1.0)
    img = render_chart(spec)
    dark_area = np.sum(1.0 - img)
    assert dark_area == pytest.approx(math.pi * 100, rel=0.005)


def test_default_chart_shape_and_levels():
    spec = CircleGridSpec()
    img = render_chart(spec)
    assert img.shape == (192, 192)
    assert img.min() >= spec.dark_level - 1e-12 and img.max() <= spec.bright_level + 1e-12


def test_chart_two_valued_away_from_boundaries():
    spec = CircleGridSpec(rows=2, cols=2, pitch=32, radius=9)
    img = render_chart(spec)
    mixed = (np.abs(img - spec.dark_level) > 1 / 256) & (np.abs(img - spec.bright_level) > 1 / 256)
    yy, xx = np.mgrid[0:64, 0:64] + 0.5
    d = np.full(img.shape, np.inf)
    for cx, cy in spec.centers():
        d = np.minimum(d, np.abs(np.hypot(xx - cx, yy - cy) - spec.radius))
    assert np.all(d[mixed] < 1.0)


@given(st.floats(4.0, 12.0), st.floats(0.1, 3.0))
def test_coverage_monotone_in_radius(r, dr):
    a = render_chart(CircleGridSpec(rows=1, cols=1, pitch=32, radius=r, supersample=4))
    b = render_chart(CircleGridSpec(rows=1, cols=1, pitch=32, radius=min(r + dr, 15.9), supersample=4))
    assert np.all(b <= a + 1e-12)


def test_spec_validation():
    with pytest.raises(InvalidInput):
        CircleGridSpec(radius=40, pitch=64)
    with pytest.raises(InvalidInput):
        CircleGridSpec(dark_level=0.9, bright_level=0.1)


def test_spec_json_round_trip():
    spec = CircleGridSpec(rows=2, cols=5, pitch=30, radius=8)
    assert CircleGridSpec.from_dict(spec.to_dict()) == spec


def test_affine_translation_moves_circles():
    spec = CircleGridSpec(rows=1, cols=1, pitch=40, radius=8, supersample=4)
    base = render_chart(spec)
    moved = render_chart(spec, AffinePerturbation.from_params(tx=3.0, ty=-2.0))
    assert np.allclose(moved[2:-3, 3:], base[4:-1, :-3])


def test_affine_orientation_preserving():
    with pytest.raises(InvalidInput):
        AffinePerturbation(np.array([[-1.0, 0, 0], [0, 1.0, 0]]))
    xf = AffinePerturbation.random(7)
    assert AffinePerturbation.from_dict(xf.to_dict()).matrix.tolist() == xf.matrix.tolist()


def test_patchify_counts():
    img = np.zeros((11 * 16, 17 * 16))
    patches = patchify(img, 11, 17)
    assert len(patches) == 187
    one = patchify(img, 1, 1)
    assert len(one) == 1 and one[0].field_pos == (0.0, 0.0)
    assert np.array_equal(one[0].image, img)


def test_patchify_reassembles(rng):
    img = rng.random((64, 64))
    patches = patchify(img, 2, 2)
    assert all(p.image.shape == (32, 32) for p in patches)
    assert np.array_equal(reassemble(patches, 2, 2), img)


def test_patchify_field_positions_symmetric():
    pos = np.array([p.field_pos for p in patchify(np.zeros((90, 90)), 3, 3)])
    assert np.allclose(pos.sum(axis=0), 0.0)
    assert np.allclose(np.abs(pos).max(), 2 / 3)


def test_patchify_grid_too_large():
    with pytest.raises(InvalidInput):
        patchify(np.zeros((4, 4)), 5, 1)


def test_render_edge_dark_left():
    e = render_edge(32, 32, math.radians(5))
    assert e[:, 0].max() == pytest.approx(0.1) and e[:, -1].min() == pytest.approx(0.9)
