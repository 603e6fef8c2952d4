import json

import numpy as np
import pytest

from conftest import random_kernel
from psfcal import io as pio
from psfcal.errors import InvalidInput
from psfcal.imagecore import FlowField
from psfcal.optics_sim import PsfField
from psfcal.sensor import mosaic


def test_png16_round_trip(tmp_path, rng):
    for img in (rng.random((13, 17)), rng.random((13, 17, 3))):
        p = tmp_path / "a.png"
        pio.write_png16(p, img)
        back = pio.read_png(p)
        assert back.shape == img.shape
        assert np.abs(back - img).max() <= 0.5 / 65535 + 1e-12


def test_png_clips(tmp_path):
    pio.write_png16(tmp_path / "c.png", np.array([[-1.0, 2.0]]))
    assert np.array_equal(pio.read_png(tmp_path / "c.png"), [[0.0, 1.0]])


def test_png_missing(tmp_path):
    with pytest.raises(OSError):
        pio.read_png(tmp_path / "missing.png")


@pytest.mark.parametrize("shape", [(5, 7), (5, 7, 3)])
def test_pfm_round_trip(tmp_path, rng, shape):
    img = rng.standard_normal(shape)
    pio.write_pfm(tmp_path / "a.pfm", img)
    assert np.array_equal(pio.read_pfm(tmp_path / "a.pfm"), img.astype(np.float32))


def test_pfm_bottom_up(tmp_path):
    img = np.array([[1.0, 2.0], [3.0, 4.0]])
    pio.write_pfm(tmp_path / "a.pfm", img)
    raw = (tmp_path / "a.pfm").read_bytes()
    body = np.frombuffer(raw[-16:], dtype="<f4")
    assert list(body) == [3.0, 4.0, 1.0, 2.0]


def test_pfm_rejects_two_channels(tmp_path):
    with pytest.raises(InvalidInput):
        pio.write_pfm(tmp_path / "a.pfm", np.zeros((3, 3, 2)))


def test_flow_exports(tmp_path, rng):
    v = FlowField(rng.standard_normal((4, 6)), rng.standard_normal((4, 6)))
    pio.write_flow_pfm(tmp_path / "f.pfm", v)
    back = pio.read_pfm(tmp_path / "f.pfm")
    assert np.allclose(back[..., 0], v.dx, atol=1e-6) and np.allclose(back[..., 1], v.dy, atol=1e-6)
    pio.write_flow_csv(tmp_path / "f.csv", v, step=2)
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "x,y,dx,dy" and len(lines) == 1 + 2 * 3
    x, y, dx, dy = lines[1 + 3 + 1].split(",")
    assert (int(x), int(y)) == (2, 2) and float(dx) == v.dx[2, 2]


def test_kernel_json_exact(tmp_path, rng):
    k = random_kernel(rng, 9)
    pio.write_kernel_json(tmp_path / "k.json", k)
    d = json.loads((tmp_path / "k.json").read_text())
    assert d["side"] == 9 and len(d["data"]) == 81
    assert np.array_equal(pio.read_kernel_json(tmp_path / "k.json"), k)


def test_kernel_json_bad_length():
    with pytest.raises(InvalidInput):
        pio.kernel_from_dict({"side": 3, "data": [1.0]})


def test_psf_field_round_trip(tmp_path, rng):
    ks = np.stack([random_kernel(rng, 5) for _ in range(2 * 3 * 3)]).reshape(2, 3, 3, 5, 5)
    valid = np.ones((2, 3, 3), bool)
    valid[1, 2, 0] = False
    pos = rng.random((2, 3, 2))
    f = PsfField(ks, valid, pos, {"failures": {"1,2,0": "EmptyRoi: x"}})
    pio.write_psf_field(tmp_path / "fld", f)
    g = pio.read_psf_field(tmp_path / "fld")
    assert np.array_equal(g.valid, valid)
    assert np.array_equal(g.kernels[valid], ks[valid])
    assert np.array_equal(g.field_pos, pos)
    assert g.diagnostics == f.diagnostics


def test_raw_round_trip(tmp_path, rng):
    raw = mosaic(rng.random((8, 10, 3)), "GBRG")
    pio.write_raw(tmp_path / "r.png", raw)
    back = pio.read_raw(tmp_path / "r.png")
    assert back.pattern == "GBRG"
    assert np.abs(back.data - raw.data).max() <= 0.5 / 65535 + 1e-12
