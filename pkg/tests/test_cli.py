import csv
import json
import math
import shutil
import subprocess

import numpy as np
import pytest

from psfcal import io as pio
from psfcal.chart import render_edge
from psfcal.cli import main
from psfcal.imagecore import conv2d, gaussian_kernel

TINY = {"kernel_side": 9, "iterations": 80, "kernel_warmup": 80, "pyramid_levels": 1,
        "parameterization": "logit-grid"}


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    spec = _write(d / "spec.json", {"rows": 2, "cols": 2, "pitch": 48, "radius": 14})
    ab = _write(d / "ab.json", {"side": 9, "seed": 4})
    cfg = _write(d / "cfg.json", TINY)
    assert main(["render-chart", "--spec", spec, "--out", str(d / "chart.png")]) == 0
    assert main(["simulate", "--chart", str(d / "chart.png"), "--aberration", ab, "--grid", "2x2",
                 "--out", str(d / "raw.png"), "--rgb-out", str(d / "rgb.png"), "--gt-kernels", str(d / "gt")]) == 0
    assert main(["calibrate", "--input", str(d / "raw.png"), "--grid", "2x2", "--config", cfg, "--jobs", "1",
                 "--out", str(d / "est")]) == 0
    assert main(["evaluate", "--est", str(d / "est"), "--gt", str(d / "gt"), "--out", str(d / "scores.csv")]) == 0
    return d


def test_calibrate_outputs(run):
    est = run / "est"
    f = pio.read_psf_field(est)
    assert f.kernels.shape == (2, 2, 3, 9, 9) and f.valid.all()
    assert np.allclose(f.kernels.sum(axis=(-1, -2)), 1.0, atol=1e-6)
    assert json.loads((est / "config.json").read_text())["iterations"] == 80
    assert len(list((est / "latents").glob("latent_*.png"))) == 12
    trace = (est / "traces" / "loss_r00_c00_ch0.csv").read_text().splitlines()
    assert trace[0] == "iteration,loss" and len(trace) == 1 + 80 + 80
    assert "final_fidelity" in json.loads((est / "diagnostics" / "diag_r01_c01_ch2.json").read_text())


def test_scores_layout(run):
    rows = list(csv.reader(open(run / "scores.csv")))
    assert rows[0] == ["row", "col", "channel", "psnr_db", "ssim"]
    assert len(rows) == 1 + 12 + 1
    assert rows[-1][0] == "mean"
    assert [r[:3] for r in rows[1:5]] == [["0", "0", "0"], ["0", "1", "0"], ["1", "0", "0"], ["1", "1", "0"]]
    assert all(float(r[3]) > 25 for r in rows[1:-1])


def test_evaluate_identity_cap(run, tmp_path):
    assert main(["evaluate", "--est", str(run / "gt"), "--gt", str(run / "gt"), "--out", str(tmp_path / "s.csv")]) == 0
    rows = list(csv.reader(open(tmp_path / "s.csv")))[1:]
    assert all(float(r[3]) == 300.0 and float(r[4]) == 1.0 for r in rows)


def test_evaluate_pads_smaller_kernel(run, tmp_path):
    f = pio.read_psf_field(run / "gt")
    from psfcal.optics_sim import PsfField
    wide = PsfField(np.pad(f.kernels, ((0, 0),) * 3 + ((2, 2), (2, 2))), f.valid, f.field_pos)
    pio.write_psf_field(tmp_path / "wide", wide)
    assert main(["evaluate", "--est", str(tmp_path / "wide"), "--gt", str(run / "gt"),
                 "--out", str(tmp_path / "s.csv")]) == 0
    rows = list(csv.reader(open(tmp_path / "s.csv")))[1:-1]
    assert all(float(r[3]) == 300.0 for r in rows)


def test_sharp_chart_near_delta(tmp_path):
    spec = _write(tmp_path / "spec.json", {"rows": 1, "cols": 1, "pitch": 48, "radius": 14, "supersample": 1})
    cfg = _write(tmp_path / "cfg.json", {"kernel_side": 9, "iterations": 150, "kernel_warmup": 150})
    assert main(["render-chart", "--spec", spec, "--out", str(tmp_path / "c.png")]) == 0
    assert main(["calibrate", "--input", str(tmp_path / "c.png"), "--grid", "1x1", "--config", cfg,
                 "--jobs", "1", "--out", str(tmp_path / "est")]) == 0
    k = pio.read_kernel_json(tmp_path / "est" / "kernels" / "k_r00_c00_ch0.json")
    assert k[4, 4] > 0.9


def test_mtf_and_report(run, tmp_path):
    assert main(["mtf", "--kernels", str(run / "est"), "--n-freq", "33", "--out", str(run / "mtf")]) == 0
    rows = list(csv.reader(open(run / "mtf" / "mtf_r00_c00_ch1.csv")))
    assert rows[0] == ["frequency", "mtf_0deg", "mtf_90deg"] and len(rows) == 34
    assert float(rows[1][1]) == 1.0
    assert len(list((run / "mtf").glob("mtf_r*_c*.png"))) == 4
    out = tmp_path / "report.html"
    assert main(["report", "--run", str(run), "--out", str(out)]) == 0
    text = out.read_text()
    assert text.count("data:image/png;base64,") >= 3
    assert "psnr_db" in text


def test_sfr_command(tmp_path):
    k = gaussian_kernel(9, 1.2)
    img = np.full((80, 100), 0.5)
    img[10:74, 20:84] = conv2d(render_edge(64, 64, math.radians(5)), k)
    pio.write_png16(tmp_path / "e.png", img)
    assert main(["sfr", "--image", str(tmp_path / "e.png"), "--roi", "20,10,64,64", "--angle", "5",
                 "--out", str(tmp_path / "sfr.csv")]) == 0
    rows = list(csv.reader(open(tmp_path / "sfr.csv")))
    assert rows[0] == ["frequency", "modulation"] and float(rows[1][1]) == 1.0
    assert main(["sfr", "--image", str(tmp_path / "e.png"), "--roi", "90,70,64,64",
                 "--out", str(tmp_path / "x.csv")]) == 2


def test_deblur_command(run, tmp_path):
    assert main(["deblur", "--image", str(run / "rgb.png"), "--kernels", str(run / "gt"), "--nsr", "1e-3",
                 "--out", str(tmp_path / "r.png")]) == 0
    sharp = pio.read_png(run / "chart.png")
    blurred = pio.read_png(run / "rgb.png").mean(axis=2)
    restored = pio.read_png(tmp_path / "r.png").mean(axis=2)
    assert np.mean((restored - sharp) ** 2) < np.mean((blurred - sharp) ** 2)


def test_render_random_affine_sidecar(tmp_path):
    out = str(tmp_path / "c.png")
    assert main(["render-chart", "--random-affine", "--seed", "3", "--out", out]) == 0
    m = np.array(json.loads(open(out + ".affine.json").read())["matrix"])
    assert m.shape == (2, 3) and not np.allclose(m, [[1, 0, 0], [0, 1, 0]])
    assert pio.read_png(out).shape == (192, 192)


@pytest.mark.parametrize("argv", [[], ["calibrate"], ["calibrate", "--input", "x.png", "--grid", "3by3", "--out", "o"],
                                  ["sfr", "--image", "a", "--roi", "1,2,3", "--out", "o"], ["frobnicate"]])
def test_usage_errors_exit_1(argv):
    assert main(argv) == 1


def test_pipeline_error_exit_2(tmp_path, capsys):
    code = main(["evaluate", "--est", str(tmp_path / "nope"), "--gt", str(tmp_path / "nope"),
                 "--out", str(tmp_path / "s.csv")])
    assert code == 2
    diag = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert diag["command"] == "evaluate" and diag["error"] == "FileNotFoundError"


def test_unknown_config_key_exit_2(run, tmp_path):
    cfg = _write(tmp_path / "bad.json", {"kernel_sied": 9})
    assert main(["calibrate", "--input", str(run / "raw.png"), "--grid", "2x2", "--config", cfg,
                 "--out", str(tmp_path / "o")]) == 2


def test_help_exit_0():
    assert main(["--help"]) == 0


@pytest.mark.slow
def test_full_grid_187(tmp_path):
    spec = _write(tmp_path / "spec.json", {"rows": 11, "cols": 17, "pitch": 48, "radius": 14})
    cfg = _write(tmp_path / "cfg.json", {"kernel_side": 9, "iterations": 2, "kernel_warmup": 2, "pyramid_levels": 1})
    assert main(["render-chart", "--spec", spec, "--out", str(tmp_path / "c.png")]) == 0
    assert main(["simulate", "--chart", str(tmp_path / "c.png"), "--grid", "11x17", "--out", str(tmp_path / "raw.png"),
                 "--gt-kernels", str(tmp_path / "gt")]) == 0
    assert main(["calibrate", "--input", str(tmp_path / "raw.png"), "--grid", "11x17", "--config", cfg,
                 "--jobs", "1", "--out", str(tmp_path / "est")]) == 0
    assert main(["evaluate", "--est", str(tmp_path / "est"), "--gt", str(tmp_path / "gt"),
                 "--out", str(tmp_path / "s.csv")]) == 0
    rows = list(csv.reader(open(tmp_path / "s.csv")))[1:-1]
    for c in range(3):
        assert sum(r[2] == str(c) for r in rows) == 187


@pytest.mark.skipif(shutil.which("psfcal") is None, reason="console script not installed")
def test_console_script(tmp_path):
    r = subprocess.run(["psfcal", "render-chart", "--out", str(tmp_path / "c.png")], capture_output=True)
    assert r.returncode == 0 and (tmp_path / "c.png").exists()
    r = subprocess.run(["psfcal", "evaluate"], capture_output=True)
    assert r.returncode == 1
