"""Command-line entry point: ``psfcal <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 pipeline error (a JSON diagnostic
is printed on stderr).  The log level comes from ``PSFCAL_LOG_LEVEL``.
"""
import argparse
import base64
import csv
import html
import io as _io
import json
import logging
import math
import os
import sys

import numpy as np

from . import io as pio
from .chart import AffinePerturbation, CircleGridSpec, render_chart
from .errors import InvalidInput, PsfCalError
from .metrics import kernel_psnr, kernel_ssim, mtf_from_psf, slanted_edge_sfr
from .optics_sim import AberrationSpec, NoiseSpec, PsfField
from .optim import OptimConfig, calibrate_field
from .sensor import demosaic_bilinear
from .simulate import simulate_capture

log = logging.getLogger("psfcal")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for pipeline errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _grid(text):
    try:
        rows, cols = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 11x17, got {text!r}")
    if rows < 1 or cols < 1:
        raise argparse.ArgumentTypeError("grid dimensions must be positive")
    return rows, cols


def _roi(text):
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError:
        vals = []
    if len(vals) != 4 or vals[2] <= 0 or vals[3] <= 0:
        raise argparse.ArgumentTypeError("roi must be x,y,w,h with positive w and h")
    return vals


def _load_json(path):
    return pio.read_json(path) if path else None


def _cell_tag(i, j, c):
    return f"r{i:02d}_c{j:02d}_ch{c}"


def _fmt(v):
    return "nan" if not np.isfinite(v) else f"{v:.6f}"


# ------------------------------------------------------------------ subcommands


def cmd_render_chart(args):
    spec = CircleGridSpec.from_dict(_load_json(args.spec)) if args.spec else CircleGridSpec()
    xform = None
    if args.affine:
        xform = AffinePerturbation.from_dict(_load_json(args.affine))
    elif args.random_affine:
        c = spec.canvas
        xform = AffinePerturbation.random(args.seed, center=(c[1] / 2.0, c[0] / 2.0))
    pio.write_png16(args.out, render_chart(spec, xform))
    if xform is not None:
        pio.write_json(args.out + ".affine.json", xform.to_dict())


def cmd_simulate(args):
    sharp = pio.read_png(args.chart)
    ab = AberrationSpec.from_dict(_load_json(args.aberration)) if args.aberration else AberrationSpec()
    noise = NoiseSpec.from_dict(_load_json(args.noise)) if args.noise else None
    if args.seed is not None:
        ab.seed = args.seed
        if noise is not None:
            noise.seed = args.seed
    rows, cols = args.grid
    gt = PsfField.from_spec(ab, rows, cols, channels=3)
    raw, rgb = simulate_capture(sharp, gt, noise, args.cfa)
    pio.write_raw(args.out, raw)
    if args.rgb_out:
        pio.write_png16(args.rgb_out, rgb)
    if args.gt_kernels:
        pio.write_psf_field(args.gt_kernels, gt)


def _read_capture(path):
    """A raw mosaic (single channel, CFA sidecar) is demosaiced; colour or gray images pass through."""
    img = pio.read_png(path)
    if img.ndim == 2 and os.path.exists(str(path) + ".json"):
        raw = pio.read_raw(path)
        return demosaic_bilinear(raw), raw.pattern
    return img, None


def cmd_calibrate(args):
    cfg = OptimConfig.from_dict(_load_json(args.config)) if args.config else OptimConfig()
    img, pattern = _read_capture(args.input)
    overrides = {}
    if pattern is not None:
        overrides["cfa_pattern"] = pattern
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = cfg.replace(**overrides)
    rows, cols = args.grid
    field_, results = calibrate_field(img, rows, cols, cfg, jobs=args.jobs, return_results=True)
    out = args.out
    pio.write_psf_field(out, field_)
    pio.write_json(os.path.join(out, "config.json"), cfg.to_dict())
    for sub in ("latents", "traces", "diagnostics"):
        os.makedirs(os.path.join(out, sub), exist_ok=True)
    for (i, j, c), res in sorted(results.items()):
        tag = _cell_tag(i, j, c)
        pio.write_png16(os.path.join(out, "latents", f"latent_{tag}.png"), res.latent)
        with open(os.path.join(out, "traces", f"loss_{tag}.csv"), "w") as f:
            f.write("iteration,loss\n")
            for it, v in enumerate(res.loss_trace):
                f.write(f"{it},{float(v)!r}\n")
        with open(os.path.join(out, "diagnostics", f"diag_{tag}.json"), "w") as f:
            json.dump(res.diagnostics, f, indent=2, sort_keys=True, default=float)


def _match_side(est, gt):
    """Zero-pad the smaller kernel (centred) so both have the same support."""
    d = est.shape[0] - gt.shape[0]
    if d > 0:
        gt = np.pad(gt, d // 2)
    elif d < 0:
        est = np.pad(est, -d // 2)
    return est, gt


def cmd_evaluate(args):
    est = pio.read_psf_field(args.est)
    gt = pio.read_psf_field(args.gt)
    if est.grid != gt.grid or est.channels != gt.channels:
        raise InvalidInput(f"field layouts differ: {est.grid}x{est.channels} vs {gt.grid}x{gt.channels}")
    rows, cols = gt.grid
    lines = ["row,col,channel,psnr_db,ssim"]
    ps, ss = [], []
    for c in range(gt.channels):
        for i in range(rows):
            for j in range(cols):
                if not (est.valid[i, j, c] and gt.valid[i, j, c]):
                    lines.append(f"{i},{j},{c},nan,nan")
                    continue
                k_est, k_gt = _match_side(est.kernels[i, j, c], gt.kernels[i, j, c])
                p, s = kernel_psnr(k_est, k_gt), kernel_ssim(k_est, k_gt)
                ps.append(p)
                ss.append(s)
                lines.append(f"{i},{j},{c},{_fmt(p)},{_fmt(s)}")
    mean_p = float(np.mean(ps)) if ps else float("nan")
    mean_s = float(np.mean(ss)) if ss else float("nan")
    lines.append(f"mean,,,{_fmt(mean_p)},{_fmt(mean_s)}")
    with open(args.out, "w") as f:
        f.write("\n".join(lines) + "\n")
    print(f"kernels scored: {len(ps)}  mean PSNR {_fmt(mean_p)} dB  mean SSIM {_fmt(mean_s)}")


def _figure_png(fig):
    buf = _io.BytesIO()
    fig.savefig(buf, format="png", dpi=90, bbox_inches="tight")
    return buf.getvalue()


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def cmd_mtf(args):
    plt = _pyplot()
    field_ = pio.read_psf_field(args.kernels)
    os.makedirs(args.out, exist_ok=True)
    rows, cols = field_.grid
    colours = ["tab:red", "tab:green", "tab:blue"] if field_.channels == 3 else ["k"]
    for i in range(rows):
        for j in range(cols):
            fig, ax = plt.subplots(figsize=(4, 3))
            drawn = False
            for c in range(field_.channels):
                if not field_.valid[i, j, c]:
                    continue
                curves = mtf_from_psf(field_.kernels[i, j, c], n_freq=args.n_freq)
                with open(os.path.join(args.out, f"mtf_{_cell_tag(i, j, c)}.csv"), "w") as f:
                    f.write("frequency," + ",".join(
                        f"mtf_{round(math.degrees(cv.orientation))}deg" for cv in curves) + "\n")
                    for n, fr in enumerate(curves[0].frequencies):
                        f.write(f"{float(fr)!r}," + ",".join(f"{float(cv.modulation[n])!r}" for cv in curves) + "\n")
                for cv, style in zip(curves, ("-", "--")):
                    ax.plot(cv.frequencies, cv.modulation, style, color=colours[c % len(colours)],
                            label=f"ch{c} {round(math.degrees(cv.orientation))} deg")
                drawn = True
            if drawn:
                ax.set_xlabel("cycles / pixel")
                ax.set_ylabel("MTF")
                ax.set_ylim(0, 1.05)
                ax.set_title(f"region ({i}, {j})")
                ax.legend(fontsize=6)
                with open(os.path.join(args.out, f"mtf_r{i:02d}_c{j:02d}.png"), "wb") as f:
                    f.write(_figure_png(fig))
            plt.close(fig)


def cmd_sfr(args):
    img = pio.read_png(args.image)
    if img.ndim == 3:
        img = img[..., args.channel] if args.channel is not None else img.mean(axis=2)
    x, y, w, h = args.roi
    if x < 0 or y < 0 or y + h > img.shape[0] or x + w > img.shape[1]:
        raise InvalidInput(f"roi {args.roi} falls outside the {img.shape[1]}x{img.shape[0]} image")
    curve = slanted_edge_sfr(img[y:y + h, x:x + w], math.radians(args.angle), n_freq=args.n_freq)
    curve.to_csv(args.out)
    if curve.diagnostics.get("warning"):
        print(f"warning: {curve.diagnostics['warning']} "
              f"(measured {math.degrees(curve.diagnostics['angle']):.2f} deg)", file=sys.stderr)


def cmd_deblur(args):
    from .deblur import wiener_deblur

    img = pio.read_png(args.image)
    field_ = pio.read_psf_field(args.kernels)
    if img.ndim == 3 and field_.channels == 1:
        img = img.mean(axis=2)
    pio.write_png16(args.out, wiener_deblur(img, field_, args.nsr))


# ------------------------------------------------------------------ report


def _img_tag(png, alt):
    data = base64.b64encode(png).decode("ascii")
    return f'<img alt="{html.escape(alt)}" src="data:image/png;base64,{data}">'


def _kernel_grid_png(plt, field_):
    rows, cols = field_.grid
    nch = field_.channels
    fig, axes = plt.subplots(rows, cols * nch, figsize=(1.1 * cols * nch, 1.1 * rows), squeeze=False)
    for i in range(rows):
        for j in range(cols):
            for c in range(nch):
                ax = axes[i][c * cols + j]
                ax.set_xticks([])
                ax.set_yticks([])
                if field_.valid[i, j, c]:
                    ax.imshow(field_.kernels[i, j, c], cmap="inferno", interpolation="nearest")
                else:
                    ax.set_facecolor("0.8")
                if i == 0 and j == 0:
                    ax.set_title(f"ch{c}", fontsize=7, loc="left")
    png = _figure_png(fig)
    plt.close(fig)
    return png


def _read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def _curve_overlay_png(plt, files, title):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for path in files:
        rows = _read_csv(path)
        head, body = rows[0], np.array(rows[1:], dtype=np.float64)
        for k in range(1, len(head)):
            ax.plot(body[:, 0], body[:, k], lw=0.8,
                    label=f"{os.path.basename(path)} {head[k]}" if len(files) <= 6 else None)
    ax.set_xlabel("cycles / pixel")
    ax.set_ylabel("modulation")
    ax.set_ylim(0, 1.05)
    ax.set_title(title)
    if len(files) <= 6:
        ax.legend(fontsize=6)
    png = _figure_png(fig)
    plt.close(fig)
    return png


def cmd_report(args):
    """Single-file HTML summary of everything the other subcommands left in ``--run``."""
    plt = _pyplot()
    fields, scores, mtfs, sfrs = [], [], [], []
    for root, dirs, files in os.walk(args.run):
        dirs.sort()
        if "index.json" in files:
            fields.append(root)
        for name in sorted(files):
            if not name.endswith(".csv"):
                continue
            path = os.path.join(root, name)
            with open(path) as f:
                head = f.readline().strip()
            if head.startswith("row,col,channel,psnr_db"):
                scores.append(path)
            elif head.startswith("frequency,mtf_"):
                mtfs.append(path)
            elif head == "frequency,modulation":
                sfrs.append(path)
    if not (fields or scores or mtfs or sfrs):
        raise InvalidInput(f"no psfcal outputs found under {args.run}")

    parts = ["<!DOCTYPE html><html><head><meta charset='utf-8'><title>psfcal report</title>",
             "<style>body{font-family:sans-serif;margin:2em}table{border-collapse:collapse}"
             "td,th{border:1px solid #bbb;padding:2px 6px;font-size:12px}</style></head><body>",
             f"<h1>psfcal report: {html.escape(os.path.basename(os.path.abspath(args.run)))}</h1>"]
    for d in fields:
        rel = os.path.relpath(d, args.run)
        f_ = pio.read_psf_field(d)
        parts.append(f"<h2>Kernels: {html.escape(rel)}</h2>")
        parts.append(f"<p>{f_.grid[0]} x {f_.grid[1]} regions, {f_.channels} channel(s), "
                     f"side {f_.side}, {int(f_.valid.sum())} valid kernels</p>")
        parts.append(_img_tag(_kernel_grid_png(plt, f_), f"kernel grid {rel}"))
    for path in scores:
        rows = _read_csv(path)
        parts.append(f"<h2>Scores: {html.escape(os.path.relpath(path, args.run))}</h2><table>")
        parts.append("<tr>" + "".join(f"<th>{html.escape(v)}</th>" for v in rows[0]) + "</tr>")
        for r in rows[1:]:
            parts.append("<tr>" + "".join(f"<td>{html.escape(v)}</td>" for v in r) + "</tr>")
        parts.append("</table>")
    if mtfs:
        parts.append("<h2>MTF from kernels</h2>")
        parts.append(_img_tag(_curve_overlay_png(plt, mtfs, "MTF from calibrated kernels"), "mtf overlay"))
    if sfrs:
        parts.append("<h2>Slanted-edge SFR</h2>")
        parts.append(_img_tag(_curve_overlay_png(plt, sfrs, "slanted-edge SFR"), "sfr overlay"))
    parts.append("</body></html>")
    with open(args.out, "w") as f:
        f.write("\n".join(parts))


# ------------------------------------------------------------------ parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the seed of the inputs")

    p = _Parser(prog="psfcal", description="PSF calibration from a circle-grid chart.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("render-chart", parents=[common], help="render the circle chart")
    s.add_argument("--spec", help="CircleGridSpec JSON")
    s.add_argument("--affine", help="AffinePerturbation JSON")
    s.add_argument("--random-affine", action="store_true", help="draw a random perturbation from --seed")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render_chart, seed=0)

    s = sub.add_parser("simulate", parents=[common], help="capture a chart through the synthetic lens")
    s.add_argument("--chart", required=True)
    s.add_argument("--aberration", help="AberrationSpec JSON")
    s.add_argument("--noise", help="NoiseSpec JSON (omit for a noiseless capture)")
    s.add_argument("--cfa", default="RGGB")
    s.add_argument("--grid", type=_grid, default=(3, 3), help="ground-truth kernel grid, e.g. 3x3")
    s.add_argument("--out", required=True, help="raw mosaic PNG")
    s.add_argument("--rgb-out", help="also write the demosaiced capture")
    s.add_argument("--gt-kernels", help="directory for the ground-truth PSF field")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("calibrate", parents=[common], help="estimate a PSF field from a capture")
    s.add_argument("--input", required=True)
    s.add_argument("--grid", type=_grid, required=True)
    s.add_argument("--config", help="OptimConfig JSON")
    s.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("evaluate", parents=[common], help="score kernels against ground truth")
    s.add_argument("--est", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("mtf", parents=[common], help="MTF curves and plots from a PSF field")
    s.add_argument("--kernels", required=True)
    s.add_argument("--n-freq", type=int, default=65)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mtf)

    s = sub.add_parser("sfr", parents=[common], help="slanted-edge SFR of an image region")
    s.add_argument("--image", required=True)
    s.add_argument("--roi", type=_roi, required=True, help="x,y,w,h")
    s.add_argument("--angle", type=float, default=5.0, help="nominal edge angle in degrees")
    s.add_argument("--channel", type=int, choices=(0, 1, 2))
    s.add_argument("--n-freq", type=int, default=65)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sfr)

    s = sub.add_parser("deblur", parents=[common], help="Wiener restoration with a PSF field")
    s.add_argument("--image", required=True)
    s.add_argument("--kernels", required=True)
    s.add_argument("--nsr", type=float, default=1e-3)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_deblur)

    s = sub.add_parser("report", parents=[common], help="single-file HTML summary of a run directory")
    s.add_argument("--run", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    level = os.environ.get("PSFCAL_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        args.func(args)
    except (PsfCalError, OSError, ValueError, KeyError, TypeError) as exc:
        diag = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
        for attr in ("failures",):
            if getattr(exc, attr, None):
                diag[attr] = getattr(exc, attr)
        print(json.dumps(diag, sort_keys=True, default=str), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
