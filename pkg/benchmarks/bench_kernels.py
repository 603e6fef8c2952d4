"""Compare the numba kernels with their pure-numpy fallbacks.

Per-kernel timings call the ``_nb`` and ``_np`` variants directly on
calibration-sized inputs (a 64 x 64 patch, side-15 kernel, 225 x 64 sine
layer).  The end-to-end timing runs one ``calibrate_patch`` in two fresh
interpreters, one with ``PSFCAL_DISABLE_NUMBA=1``.

    python benchmarks/bench_kernels.py [--repeat 20] [--no-end-to-end]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from psfcal import _kernels
from psfcal._accel import HAS_NUMBA

E2E = """
import time
from psfcal.chart import CircleGridSpec, render_chart
from psfcal.imagecore import conv2d, gaussian_kernel
from psfcal.optim import OptimConfig, calibrate_patch
b = conv2d(render_chart(CircleGridSpec(rows=1, cols=1)), gaussian_kernel(15, 1.5))
cfg = OptimConfig(kernel_side=15, iterations={its}, kernel_warmup={its})
calibrate_patch(b, cfg.replace(iterations=2, kernel_warmup=2))  # compile / warm caches
t = time.perf_counter()
calibrate_patch(b, cfg)
print(time.perf_counter() - t)
"""


def _cases(rng):
    img = rng.random((64, 64))
    dx, dy = rng.normal(0, 0.5, (2, 64, 64))
    k = rng.random((15, 15))
    k /= k.sum()
    padded = rng.random((78, 78))
    bh, b = rng.random((2, 64, 64))
    z = rng.uniform(-6, 6, (225, 64))
    return {
        "warp_with_grad": ((img, dx, dy), _kernels._warp_nb, _kernels._warp_np),
        "minmax_filter r=2": ((img, 2, True), _kernels._minmax_nb, _kernels._minmax_np),
        "conv_valid side 15": ((padded, k), _kernels._conv_nb, _kernels._conv_np),
        "conv3 (demosaic)": ((img, rng.random((3, 3))), _kernels._conv3_nb, _kernels._conv3_np),
        "l1_head": ((bh, b, 1.0), _kernels._l1_head_nb, _kernels._l1_head_np),
        "smoothness": ((dx, dy), _kernels._smooth_nb, _kernels._smooth_np),
        "sincos 225x64": ((z,), _kernels._sincos_nb, _kernels._sincos_np),
    }


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numba ms':>10}{'numpy ms':>10}{'speed-up':>10}")
    for name, (args, f_nb, f_np) in _cases(rng).items():
        f_nb(*args)  # jit compile outside the timing
        t_nb = min(timeit.repeat(lambda: f_nb(*args), number=10, repeat=repeat)) / 10 * 1e3
        t_np = min(timeit.repeat(lambda: f_np(*args), number=10, repeat=repeat)) / 10 * 1e3
        print(f"{name:<22}{t_nb:>10.4f}{t_np:>10.4f}{t_np / t_nb:>9.1f}x")


def bench_end_to_end(its):
    times = {}
    for label, disable in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, PSFCAL_DISABLE_NUMBA=disable)
        out = subprocess.run([sys.executable, "-c", E2E.format(its=its)], env=env, check=True,
                             capture_output=True, text=True)
        times[label] = float(out.stdout.strip().splitlines()[-1])
    print(f"\ncalibrate_patch, 64x64 patch, side 15, {its} warm-up + 3 x {its} iterations")
    for label, t in times.items():
        print(f"  {label:<6} {t:7.2f} s")
    print(f"  speed-up {times['numpy'] / times['numba']:.1f}x")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--iterations", type=int, default=100, help="end-to-end budget per stage")
    ap.add_argument("--no-end-to-end", action="store_true")
    args = ap.parse_args(argv)
    if not HAS_NUMBA:
        sys.exit("numba is not installed; nothing to compare")
    bench_kernels(args.repeat)
    if not args.no_end_to_end:
        bench_end_to_end(args.iterations)


if __name__ == "__main__":
    main()
