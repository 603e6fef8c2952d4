"""Hot per-pixel loops, each in a numba and a pure-numpy flavour.

The public names at the bottom resolve to the numba versions unless
``PSFCAL_DISABLE_NUMBA`` is set.  Both flavours take 2D float64 arrays and
agree to rounding; ``benchmarks/bench_kernels.py`` times them side by side.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import USE_NUMBA, njit


# ---------------------------------------------------------------- warping

@njit(cache=True)
def _warp_nb(img, dx, dy):
    h, w = img.shape
    out = np.empty((h, w))
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            sx = x + dx[y, x]
            sy = y + dy[y, x]
            # clamped samples sit on the border: zero derivative there
            inx = True
            iny = True
            if sx <= 0.0:
                sx = 0.0
                inx = False
            elif sx >= w - 1:
                sx = w - 1.0
                inx = False
            if sy <= 0.0:
                sy = 0.0
                iny = False
            elif sy >= h - 1:
                sy = h - 1.0
                iny = False
            x0 = int(np.floor(sx))
            y0 = int(np.floor(sy))
            if x0 > w - 2:
                x0 = max(w - 2, 0)
            if y0 > h - 2:
                y0 = max(h - 2, 0)
            x1 = min(x0 + 1, w - 1)
            y1 = min(y0 + 1, h - 1)
            fx = sx - x0
            fy = sy - y0
            a = img[y0, x0]
            b = img[y0, x1]
            c = img[y1, x0]
            d = img[y1, x1]
            top = (1.0 - fx) * a + fx * b
            bot = (1.0 - fx) * c + fx * d
            out[y, x] = (1.0 - fy) * top + fy * bot
            if inx:
                gx[y, x] = (1.0 - fy) * (b - a) + fy * (d - c)
            if iny:
                gy[y, x] = bot - top
    return out, gx, gy


def _warp_np(img, dx, dy):
    h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    sx_raw = xx + dx
    sy_raw = yy + dy
    sx = np.clip(sx_raw, 0.0, w - 1.0)
    sy = np.clip(sy_raw, 0.0, h - 1.0)
    inx = (sx_raw > 0.0) & (sx_raw < w - 1.0)
    iny = (sy_raw > 0.0) & (sy_raw < h - 1.0)
    x0 = np.minimum(np.floor(sx).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(sy).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    a = img[y0, x0]
    b = img[y0, x1]
    c = img[y1, x0]
    d = img[y1, x1]
    top = (1.0 - fx) * a + fx * b
    bot = (1.0 - fx) * c + fx * d
    out = (1.0 - fy) * top + fy * bot
    gx = np.where(inx, (1.0 - fy) * (b - a) + fy * (d - c), 0.0)
    gy = np.where(iny, bot - top, 0.0)
    return out, gx, gy


# ------------------------------------------------------------- morphology

@njit(cache=True)
def _minmax_1d_rows(img, radius, take_max):
    h, w = img.shape
    out = np.empty((h, w))
    for y in range(h):
        for x in range(w):
            lo = max(x - radius, 0)
            hi = min(x + radius, w - 1)
            v = img[y, lo]
            for j in range(lo + 1, hi + 1):
                u = img[y, j]
                if take_max:
                    if u > v:
                        v = u
                elif u < v:
                    v = u
            out[y, x] = v
    return out


def _minmax_nb(img, radius, take_max):
    # separable square window; clamping the window equals edge replication
    rows = _minmax_1d_rows(img, radius, take_max)
    return np.ascontiguousarray(_minmax_1d_rows(np.ascontiguousarray(rows.T), radius, take_max).T)


def _minmax_np(img, radius, take_max):
    side = 2 * radius + 1
    padded = np.pad(img, radius, mode="edge")
    win = sliding_window_view(padded, (side, side))
    return win.max(axis=(-2, -1)) if take_max else win.min(axis=(-2, -1))


# ----------------------------------------------------------- convolution

@njit(cache=True)
def _conv_nb(padded, k):
    s = k.shape[0]
    h = padded.shape[0] - s + 1
    w = padded.shape[1] - s + 1
    out = np.zeros((h, w))
    for a in range(s):
        for b in range(s):
            kv = k[s - 1 - a, s - 1 - b]
            if kv == 0.0:
                continue
            for y in range(h):
                for x in range(w):
                    out[y, x] += kv * padded[y + a, x + b]
    return out


def _conv_np(padded, k):
    s = k.shape[0]
    h = padded.shape[0] - s + 1
    w = padded.shape[1] - s + 1
    out = np.zeros((h, w))
    for a in range(s):
        for b in range(s):
            kv = k[s - 1 - a, s - 1 - b]
            if kv != 0.0:
                out += kv * padded[a:a + h, b:b + w]
    return out


# ------------------------------------------------------------ 3x3 filter

@njit(cache=True)
def _conv3_nb(x, k):
    h, w = x.shape
    out = np.zeros((h, w))
    for y in range(h):
        for xx in range(w):
            acc = 0.0
            for i in range(3):
                yy = y + i - 1
                if yy < 0 or yy >= h:
                    continue
                for j in range(3):
                    xj = xx + j - 1
                    if xj < 0 or xj >= w:
                        continue
                    acc += k[i, j] * x[yy, xj]
            out[y, xx] = acc
    return out


def _conv3_np(x, k):
    p = np.pad(x, 1)
    h, w = x.shape
    out = np.zeros_like(x)
    for i in range(3):
        for j in range(3):
            if k[i, j] != 0.0:
                out += k[i, j] * p[i:i + h, j:j + w]
    return out


# ------------------------------------------------------------- L1 loss head

@njit(cache=True)
def _l1_head_nb(bh, b, wgrad):
    """Sums of |bh-b|, |dx bh - dx b|, |dy bh - dy b| and the subgradient w.r.t. bh."""
    h, w = bh.shape
    g = np.zeros((h, w))
    fid = 0.0
    gsum = 0.0
    for y in range(h):
        for x in range(w):
            r = bh[y, x] - b[y, x]
            fid += abs(r)
            if r > 0:
                g[y, x] += 1.0
            elif r < 0:
                g[y, x] -= 1.0
            if x + 1 < w:
                rx = (bh[y, x + 1] - bh[y, x]) - (b[y, x + 1] - b[y, x])
                gsum += abs(rx)
                s = wgrad if rx > 0 else (-wgrad if rx < 0 else 0.0)
                g[y, x + 1] += s
                g[y, x] -= s
            if y + 1 < h:
                ry = (bh[y + 1, x] - bh[y, x]) - (b[y + 1, x] - b[y, x])
                gsum += abs(ry)
                s = wgrad if ry > 0 else (-wgrad if ry < 0 else 0.0)
                g[y + 1, x] += s
                g[y, x] -= s
    return fid, gsum, g


def _l1_head_np(bh, b, wgrad):
    r = bh - b
    rx = np.diff(r, axis=1)
    ry = np.diff(r, axis=0)
    g = np.sign(r)
    sx = wgrad * np.sign(rx)
    sy = wgrad * np.sign(ry)
    g[:, 1:] += sx
    g[:, :-1] -= sx
    g[1:, :] += sy
    g[:-1, :] -= sy
    return float(np.abs(r).sum()), float(np.abs(rx).sum() + np.abs(ry).sum()), g


# ------------------------------------------------------- flow smoothness

@njit(cache=True)
def _smooth_nb(dx, dy):
    """Sum of squared forward differences of both planes and its gradient."""
    h, w = dx.shape
    gdx = np.zeros((h, w))
    gdy = np.zeros((h, w))
    total = 0.0
    for y in range(h):
        for x in range(w):
            if x + 1 < w:
                a = dx[y, x + 1] - dx[y, x]
                c = dy[y, x + 1] - dy[y, x]
                total += a * a + c * c
                gdx[y, x + 1] += 2 * a
                gdx[y, x] -= 2 * a
                gdy[y, x + 1] += 2 * c
                gdy[y, x] -= 2 * c
            if y + 1 < h:
                a = dx[y + 1, x] - dx[y, x]
                c = dy[y + 1, x] - dy[y, x]
                total += a * a + c * c
                gdx[y + 1, x] += 2 * a
                gdx[y, x] -= 2 * a
                gdy[y + 1, x] += 2 * c
                gdy[y, x] -= 2 * c
    return total, gdx, gdy


def _smooth_np(dx, dy):
    total = 0.0
    grads = []
    for p in (dx, dy):
        ex = np.diff(p, axis=1)
        ey = np.diff(p, axis=0)
        total += float((ex * ex).sum() + (ey * ey).sum())
        g = np.zeros_like(p)
        g[:, 1:] += 2 * ex
        g[:, :-1] -= 2 * ex
        g[1:, :] += 2 * ey
        g[:-1, :] -= 2 * ey
        grads.append(g)
    return total, grads[0], grads[1]


# ------------------------------------------------------- sine network activations

# minimax coefficients for sin / cos on [-pi/4, pi/4]
_SIN_C = (1.58962301576546568060e-10, -2.50507477628578072866e-8, 2.75573136213857245213e-6,
          -1.98412698295895385996e-4, 8.33333333332211858878e-3, -1.66666666666666307295e-1)
_COS_C = (-1.13585365213876817300e-11, 2.08757008419747316778e-9, -2.75573141792967388112e-7,
          2.48015872888517045348e-5, -1.38888888888730564116e-3, 4.16666666666665929218e-2)


@njit(cache=True)
def _sincos_nb(z):
    """sin and cos of every element, within 2 ulp of libm for |z| < 1e5.

    Quadrant reduction with a two-part pi/2 and a branch-free quadrant
    select, so the loop vectorises (libm sin is not vectorised here).
    """
    flat = z.ravel()
    s = np.empty(flat.size)
    c = np.empty(flat.size)
    s0, s1, s2, s3, s4, s5 = _SIN_C
    c0, c1, c2, c3, c4, c5 = _COS_C
    for i in range(flat.size):
        x = flat[i]
        k = np.floor(x * 0.63661977236758134308 + 0.5)
        r = (x - k * 1.57079632673412561417) - k * 6.07710050650619224932e-11
        zz = r * r
        ps = r + r * zz * (((((s0 * zz + s1) * zz + s2) * zz + s3) * zz + s4) * zz + s5)
        pc = 1.0 - 0.5 * zz + zz * zz * (((((c0 * zz + c1) * zz + c2) * zz + c3) * zz + c4) * zz + c5)
        q = np.int64(k)
        sw = np.float64(q & 1)
        sgn_s = 1.0 - 2.0 * np.float64((q >> 1) & 1)
        sgn_c = 1.0 - 2.0 * np.float64(((q + 1) >> 1) & 1)
        s[i] = sgn_s * (ps + sw * (pc - ps))
        c[i] = sgn_c * (pc + sw * (ps - pc))
    return s.reshape(z.shape), c.reshape(z.shape)


def _sincos_np(z):
    return np.sin(z), np.cos(z)


if USE_NUMBA:
    warp_with_grad = _warp_nb
    minmax_filter = _minmax_nb
    conv_valid = _conv_nb
    conv3 = _conv3_nb
    l1_head = _l1_head_nb
    smoothness = _smooth_nb
    sincos = _sincos_nb
else:
    warp_with_grad = _warp_np
    minmax_filter = _minmax_np
    conv_valid = _conv_np
    conv3 = _conv3_np
    l1_head = _l1_head_np
    smoothness = _smooth_np
    sincos = _sincos_np
