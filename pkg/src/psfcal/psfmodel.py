"""Kernel parameterisations that always yield a valid PSF, plus the linear ESF baseline.

Both parameterisations map unconstrained reals to logits and pass them
through a softmax over the kernel support, so every realised kernel is
nonnegative and sums to one by construction.
"""
import numpy as np
import scipy.linalg
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels
from .errors import InvalidInput, SingularSystem
from .imagecore import _require_gray, dilate, gradient_xy


def softmax_kernel(logits):
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_backward(k, dk):
    """Gradient w.r.t. the logits given the gradient ``dk`` w.r.t. the kernel."""
    return k * (dk - np.sum(k * dk))


class LogitGrid:
    """One free logit per kernel cell."""

    def __init__(self, side, logits=None):
        if side % 2 == 0 or side < 1:
            raise InvalidInput("kernel side must be odd")
        self.side = side
        self.logits = np.zeros((side, side)) if logits is None else np.array(logits, dtype=np.float64)
        if self.logits.shape != (side, side) or not np.all(np.isfinite(self.logits)):
            raise InvalidInput("logits must be a finite side x side array")

    @property
    def params(self):
        return [self.logits]

    def kernel(self):
        self._k = softmax_kernel(self.logits)
        return self._k

    def backward(self, dk):
        """Gradients for :attr:`params` (call after :meth:`kernel`)."""
        return [softmax_backward(self._k, dk)]


def kernel_from_logits(g):
    return softmax_kernel(g.logits if isinstance(g, LogitGrid) else g)


def kernel_coords(side):
    """Cell-centre coordinates of the kernel support, normalised to [-1, 1]^2, row-major (x, y)."""
    ax = np.linspace(-1.0, 1.0, side) if side > 1 else np.zeros(1)
    gx, gy = np.meshgrid(ax, ax)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


class CoordMlp:
    """Sinusoidal coordinate network: (x, y) in [-1, 1]^2 -> logit.

    Hidden layers use ``sin(omega0 * (W h + b))`` with the usual
    first-layer / hidden-layer uniform initialisation for sine networks.
    The output layer starts at zero so the initial kernel is uniform.
    """

    def __init__(self, side, widths=(2, 64, 64, 1), omega0=30.0, seed=0):
        if side % 2 == 0 or side < 1:
            raise InvalidInput("kernel side must be odd")
        if widths[0] != 2 or widths[-1] != 1:
            raise InvalidInput("network must map 2 inputs to 1 output")
        self.side = side
        self.omega0 = float(omega0)
        self.coords = kernel_coords(side)
        rng = np.random.default_rng(seed)
        self.weights, self.biases = [], []
        n_layers = len(widths) - 1
        for li, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
            if li == n_layers - 1:
                w = np.zeros((n_out, n_in))
                b = np.zeros(n_out)
            else:
                bound = 1.0 / n_in if li == 0 else np.sqrt(6.0 / n_in) / self.omega0
                w = rng.uniform(-bound, bound, size=(n_out, n_in))
                b = rng.uniform(-1.0 / np.sqrt(n_in), 1.0 / np.sqrt(n_in), size=n_out)
            self.weights.append(w)
            self.biases.append(b)

    @property
    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def logits(self):
        h = self.coords
        self._acts = [h]
        self._cos = []
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h, c = _kernels.sincos(self.omega0 * (h @ w.T + b))
            self._cos.append(c)
            self._acts.append(h)
        out = h @ self.weights[-1].T + self.biases[-1]
        return out[:, 0].reshape(self.side, self.side)

    def kernel(self):
        self._k = softmax_kernel(self.logits())
        return self._k

    def backward(self, dk):
        g = softmax_backward(self._k, dk).reshape(-1, 1)
        grads = []
        gw = g.T @ self._acts[-1]
        gb = g.sum(axis=0)
        grads.append((gw, gb))
        g = g @ self.weights[-1]
        for li in range(len(self.weights) - 2, -1, -1):
            g = g * self._cos[li] * self.omega0
            grads.append((g.T @ self._acts[li], g.sum(axis=0)))
            g = g @ self.weights[li]
        out = []
        for gw, gb in reversed(grads):
            out.extend([gw, gb])
        return out


def mlp_kernel(m):
    return m.kernel()


# ------------------------------------------------------------------ linear ESF baseline


def project_simplex(v):
    """Euclidean projection of a vector onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=np.float64).ravel()
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def boundary_rows(i_sharp, side):
    """Pixels within ``side`` (Chebyshev) of a pixel where the sharp image has a gradient."""
    gx, gy = gradient_xy(i_sharp)
    edge = (np.abs(gx) > 1e-12) | (np.abs(gy) > 1e-12)
    if not edge.any():
        return edge
    return dilate(edge.astype(np.float64), side) > 0.5


def convolution_operator(i_sharp, side, rows_mask=None):
    """Matrix A with ``A @ k.ravel() == conv2d(i_sharp, k)[rows_mask]``."""
    i_sharp = _require_gray(i_sharp, "convolution_operator")
    if side % 2 == 0:
        raise InvalidInput("kernel side must be odd")
    r = side // 2
    padded = np.pad(i_sharp, r, mode="edge")
    win = sliding_window_view(padded, (side, side))[:, :, ::-1, ::-1]
    if rows_mask is None:
        rows_mask = np.ones(i_sharp.shape, dtype=bool)
    return win[rows_mask].reshape(-1, side * side)


def esf_linear_solve(i_sharp, b, side, ridge=1e-6):
    """Closed-form kernel from an aligned sharp/blurred pair.

    Least squares over boundary-adjacent pixels via the normal equations,
    with a ridge of ``ridge * mean(diag(A^T A))``, then projected onto the
    simplex so the result is a valid PSF.
    """
    i_sharp = _require_gray(i_sharp, "esf_linear_solve")
    b = _require_gray(b, "esf_linear_solve")
    if i_sharp.shape != b.shape:
        raise InvalidInput("sharp and blurred images must have equal shape")
    rows = boundary_rows(i_sharp, side)
    if not rows.any():
        raise SingularSystem("sharp image has no edges; every operator column is identical")
    a = convolution_operator(i_sharp, side, rows)
    rhs = b[rows]
    gram = a.T @ a
    n = gram.shape[0]
    if ridge == 0 and np.linalg.matrix_rank(a) < n:
        raise SingularSystem("operator is column-rank deficient and no ridge was given")
    lam = ridge * np.trace(gram) / n
    try:
        sol = scipy.linalg.cho_solve(scipy.linalg.cho_factor(gram + lam * np.eye(n)), a.T @ rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    return project_simplex(sol).reshape(side, side)


def column_rank_diagnostic(i_sharp, side, rel_tol=1e-6):
    """Condition number and effective rank of the boundary-restricted operator.

    Falls back to all pixels when the image has no edges (a constant image
    gives rank 1).
    """
    i_sharp = _require_gray(i_sharp, "column_rank_diagnostic")
    rows = boundary_rows(i_sharp, side)
    if not rows.any():
        rows = None
    a = convolution_operator(i_sharp, side, rows)
    # R from QR has the singular values of A at side^2 x side^2 cost
    r_factor = np.linalg.qr(a, mode="r")
    sv = np.linalg.svd(r_factor, compute_uv=False)
    smax = sv[0]
    rank = int(np.sum(sv > rel_tol * smax)) if smax > 0 else 0
    cond = float(smax / sv[-1]) if sv[-1] > 0 else float("inf")
    return cond, rank
