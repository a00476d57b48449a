"""Kernel conditional density estimator with least-squares cross-validated bandwidths.

Gaussian product kernels are used throughout, so the integrated squared
estimate in the cross-validation criterion has a closed form: the convolution
of two N(0, h**2) kernels is N(0, 2 h**2).
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import minimize

from ._kernels import gauss_rows
from ._validation import as_1d, as_points
from .exceptions import BandwidthSelectionError, InvalidParameterError, OutOfSupportWarning

SQRT_2PI = math.sqrt(2.0 * math.pi)
EXACT_MAX_N = 1200
N_BINS = 512
N_EVAL = 2000


@dataclass
class Bandwidths:
    h_y: float
    h_x: np.ndarray
    score: float = math.nan
    starts: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.h_y = float(self.h_y)
        self.h_x = np.atleast_1d(np.asarray(self.h_x, dtype=float))
        if not (self.h_y > 0 and math.isfinite(self.h_y)) or np.any(~(self.h_x > 0)) \
                or not np.all(np.isfinite(self.h_x)):
            raise InvalidParameterError(f"bandwidths must be positive and finite: {self.h_y}, {self.h_x}")

    def to_dict(self):
        return {"h_y": self.h_y, "h_x": self.h_x.tolist(), "cv_score": self.score}


def _x_weights(data, h_x, xs):
    """Unnormalized covariate kernel weights, shape (len(xs), n)."""
    return gauss_rows(np.ascontiguousarray(data.x), np.ascontiguousarray(xs), np.asarray(h_x, dtype=float))


def kernel_cond_density(data, bw, x, ys):
    """Estimate f(y | x) at each ``y`` in ``ys``.

    Returns zeros with an :class:`OutOfSupportWarning` when every covariate
    kernel weight underflows at ``x``.
    """
    if data.n < 1:
        raise InvalidParameterError("the kernel estimator needs at least one observation")
    if bw.h_x.shape[0] != data.d_x:
        raise InvalidParameterError(f"h_x has {bw.h_x.shape[0]} entries, data has d_x={data.d_x}")
    xs = as_points(x, data.d_x)
    ys = as_1d(ys, "ys")
    w = _x_weights(data, bw.h_x, xs)[0]
    tot = w.sum()
    if tot == 0.0:
        warnings.warn(f"no data carry kernel weight at x={xs[0]}; returning zero density",
                      OutOfSupportWarning, stacklevel=2)
        return np.zeros_like(ys)
    r = (ys[:, None] - data.y[None, :]) / bw.h_y
    return (np.exp(-0.5 * r * r) @ (w / tot)) / (SQRT_2PI * bw.h_y)


def kernel_cond_density_grid(data, bw, xs, ys):
    """Densities for several covariate points at once, shape (len(xs), len(ys))."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OutOfSupportWarning)
        return np.stack([kernel_cond_density(data, bw, x, ys) for x in np.atleast_2d(xs)])


def _loo_weights(data, h_x, rows):
    """Leave-one-out covariate weights for evaluation points ``rows``, rows summing to 1."""
    x = np.ascontiguousarray(data.x)
    d2 = np.zeros((len(rows), data.n))
    for k in range(data.d_x):
        diff = (x[rows, k][:, None] - x[None, :, k]) / h_x[k]
        d2 += diff * diff
    logw = -0.5 * d2
    logw[np.arange(len(rows)), rows] = -np.inf
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)
    return w


def _lscv_exact(data, h_y, h_x):
    y = data.y
    n = data.n
    dy = y[:, None] - y[None, :]
    K2 = np.exp(-0.25 * (dy / h_y) ** 2) / (2.0 * math.sqrt(math.pi) * h_y)
    K1 = np.exp(-0.5 * (dy / h_y) ** 2) / (SQRT_2PI * h_y)
    total = 0.0
    chunk = 512
    for start in range(0, n, chunk):
        rows = np.arange(start, min(n, start + chunk))
        W = _loo_weights(data, h_x, rows)
        total += float(np.sum((W @ K2) * W)) - 2.0 * float(np.sum(W * K1[rows]))
    return total / n


def _linear_binning(y, grid):
    delta = grid[1] - grid[0]
    pos = (y - grid[0]) / delta
    lo = np.clip(np.floor(pos).astype(int), 0, len(grid) - 2)
    frac = pos - lo
    n = len(y)
    rows = np.repeat(np.arange(n), 2)
    cols = np.stack([lo, lo + 1], axis=1).ravel()
    vals = np.stack([1.0 - frac, frac], axis=1).ravel()
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, len(grid)))


def _lscv_binned(data, h_y, h_x, eval_rows, n_bins=N_BINS):
    y = data.y
    grid = np.linspace(y.min(), y.max(), n_bins)
    S = _linear_binning(y, grid)
    dg = grid[:, None] - grid[None, :]
    K2 = np.exp(-0.25 * (dg / h_y) ** 2) / (2.0 * math.sqrt(math.pi) * h_y)
    total = 0.0
    chunk = 512
    for start in range(0, len(eval_rows), chunk):
        rows = eval_rows[start:start + chunk]
        W = _loo_weights(data, h_x, rows)
        WS = np.asarray((S.T @ W.T).T)
        K1 = np.exp(-0.5 * ((y[rows][:, None] - grid[None, :]) / h_y) ** 2) / (SQRT_2PI * h_y)
        total += float(np.sum((WS @ K2) * WS)) - 2.0 * float(np.sum(WS * K1))
    return total / len(eval_rows)


def lscv_objective(data, bw, method="auto", eval_rows=None):
    """Least-squares leave-one-out cross-validation criterion.

    Averages ``int f_{-i}(y | x_i)**2 dy - 2 f_{-i}(y_i | x_i)`` over the
    sample. ``method="binned"`` linearly bins y on a 512-point grid and
    averages over ``eval_rows`` only; ``"auto"`` picks it above 1200
    observations.
    """
    if data.n < 2:
        raise InvalidParameterError("cross-validation needs at least 2 observations")
    h_x = np.atleast_1d(np.asarray(bw.h_x, dtype=float))
    if not bw.h_y > 0 or np.any(h_x <= 0):
        raise InvalidParameterError("bandwidths must be positive")
    if method == "auto":
        method = "exact" if data.n <= EXACT_MAX_N else "binned"
    if method == "exact":
        return _lscv_exact(data, bw.h_y, h_x)
    if method == "binned":
        rows = np.arange(data.n) if eval_rows is None else np.asarray(eval_rows)
        return _lscv_binned(data, bw.h_y, h_x, rows)
    raise InvalidParameterError(f"unknown method {method!r}")


def reference_bandwidths(data):
    """Normal-reference starting bandwidths, 1.06 sd n**(-1/(4 + d))."""
    d = data.d_x + 1
    factor = 1.06 * data.n ** (-1.0 / (4.0 + d))
    sd = np.std(np.column_stack([data.y, data.x]), axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return factor * sd[0], factor * sd[1:]


def select_bandwidths(data, restarts=3, seed=0, method="auto"):
    """Minimize the LSCV criterion over log bandwidths with multi-start Nelder–Mead.

    Starts are the normal-reference bandwidths scaled by a lattice of factors
    {1/2, 1, 2} per coordinate; the first start is the unscaled reference and
    the rest are drawn from the lattice by ``seed``.
    """
    if data.n < 10:
        raise InvalidParameterError("bandwidth selection needs at least 10 observations")
    rng = np.random.default_rng(seed)
    hy0, hx0 = reference_bandwidths(data)
    ref = np.log(np.concatenate([[hy0], hx0]))
    sd = np.std(np.column_stack([data.y, data.x]), axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    lower, upper = np.log(1e-3 * sd), np.log(1e3 * sd)
    if method == "auto":
        method = "exact" if data.n <= EXACT_MAX_N else "binned"
    eval_rows = None
    if method == "binned" and data.n > N_EVAL:
        eval_rows = np.sort(rng.choice(data.n, size=N_EVAL, replace=False))

    def objective(logh):
        logh = np.clip(logh, lower, upper)
        h = np.exp(logh)
        val = lscv_objective(data, Bandwidths(h[0], h[1:]), method=method, eval_rows=eval_rows)
        return val if math.isfinite(val) else 1e300

    dim = ref.shape[0]
    lattice = np.array(np.meshgrid(*[[-1, 0, 1]] * dim, indexing="ij")).reshape(dim, -1).T
    lattice = lattice[np.any(lattice != 0, axis=1)]
    picks = rng.permutation(len(lattice))[: max(0, restarts - 1)]
    starts = [ref] + [ref + math.log(2.0) * lattice[k] for k in picks]

    results = []
    for x0 in starts:
        res = minimize(objective, x0, method="Nelder-Mead", bounds=list(zip(lower, upper)),
                       options={"xatol": 1e-3, "fatol": 1e-7, "maxiter": 400 * dim})
        results.append((float(res.fun), np.clip(res.x, lower, upper)))
    finite = [r for r in results if math.isfinite(r[0]) and r[0] < 1e300]
    best = min(results, key=lambda r: r[0])
    if not finite:
        h = np.exp(best[1])
        raise BandwidthSelectionError("every start failed", Bandwidths(h[0], h[1:]), best[0])
    h = np.exp(best[1])
    return Bandwidths(h[0], h[1:], score=best[0], starts=[np.exp(s).tolist() for s in starts])
