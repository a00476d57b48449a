"""Error metrics and integrated distances between conditional densities.

Density evaluators are callables ``f(x, ys) -> densities`` for a single
covariate point ``x`` (a :class:`~mixcde.model.MixtureTheta` is also
accepted and wrapped).
"""

import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from ._validation import as_1d
from .exceptions import InvalidParameterError, NumericalFailureError
from .model import MixtureTheta, eval_conditional_density

GRID_LEVELS = (0.1, 0.5, 0.9)
N_Y_GRID = 100
N_QUAD = 512


@dataclass
class EvalGrid:
    """y-grid by covariate points on which estimates are compared."""

    ys: np.ndarray
    xs: np.ndarray

    def __post_init__(self):
        self.ys = as_1d(self.ys, "ys")
        self.xs = np.atleast_2d(np.asarray(self.xs, dtype=float))
        if len(self.ys) < 2 or np.any(np.diff(self.ys) <= 0):
            raise InvalidParameterError("ys must be strictly increasing with at least two points")
        if self.xs.shape[0] == 0:
            raise InvalidParameterError("xs must be nonempty")

    @classmethod
    def for_sample(cls, y, d_x, n_y=N_Y_GRID, levels=GRID_LEVELS):
        """Equally spaced grid over the range of ``y`` crossed with ``levels**d_x``."""
        y = np.asarray(y, dtype=float)
        ys = np.linspace(y.min(), y.max(), n_y)
        xs = np.array(list(itertools.product(levels, repeat=d_x)), dtype=float)
        return cls(ys, xs)


def _as_evaluator(f):
    if isinstance(f, MixtureTheta):
        return lambda x, ys: eval_conditional_density(f, x, ys)
    return f


def _grid_values(f, grid):
    f = _as_evaluator(f)
    return np.stack([np.asarray(f(x, grid.ys), dtype=float) for x in grid.xs])


def mae(estimate, truth, grid):
    """Mean absolute difference over every (y, x) pair of ``grid``.

    Either argument may be a precomputed (n_x, n_y) array of values.
    """
    a = estimate if isinstance(estimate, np.ndarray) else _grid_values(estimate, grid)
    b = truth if isinstance(truth, np.ndarray) else _grid_values(truth, grid)
    return float(np.mean(np.abs(a - b)))


@functools.lru_cache(maxsize=16)
def _legendre_rule(n):
    return leggauss(n)


def gauss_legendre(lo, hi, n=N_QUAD):
    nodes, weights = _legendre_rule(int(n))
    half = 0.5 * (hi - lo)
    return lo + half * (nodes + 1.0), half * weights


def mixture_envelope(thetas, xs, width=6.0):
    """Interval covering every component mean +- ``width`` scales at ``xs``."""
    lo, hi = math.inf, -math.inf
    xs = np.atleast_2d(xs)
    for t in thetas:
        means = t.beta[:, 0][None, :] + xs @ t.beta[:, 1:].T
        sc = t.sigma_y * t.s_y
        lo = min(lo, float(np.min(means - width * sc)))
        hi = max(hi, float(np.max(means + width * sc)))
    return lo, hi


def _covariates(g0, n_x, rng):
    if callable(g0):
        return np.atleast_2d(np.asarray(g0(rng, n_x), dtype=float)).reshape(n_x, -1)
    return np.atleast_2d(np.asarray(g0, dtype=float))


def _y_rule(f1, f2, xs, y_range, n_quad):
    if y_range is None:
        thetas = [f for f in (f1, f2) if isinstance(f, MixtureTheta)]
        if len(thetas) != 2:
            raise InvalidParameterError("y_range is required unless both densities are MixtureTheta")
        y_range = mixture_envelope(thetas, xs)
    return gauss_legendre(y_range[0], y_range[1], n_quad)


def _inner_integrals(f1, f2, xs, nodes, weights, kind):
    f1, f2 = _as_evaluator(f1), _as_evaluator(f2)
    out = np.empty(len(xs))
    for k, x in enumerate(xs):
        a = np.asarray(f1(x, nodes), dtype=float)
        b = np.asarray(f2(x, nodes), dtype=float)
        if np.min(a) < -1e-10 or np.min(b) < -1e-10:
            raise NumericalFailureError(f"negative density value at x={x}")
        a, b = np.maximum(a, 0.0), np.maximum(b, 0.0)
        if kind == "hellinger":
            v = float(weights @ (np.sqrt(a) - np.sqrt(b)) ** 2)
        else:
            v = float(weights @ np.abs(a - b))
        if v < -1e-10:
            raise NumericalFailureError(f"negative inner integral {v} at x={x}")
        out[k] = max(v, 0.0)
    return out


@dataclass
class DistanceEstimate:
    value: float
    se: float
    inner: np.ndarray


def hellinger_dh(f1, f2, g0, n_x=2000, y_range=None, n_quad=N_QUAD, rng=None, full=False):
    """Covariate-averaged Hellinger distance between conditional densities.

    ``g0`` is either a sampler ``g0(rng, size) -> (size, d_x)`` or an array of
    covariate draws. The inner y-integral uses Gauss–Legendre quadrature on
    ``y_range`` (by default the 6-scale envelope of two mixtures).
    """
    rng = np.random.default_rng(rng)
    xs = _covariates(g0, n_x, rng)
    nodes, weights = _y_rule(f1, f2, xs, y_range, n_quad)
    inner = _inner_integrals(f1, f2, xs, nodes, weights, "hellinger")
    sq = float(inner.mean())
    value = math.sqrt(sq)
    se_sq = float(inner.std(ddof=1) / math.sqrt(len(inner))) if len(inner) > 1 else 0.0
    se = se_sq / (2.0 * value) if value > 0 else 0.0
    return DistanceEstimate(value, se, inner) if full else value


def tv_d1(f1, f2, g0, n_x=2000, y_range=None, n_quad=N_QUAD, rng=None, full=False):
    """Covariate-averaged L1 distance between conditional densities, in [0, 2]."""
    rng = np.random.default_rng(rng)
    xs = _covariates(g0, n_x, rng)
    nodes, weights = _y_rule(f1, f2, xs, y_range, n_quad)
    inner = _inner_integrals(f1, f2, xs, nodes, weights, "l1")
    value = float(inner.mean())
    se = float(inner.std(ddof=1) / math.sqrt(len(inner))) if len(inner) > 1 else 0.0
    return DistanceEstimate(value, se, inner) if full else value


def joint_hellinger_dH(p1, p2, box, n_nodes=64):
    """Hellinger distance between joint densities on a box, by tensor Gauss–Legendre.

    ``p1`` and ``p2`` map an (N, dim) array of points to N density values;
    ``box`` lists one (lo, hi) pair per coordinate.
    """
    rules = [gauss_legendre(lo, hi, n_nodes) for lo, hi in box]
    nodes = np.array(list(itertools.product(*[r[0] for r in rules])))
    weights = np.prod(np.array(list(itertools.product(*[r[1] for r in rules]))), axis=1)
    a = np.asarray(p1(nodes), dtype=float)
    b = np.asarray(p2(nodes), dtype=float)
    if np.min(a) < -1e-10 or np.min(b) < -1e-10:
        raise NumericalFailureError("negative joint density value")
    v = float(weights @ (np.sqrt(np.maximum(a, 0)) - np.sqrt(np.maximum(b, 0))) ** 2)
    if v < -1e-10:
        raise NumericalFailureError(f"negative Hellinger integral {v}")
    return math.sqrt(max(v, 0.0))
