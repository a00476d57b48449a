"""Mixture-of-normals conditional density model with Gaussian-kernel gating.

The conditional density is

    p(y | x) = sum_j g_j(x) N(y; [1, x] @ beta_j, (sigma_y * s_y[j])**2)

where the gate weights are

    g_j(x) ∝ w_j exp(-0.5 * sum_k (x_k - mu_x[j, k])**2 / (sigma_x[k] * s_x[j, k])**2).

The "basic" location mixture is the special case with zero slopes, unit local
scales and a common scale shared by the response and every covariate.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ._validation import as_1d, as_finite_array, as_points, check_probability_levels
from .exceptions import DimensionError, InvalidParameterError, NonFiniteInputError

LOG_2PI = math.log(2.0 * math.pi)


def _frozen(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class MixtureTheta:
    """Parameters of an ``m``-component mixture.

    Parameters
    ----------
    weights : array of shape (m,)
        Mixing probabilities.
    beta : array of shape (m, d_x + 1)
        Regression coefficients of each component mean; column 0 is the
        intercept.
    mu_x : array of shape (m, d_x)
        Gate locations.
    s_y : array of shape (m,)
        Local response scales.
    s_x : array of shape (m, d_x)
        Local gate scales.
    sigma_y : float
        Global response scale.
    sigma_x : array of shape (d_x,)
        Global gate scales, one per covariate.
    """

    weights: np.ndarray
    beta: np.ndarray
    mu_x: np.ndarray
    s_y: np.ndarray
    s_x: np.ndarray
    sigma_y: float
    sigma_x: np.ndarray

    def __post_init__(self):
        w = _frozen(np.atleast_1d(self.weights))
        m = w.shape[0]
        beta = _frozen(np.reshape(self.beta, (m, -1)) if np.size(self.beta) else np.zeros((m, 1)))
        d_x = beta.shape[1] - 1
        mu_x = _frozen(np.reshape(self.mu_x, (m, d_x)))
        s_y = _frozen(np.reshape(self.s_y, (m,)))
        s_x = _frozen(np.reshape(self.s_x, (m, d_x)))
        sigma_x = _frozen(np.reshape(self.sigma_x, (d_x,)))
        for name, val in (("weights", w), ("beta", beta), ("mu_x", mu_x), ("s_y", s_y),
                          ("s_x", s_x), ("sigma_x", sigma_x)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "sigma_y", float(self.sigma_y))
        self.validate()

    @property
    def m(self):
        return self.weights.shape[0]

    @property
    def d_x(self):
        return self.beta.shape[1] - 1

    def validate(self):
        if self.m < 1:
            raise InvalidParameterError("a mixture needs at least one component")
        if self.d_x < 1:
            raise DimensionError("beta must have d_x + 1 >= 2 columns")
        arrays = (self.weights, self.beta, self.mu_x, self.s_y, self.s_x, self.sigma_x)
        if not all(np.all(np.isfinite(a)) for a in arrays) or not math.isfinite(self.sigma_y):
            raise NonFiniteInputError("mixture parameters must be finite")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise InvalidParameterError(f"weights must be a probability vector, got {self.weights}")
        if (np.any(self.s_y <= 0) or np.any(self.s_x <= 0) or self.sigma_y <= 0
                or np.any(self.sigma_x <= 0)):
            raise InvalidParameterError("all scale parameters must be strictly positive")

    @classmethod
    def basic(cls, weights, mu_y, mu_x, sigma):
        """Location mixture with zero slopes, unit local scales and one scale.

        ``sigma`` may also be a vector ``(sigma_y, sigma_x1, ..., sigma_xd)``
        for per-coordinate global scales.
        """
        weights = np.atleast_1d(np.asarray(weights, dtype=float))
        m = weights.shape[0]
        mu_x = np.asarray(mu_x, dtype=float).reshape(m, -1)
        d_x = mu_x.shape[1]
        beta = np.zeros((m, d_x + 1))
        beta[:, 0] = np.reshape(mu_y, (m,))
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        if sigma.size == 1:
            sigma_y, sigma_x = sigma[0], np.full(d_x, sigma[0])
        elif sigma.size == d_x + 1:
            sigma_y, sigma_x = sigma[0], sigma[1:]
        else:
            raise DimensionError(f"sigma must have 1 or {d_x + 1} entries")
        return cls(weights, beta, mu_x, np.ones(m), np.ones((m, d_x)), sigma_y, sigma_x)

    @property
    def is_basic(self):
        return (np.all(self.beta[:, 1:] == 0.0) and np.all(self.s_y == 1.0)
                and np.all(self.s_x == 1.0))

    def permuted(self, order):
        order = np.asarray(order)
        return MixtureTheta(self.weights[order], self.beta[order], self.mu_x[order],
                            self.s_y[order], self.s_x[order], self.sigma_y, self.sigma_x)

    def to_dict(self):
        return {
            "m": self.m,
            "weights": self.weights.tolist(),
            "components": [
                {"beta": self.beta[j].tolist(), "mu_x": self.mu_x[j].tolist(),
                 "s_y": float(self.s_y[j]), "s_x": self.s_x[j].tolist()}
                for j in range(self.m)
            ],
            "sigma_y": self.sigma_y,
            "sigma_x": self.sigma_x.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        comps = d["components"]
        if len(comps) != d["m"] or len(d["weights"]) != d["m"]:
            raise InvalidParameterError("component count disagrees with m")
        return cls(
            weights=d["weights"],
            beta=[c["beta"] for c in comps],
            mu_x=[c["mu_x"] for c in comps],
            s_y=[c["s_y"] for c in comps],
            s_x=[c["s_x"] for c in comps],
            sigma_y=d["sigma_y"],
            sigma_x=d["sigma_x"],
        )

    def equals(self, other):
        return (self.m == other.m and self.sigma_y == other.sigma_y
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("weights", "beta", "mu_x", "s_y", "s_x", "sigma_x")))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Paired sample ``(y_i, x_i)``; ``x`` has shape (n, d_x)."""

    y: np.ndarray
    x: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        y = as_finite_array(np.ravel(self.y), "y", ndim=1)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        x = as_finite_array(x, "x", ndim=2)
        if x.shape[0] != y.shape[0]:
            raise DimensionError(f"y has {y.shape[0]} rows but x has {x.shape[0]}")
        if x.shape[1] < 1:
            raise DimensionError("x needs at least one covariate column")
        y.flags.writeable = False
        x.flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    @classmethod
    def empty(cls, d_x, meta=None):
        return cls(np.zeros(0), np.zeros((0, d_x)), meta or {})

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def d_x(self):
        return self.x.shape[1]

    @property
    def design(self):
        return np.column_stack([np.ones(self.n), self.x])


def log_gate_weights(theta, xs):
    """Normalized log gate weights, shape (k, m), for points ``xs`` (k, d_x)."""
    z = (xs[:, None, :] - theta.mu_x[None, :, :]) / (theta.sigma_x[None, None, :] * theta.s_x[None])
    with np.errstate(divide="ignore"):
        a = np.log(theta.weights)[None, :] - 0.5 * np.sum(z * z, axis=-1)
    return a - logsumexp(a, axis=1, keepdims=True)


def _component_means(theta, xs):
    return theta.beta[:, 0][None, :] + xs @ theta.beta[:, 1:].T


def log_conditional_density_grid(theta, xs, ys):
    """log p(y | x) for every pair, shape (len(xs), len(ys))."""
    lg = log_gate_weights(theta, xs)
    means = _component_means(theta, xs)
    scale = theta.sigma_y * theta.s_y
    r = (ys[None, None, :] - means[:, :, None]) / scale[None, :, None]
    with np.errstate(over="ignore"):
        lphi = -0.5 * r * r - np.log(scale)[None, :, None] - 0.5 * LOG_2PI
    return logsumexp(lg[:, :, None] + lphi, axis=1)


def eval_conditional_density(theta, x, ys):
    """Conditional density p(y | x) at each ``y`` in ``ys`` for one point ``x``."""
    xs = as_points(x, theta.d_x)
    if xs.shape[0] != 1:
        raise DimensionError("eval_conditional_density takes a single covariate point")
    ys = as_1d(ys, "ys")
    return np.exp(log_conditional_density_grid(theta, xs, ys)[0])


def log_likelihood_terms(theta, data):
    """Per-observation log p(y_i | x_i)."""
    if data.d_x != theta.d_x:
        raise DimensionError(f"dataset has d_x={data.d_x}, theta has d_x={theta.d_x}")
    if data.n == 0:
        return np.zeros(0)
    lg = log_gate_weights(theta, data.x)
    means = _component_means(theta, data.x)
    scale = theta.sigma_y * theta.s_y
    r = (data.y[:, None] - means) / scale[None, :]
    with np.errstate(over="ignore"):
        lphi = -0.5 * r * r - np.log(scale)[None, :] - 0.5 * LOG_2PI
    return logsumexp(lg + lphi, axis=1)


def eval_log_likelihood(theta, data):
    """Sum of log conditional densities over the sample.

    Returns ``-inf`` when some observation has zero density. Non-finite data
    are rejected when the :class:`Dataset` is built.
    """
    terms = log_likelihood_terms(theta, data)
    if np.any(terms == -np.inf):
        return -math.inf
    return float(np.sum(terms))


def _log_joint(theta, ys, xs):
    if not theta.is_basic:
        raise InvalidParameterError("the joint density requires basic-form parameters "
                                    "(zero slopes, unit local scales)")
    ry = (ys[:, None] - theta.beta[None, :, 0]) / theta.sigma_y
    rx = (xs[:, None, :] - theta.mu_x[None]) / theta.sigma_x[None, None, :]
    d = 1 + theta.d_x
    lnorm = -0.5 * d * LOG_2PI - math.log(theta.sigma_y) - np.sum(np.log(theta.sigma_x))
    with np.errstate(divide="ignore"):
        lw = np.log(theta.weights)
    a = lw[None, :] + lnorm - 0.5 * ry * ry - 0.5 * np.sum(rx * rx, axis=-1)
    return logsumexp(a, axis=1)


def eval_joint_density(theta, y, x):
    """Joint density sum_j w_j N((y, x); (mu_y_j, mu_x_j), diag(sigma^2))."""
    xs = as_points(x, theta.d_x)
    ys = as_1d(y, "y")
    if xs.shape[0] != ys.shape[0]:
        raise DimensionError("y and x must describe the same number of points")
    out = np.exp(_log_joint(theta, ys, xs))
    return float(out[0]) if out.shape[0] == 1 and np.ndim(y) == 0 else out


@dataclass
class PredictiveSummary:
    """Pointwise posterior predictive summary on a y-grid."""

    ys: np.ndarray
    mean: np.ndarray
    quantiles: dict


def _draws_of(chain):
    draws = getattr(chain, "draws", chain)
    draws = list(draws)
    if not draws:
        raise InvalidParameterError("posterior predictive needs at least one draw")
    return draws


def predictive_density_matrix(draws, xs, ys):
    """Density of every draw at every (x, y): shape (n_draws, len(xs), len(ys))."""
    return np.exp(np.stack([log_conditional_density_grid(t, xs, ys) for t in draws]))


def posterior_predictive(chain, x, ys, quantiles=(0.00005, 0.99995)):
    """Draw-averaged conditional density with pointwise quantile bands.

    ``chain`` is a :class:`~mixcde.mcmc.Chain` or any sequence of
    :class:`MixtureTheta`.
    """
    draws = _draws_of(chain)
    qs = check_probability_levels(np.atleast_1d(quantiles))
    xs = as_points(x, draws[0].d_x)
    if xs.shape[0] != 1:
        raise DimensionError("posterior_predictive takes a single covariate point")
    ys = as_1d(ys, "ys")
    dens = predictive_density_matrix(draws, xs, ys)[:, 0, :]
    bands = np.quantile(dens, qs, axis=0)
    return PredictiveSummary(ys, dens.mean(axis=0), {float(q): b for q, b in zip(qs, bands)})


def posterior_mean_density(draws, xs, ys):
    """Draw-averaged conditional density on a grid, shape (len(xs), len(ys))."""
    draws = _draws_of(draws)
    acc = np.zeros((len(xs), len(ys)))
    for t in draws:
        acc += np.exp(log_conditional_density_grid(t, xs, ys))
    return acc / len(draws)
