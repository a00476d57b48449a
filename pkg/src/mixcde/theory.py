"""Closed-form rate and sieve quantities, and numerical checks of their inequalities."""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidParameterError
from .metrics import gauss_legendre
from .prior import DEFAULT_M_MAX, sample_prior


@dataclass
class RateParams:
    """Smoothness ``beta_smooth``, total dimension ``d``, tail exponent ``tau``,
    prior exponents ``tau1``, ``tau2`` and sample size ``n``."""

    beta_smooth: float
    d: int
    tau: float
    tau1: float = 1.0
    tau2: float = 1.0
    n: int = 1000

    def __post_init__(self):
        if not (self.beta_smooth > 0 and self.d >= 1 and self.tau > 0):
            raise InvalidParameterError("beta_smooth, d and tau must be positive")
        if self.tau1 < 0 or self.tau2 < 0 or self.n < 1:
            raise InvalidParameterError("tau1, tau2 must be nonnegative and n positive")


@dataclass
class RateResult:
    s: float
    t0: float
    t_min: float
    t: float
    eps_n: float


def contraction_rate(p):
    """Rate n**(-b/(2b + d)) (log n)**t at t just above its threshold."""
    b, d = p.beta_smooth, p.d
    s = 1.0 + 1.0 / b + 1.0 / p.tau
    t0 = (d * s + max(p.tau1, 1.0, p.tau2 / p.tau)) / (2.0 + d / b)
    t_min = t0 + max(0.0, (1.0 - p.tau1) / 2.0)
    t = t_min * (1.0 + 1e-9)
    eps = p.n ** (-b / (2.0 * b + d)) * math.log(p.n) ** t if p.n > 1 else 0.0
    return RateResult(s, t0, t_min, t, eps)


@dataclass
class SieveSpec:
    H: int
    sigma_lo: float
    sigma_hi: float
    mu_bar: float
    alpha_floor: float
    eps: float
    d_y: int = 1
    d_x: int = 1

    def __post_init__(self):
        if self.H < 1 or self.d_y < 1 or self.d_x < 1:
            raise InvalidParameterError("H, d_y and d_x must be positive integers")
        if not 0.0 < self.eps < 1.0:
            raise InvalidParameterError(f"eps must lie in (0, 1), got {self.eps}")
        if not 0.0 < self.sigma_lo <= min(1.0, self.sigma_hi):
            raise InvalidParameterError("need 0 < sigma_lo <= min(1, sigma_hi)")
        if not 0.0 < self.alpha_floor <= 0.5:
            raise InvalidParameterError("alpha_floor must lie in (0, 1/2]")
        if not self.mu_bar > 0:
            raise InvalidParameterError("mu_bar must be positive")


@dataclass
class CoveringBound:
    log_bound: float
    bound: int = None
    factors: dict = field(default_factory=dict)


def _covering_factors(s):
    """(base, exponent) pairs whose product is the covering bound."""
    H = s.H
    n_mu_y = math.ceil(16.0 * s.mu_bar * s.d_y / (s.sigma_lo * s.eps))
    n_mu_x = math.ceil(48.0 * s.d_x / (s.sigma_lo ** 2 * s.eps))
    n_alpha = math.ceil(math.log(1.0 / s.alpha_floor) / math.log1p(s.eps / (12.0 * H)))
    n_sigma = math.ceil(math.log(s.sigma_hi / s.sigma_lo)
                        / math.log1p(s.sigma_lo ** 2 * s.eps / (48.0 * max(s.d_x, s.d_y))))
    return {
        "H": (H, 1),
        "mu_y": (n_mu_y, H * s.d_y),
        "mu_x": (n_mu_x, H * s.d_x),
        "alpha_H": (H, 1),
        "alpha": (n_alpha, H - 1),
        "sigma": (n_sigma, 1),
    }


def sieve_covering_bound(s, max_digits=100_000):
    """Covering-number bound of the sieve, in log space and (when small enough) exactly.

    The integer bound is returned when it has at most ``max_digits`` digits.
    """
    factors = _covering_factors(s)
    logs = []
    for base, power in factors.values():
        if power == 0:
            continue
        if base == 0:
            return CoveringBound(-math.inf, 0, factors)
        logs.append(power * math.log(base))
    log_bound = math.fsum(logs)
    exact = None
    if log_bound / math.log(10.0) <= max_digits:
        exact = 1
        for base, power in factors.values():
            exact *= base ** power
    return CoveringBound(log_bound, exact, factors)


@dataclass
class ComplementBound:
    terms: dict
    total: float


def sieve_complement_bound(s, constants, a):
    """Upper bound on the prior mass outside the sieve, term by term."""
    c = constants
    H = s.H
    terms = {
        "mu_tail": H ** 2 * math.exp(-c.ai(13) * s.mu_bar ** c.taui(3)),
        "alpha_floor": H ** 2 * s.alpha_floor ** (a / H),
        "m_tail": math.exp(-c.ai(10) * H * math.log(H) ** c.taui(1)) if H > 1 else 1.0,
        "sigma_small": c.ai(1) * math.exp(-c.ai(2) * s.sigma_lo ** (-2.0 * c.ai(3))),
        "sigma_large": c.ai(4) * math.exp(-2.0 * c.ai(5) * math.log(s.sigma_hi)),
    }
    return ComplementBound(terms, math.fsum(terms.values()))


def sieve_complement_mc(s, hyper, m_max=DEFAULT_M_MAX, n_mc=10_000, rng=None):
    """Fraction of prior draws falling outside the sieve, with its standard error.

    A draw is outside when m > H, some weight is below ``alpha_floor``, a
    global scale leaves [sigma_lo, sigma_hi], or an intercept leaves
    [-mu_bar, mu_bar].
    """
    rng = np.random.default_rng(rng)
    out = 0
    for _ in range(n_mc):
        t = sample_prior(hyper, m_max, rng)
        scales = np.concatenate([[t.sigma_y], t.sigma_x])
        if (t.m > s.H or np.any(t.weights < s.alpha_floor)
                or np.any(scales < s.sigma_lo) or np.any(scales > s.sigma_hi)
                or np.any(np.abs(t.beta[:, 0]) > s.mu_bar)):
            out += 1
    p = out / n_mc
    return p, math.sqrt(p * (1.0 - p) / n_mc)


@dataclass
class LemmaCheck:
    lhs: float
    rhs: float
    core: float
    g_bar: float
    u_lo: float
    passed: bool

    @property
    def margin(self):
        return self.rhs - self.lhs


def _tensor_rule(d, n):
    nodes, weights = gauss_legendre(0.0, 1.0, n)
    pts = np.array(list(itertools.product(nodes, repeat=d)))
    w = np.prod(np.array(list(itertools.product(weights, repeat=d))), axis=1)
    return pts, w


def check_lemma_a1(f0, f, g0, u, g, d_x, y_range, n_y=256, n_x=None, g_bar=None, u_lo=None, tol=1e-6):
    """Check d_h(f0, f)**2 <= (4 g_bar / u_lo) * int (sqrt(f0 u) - sqrt(f g))**2 on [0,1]**d_x.

    ``f0`` and ``f`` map (x, ys) to conditional densities; ``g0``, ``u`` and
    ``g`` map an (N, d_x) array to covariate densities. ``g_bar`` and
    ``u_lo`` default to the max of ``g0`` and min of ``u`` over the
    quadrature nodes.
    """
    if n_x is None:
        n_x = 48 if d_x == 1 else 20
    xs, wx = _tensor_rule(d_x, n_x)
    ys, wy = gauss_legendre(y_range[0], y_range[1], n_y)
    g0v = np.asarray(g0(xs), dtype=float)
    uv = np.asarray(u(xs), dtype=float)
    gv = np.asarray(g(xs), dtype=float)
    g_bar = float(np.max(g0v)) if g_bar is None else float(g_bar)
    u_lo = float(np.min(uv)) if u_lo is None else float(u_lo)
    if u_lo <= 0:
        raise InvalidParameterError("u must be bounded away from zero")
    lhs = 0.0
    core = 0.0
    for k, x in enumerate(xs):
        a = np.maximum(np.asarray(f0(x, ys), dtype=float), 0.0)
        b = np.maximum(np.asarray(f(x, ys), dtype=float), 0.0)
        lhs += wx[k] * g0v[k] * float(wy @ (np.sqrt(a) - np.sqrt(b)) ** 2)
        core += wx[k] * float(wy @ (np.sqrt(a * uv[k]) - np.sqrt(b * gv[k])) ** 2)
    rhs = 4.0 * g_bar / u_lo * core
    return LemmaCheck(lhs, rhs, core, g_bar, u_lo, lhs <= rhs + tol)


@dataclass
class RateStudy:
    slope: float
    intercept: float
    ns: np.ndarray
    means: np.ndarray
    ci: tuple


def empirical_rate_study(results, n_boot=2000, seed=0, level=0.95):
    """Regress log mean MAE on log n.

    ``results`` is a sequence of ``(n, maes)`` pairs; entries sharing an
    ``n`` are pooled. The confidence interval resamples replicates within
    each ``n``.
    """
    pooled = {}
    for n, maes in results:
        pooled.setdefault(int(n), []).extend(np.atleast_1d(np.asarray(maes, dtype=float)).tolist())
    if len(pooled) < 3:
        raise InvalidParameterError(f"need at least 3 distinct sample sizes, got {len(pooled)}")
    ns = np.array(sorted(pooled))
    groups = [np.array(pooled[n]) for n in ns]
    means = np.array([g.mean() for g in groups])
    logn = np.log(ns)
    slope, intercept = np.polyfit(logn, np.log(means), 1)
    rng = np.random.default_rng(seed)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        bm = [rng.choice(g, size=len(g), replace=True).mean() for g in groups]
        boots[b] = np.polyfit(logn, np.log(bm), 1)[0]
    alpha = (1.0 - level) / 2.0
    ci = (float(np.quantile(boots, alpha)), float(np.quantile(boots, 1.0 - alpha)))
    return RateStudy(float(slope), float(intercept), ns, means, ci)


def _random_covariate_density(rng, d_x, floor):
    """Product of ``floor`` + (1 - floor) * Beta(a, b) densities on [0, 1]**d_x."""
    from scipy.stats import beta as beta_dist

    ab = rng.uniform(1.0, 4.0, size=(d_x, 2))

    def dens(xs):
        xs = np.atleast_2d(xs)
        out = np.ones(xs.shape[0])
        for k in range(d_x):
            out *= floor + (1.0 - floor) * beta_dist.pdf(xs[:, k], ab[k, 0], ab[k, 1])
        return out

    return dens


def _random_conditional(rng, d_x):
    from .model import MixtureTheta, eval_conditional_density

    m = int(rng.integers(1, 4))
    theta = MixtureTheta(
        weights=rng.dirichlet(np.ones(m)),
        beta=rng.normal(0.0, 1.0, size=(m, d_x + 1)),
        mu_x=rng.uniform(0.0, 1.0, size=(m, d_x)),
        s_y=rng.uniform(0.5, 1.5, size=m),
        s_x=rng.uniform(0.5, 1.5, size=(m, d_x)),
        sigma_y=rng.uniform(0.2, 0.8),
        sigma_x=rng.uniform(0.2, 1.0, size=d_x),
    )
    return theta, (lambda x, ys: eval_conditional_density(theta, x, ys))


def _uniform_density(xs):
    return np.ones(np.atleast_2d(xs).shape[0])


def random_lemma_instance(rng, d_x, uniform=False):
    """Random inputs for :func:`check_lemma_a1` on [0, 1]**d_x.

    ``f0`` and ``f`` are random gated mixtures. ``g0`` is a random bounded
    density. ``g`` and ``u`` are random densities with ``u`` bounded below
    by 1/2, and the y-range covers both mixtures on the unit cube. With
    ``uniform=True`` all three covariate densities are uniform, the case
    where the two sides differ only by the constant factor 4.
    """
    from .metrics import mixture_envelope

    t0, f0 = _random_conditional(rng, d_x)
    t1, f = _random_conditional(rng, d_x)
    corners = np.array(list(itertools.product((0.0, 1.0), repeat=d_x)))
    lo, hi = mixture_envelope([t0, t1], corners, width=8.0)
    if uniform:
        return {"f0": f0, "f": f, "g0": _uniform_density, "u": _uniform_density,
                "g": _uniform_density, "d_x": d_x, "y_range": (lo, hi)}
    return {
        "f0": f0, "f": f,
        "g0": _random_covariate_density(rng, d_x, 0.0),
        "u": _random_covariate_density(rng, d_x, 0.5),
        "g": _random_covariate_density(rng, d_x, 0.0),
        "d_x": d_x, "y_range": (lo, hi),
    }
