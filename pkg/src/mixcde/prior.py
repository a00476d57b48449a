"""Prior hyperparameters, prior simulation and density, and prior audits."""

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaln

from ._validation import check_positive
from .exceptions import (
    DegenerateVarianceWarning,
    DimensionError,
    InvalidParameterError,
    RankDeficientError,
)
from .model import LOG_2PI, MixtureTheta

DEFAULT_CONSTANTS = {"c_beta": 100.0, "c_sigma": 0.1, "c_s": 10.0, "a": 15.0, "A_m": 1.0}
ALTERNATIVE_CONSTANTS = {"c_beta": 200.0, "c_sigma": 0.2, "c_s": 15.0, "a": 12.0, "A_m": 2.0}
PRIOR_SETS = {"default": DEFAULT_CONSTANTS, "alt": ALTERNATIVE_CONSTANTS}
DEFAULT_M_MAX = 50


@dataclass(eq=False)
class PriorHyper:
    """Hyperparameters of the mixture prior.

    Gamma distributions use (shape, rate). The scale priors are placed on
    ``s_y**-2``, ``s_x**-2``, ``1 / sigma_y`` and ``1 / sigma_x``.
    """

    beta_mean: np.ndarray
    beta_prec: np.ndarray
    mu_mean: np.ndarray
    mu_prec: np.ndarray
    sy_shape: float
    sy_rate: float
    sx_shape: np.ndarray
    sx_rate: np.ndarray
    sigy_shape: float
    sigy_rate: float
    sigx_shape: np.ndarray
    sigx_rate: np.ndarray
    a: float = 15.0
    A_m: float = 1.0
    c_beta: float = 100.0
    c_sigma: float = 0.1
    c_s: float = 10.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.beta_mean = np.atleast_1d(np.asarray(self.beta_mean, dtype=float))
        self.mu_mean = np.atleast_1d(np.asarray(self.mu_mean, dtype=float))
        d = self.mu_mean.shape[0]
        self.beta_prec = np.asarray(self.beta_prec, dtype=float).reshape(d + 1, d + 1)
        self.mu_prec = np.asarray(self.mu_prec, dtype=float).reshape(d, d)
        for name in ("sx_shape", "sx_rate", "sigx_shape", "sigx_rate"):
            setattr(self, name, np.broadcast_to(np.asarray(getattr(self, name), float), (d,)).copy())
        for name in ("sy_shape", "sy_rate", "sigy_shape", "sigy_rate", "a", "A_m"):
            setattr(self, name, float(getattr(self, name)))
        self.validate()

    @property
    def d_x(self):
        return self.mu_mean.shape[0]

    def validate(self):
        for name in ("sy_shape", "sy_rate", "sx_shape", "sx_rate", "sigy_shape", "sigy_rate",
                     "sigx_shape", "sigx_rate", "a", "A_m"):
            check_positive(getattr(self, name), name)
        for name in ("beta_prec", "mu_prec"):
            p = getattr(self, name)
            if not np.allclose(p, p.T, rtol=1e-10, atol=0):
                raise InvalidParameterError(f"{name} must be symmetric")
            try:
                np.linalg.cholesky(p)
            except np.linalg.LinAlgError:
                raise InvalidParameterError(f"{name} must be positive definite") from None

    def _factor(self, name):
        # Cholesky of the precision and of the covariance, computed once.
        if name not in self._cache:
            prec = getattr(self, name)
            cov = np.linalg.inv(prec)
            cov = 0.5 * (cov + cov.T)
            self._cache[name] = (np.linalg.cholesky(cov), np.linalg.slogdet(prec)[1])
        return self._cache[name]

    def to_dict(self):
        d = {k: v for k, v in asdict(self).items() if k != "_cache"}
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if not k.startswith("_")})


@dataclass
class PriorConditionConstants:
    """Constants of the tail and thickness conditions on the scale prior.

    ``a[0]`` is ``a_1``; the vectors hold 16 and 5 entries respectively.
    """

    a: np.ndarray = field(default_factory=lambda: np.ones(16))
    tau: np.ndarray = field(default_factory=lambda: np.ones(5))

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float).reshape(16)
        self.tau = np.asarray(self.tau, dtype=float).reshape(5)
        check_positive(self.a, "a")
        check_positive(self.tau, "tau")

    def ai(self, i):
        return float(self.a[i - 1])

    def taui(self, i):
        return float(self.tau[i - 1])


def _rank_check(X, names):
    for k in range(X.shape[1]):
        if np.linalg.matrix_rank(X[:, : k + 1]) < k + 1:
            raise RankDeficientError(names[k])


def derive_hyperparameters(data, c_beta=100.0, c_sigma=0.1, c_s=10.0, a=15.0, A_m=1.0):
    """Data-dependent hyperparameters centred on the least-squares fit."""
    n, d = data.n, data.d_x
    if n <= d + 1:
        raise InvalidParameterError(f"need n > d_x + 1 observations, got n={n}, d_x={d}")
    for name, v in (("c_beta", c_beta), ("c_sigma", c_sigma), ("c_s", c_s), ("a", a), ("A_m", A_m)):
        check_positive(v, name)
    X = data.design
    _rank_check(X, ["intercept"] + [f"x{k + 1}" for k in range(d)])
    XtX = X.T @ X
    beta = np.linalg.solve(XtX, X.T @ data.y)
    rss_n = float(np.sum((data.y - X @ beta) ** 2) / n)
    floor = 1e-12 * float(np.var(data.y)) + 1e-300
    if rss_n < floor:
        warnings.warn(f"residual variance {rss_n:.3g} floored at {floor:.3g}",
                      DegenerateVarianceWarning, stacklevel=2)
        rss_n = floor
    beta_cov = c_beta * np.linalg.inv(XtX) * rss_n
    beta_prec = np.linalg.inv(0.5 * (beta_cov + beta_cov.T))
    mu = data.x.mean(axis=0)
    xc = data.x - mu
    mu_cov = xc.T @ xc / n
    mu_prec = np.linalg.inv(mu_cov)
    var_x = np.diag(mu_cov)
    return PriorHyper(
        beta_mean=beta,
        beta_prec=0.5 * (beta_prec + beta_prec.T),
        mu_mean=mu,
        mu_prec=0.5 * (mu_prec + mu_prec.T),
        sy_shape=c_s, sy_rate=c_s,
        sx_shape=np.full(d, c_s), sx_rate=np.full(d, c_s),
        sigy_shape=c_sigma / rss_n, sigy_rate=c_sigma / math.sqrt(rss_n),
        sigx_shape=c_sigma / var_x, sigx_rate=c_sigma / np.sqrt(var_x),
        a=a, A_m=A_m, c_beta=c_beta, c_sigma=c_sigma, c_s=c_s,
    )


# -- number of components ---------------------------------------------------

def log_m_prior(m, A_m, m_max):
    """log P(m) for the geometric prior truncated to {1, ..., m_max}."""
    if m < 1 or m > m_max:
        return -math.inf
    log_norm = math.log1p(-math.exp(-A_m * m_max))
    return math.log(math.expm1(A_m)) - A_m * m - log_norm


def m_prior_masses(A_m, m_max):
    ks = np.arange(1, m_max + 1)
    return np.exp([log_m_prior(int(k), A_m, m_max) for k in ks])


def geometric_m_mean(A_m):
    """Mean of the untruncated prior on m."""
    q = math.exp(-A_m)
    return (math.exp(A_m) - 1.0) * q / (1.0 - q) ** 2


# -- per-block log densities --------------------------------------------------

def _log_gamma_pdf(v, shape, rate):
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(v) - rate * v


def _log_mvn(v, mean, chol_cov, logdet_prec):
    # v: (m, p)
    diff = np.atleast_2d(v) - mean
    z = np.linalg.solve(chol_cov, diff.T)
    p = mean.shape[0]
    return -0.5 * np.sum(z * z, axis=0) - 0.5 * p * LOG_2PI + 0.5 * logdet_prec


def log_prior_beta(hyper, beta):
    L, ld = hyper._factor("beta_prec")
    return _log_mvn(beta, hyper.beta_mean, L, ld)


def log_prior_mu(hyper, mu_x):
    L, ld = hyper._factor("mu_prec")
    return _log_mvn(mu_x, hyper.mu_mean, L, ld)


def log_prior_local_y(hyper, s_y):
    """Density of s_y when s_y**-2 is Gamma distributed (includes Jacobian 2 s**-3)."""
    s_y = np.asarray(s_y, dtype=float)
    return _log_gamma_pdf(s_y ** -2, hyper.sy_shape, hyper.sy_rate) + math.log(2.0) - 3.0 * np.log(s_y)


def log_prior_local_x(hyper, s_x):
    s_x = np.atleast_2d(s_x)
    lp = _log_gamma_pdf(s_x ** -2, hyper.sx_shape, hyper.sx_rate) + math.log(2.0) - 3.0 * np.log(s_x)
    return np.sum(lp, axis=-1)


def log_prior_global(hyper, sigma_y, sigma_x):
    """Density of (sigma_y, sigma_x) when their reciprocals are Gamma distributed."""
    sigma_x = np.asarray(sigma_x, dtype=float)
    lp = _log_gamma_pdf(1.0 / sigma_y, hyper.sigy_shape, hyper.sigy_rate) - 2.0 * math.log(sigma_y)
    lp += np.sum(_log_gamma_pdf(1.0 / sigma_x, hyper.sigx_shape, hyper.sigx_rate)
                 - 2.0 * np.log(sigma_x))
    return float(lp)


def log_dirichlet(weights, conc):
    """Symmetric Dirichlet log density; 0 for a single component."""
    m = len(weights)
    if m == 1:
        return 0.0
    with np.errstate(divide="ignore"):
        lw = np.log(weights)
    return float(gammaln(conc * m) - m * gammaln(conc) + (conc - 1.0) * np.sum(lw))


def log_component_prior(hyper, beta, mu_x, s_y, s_x):
    """Joint log density of the per-component parameters, one value per component."""
    return (log_prior_beta(hyper, beta) + log_prior_mu(hyper, mu_x)
            + log_prior_local_y(hyper, s_y) + log_prior_local_x(hyper, s_x))


def log_prior_density(theta, hyper, m_max=DEFAULT_M_MAX):
    """Log prior density of ``theta`` including the prior mass of its ``m``.

    Densities are with respect to Lebesgue measure on the natural parameters
    (scales, not their transforms) and on the first ``m - 1`` weights.
    """
    if theta.d_x != hyper.d_x:
        raise DimensionError(f"theta has d_x={theta.d_x}, prior has d_x={hyper.d_x}")
    if theta.m > m_max:
        return -math.inf
    if (np.any(theta.s_y <= 0) or np.any(theta.s_x <= 0) or theta.sigma_y <= 0
            or np.any(theta.sigma_x <= 0)):
        return -math.inf
    lp = log_m_prior(theta.m, hyper.A_m, m_max)
    lp += log_dirichlet(theta.weights, hyper.a / theta.m)
    lp += float(np.sum(log_component_prior(hyper, theta.beta, theta.mu_x, theta.s_y, theta.s_x)))
    lp += log_prior_global(hyper, theta.sigma_y, theta.sigma_x)
    return lp if math.isfinite(lp) else -math.inf


# -- simulation ---------------------------------------------------------------

def sample_m(A_m, m_max, rng):
    return int(rng.choice(np.arange(1, m_max + 1), p=m_prior_masses(A_m, m_max)))


def sample_log_dirichlet(conc, m, rng):
    """Log of a symmetric Dirichlet draw, stable for small concentrations."""
    g = rng.gamma(conc + 1.0, size=m)
    logg = np.log(g) + np.log(rng.uniform(size=m)) / conc
    return logg - np.logaddexp.reduce(logg)


def sample_components(hyper, m, rng):
    """Draw ``m`` components from the prior: (beta, mu_x, s_y, s_x)."""
    d = hyper.d_x
    Lb, _ = hyper._factor("beta_prec")
    Lm, _ = hyper._factor("mu_prec")
    beta = hyper.beta_mean + rng.standard_normal((m, d + 1)) @ Lb.T
    mu_x = hyper.mu_mean + rng.standard_normal((m, d)) @ Lm.T
    s_y = rng.gamma(hyper.sy_shape, 1.0 / hyper.sy_rate, size=m) ** -0.5
    s_x = rng.gamma(hyper.sx_shape, 1.0 / hyper.sx_rate, size=(m, d)) ** -0.5
    return beta, mu_x, s_y, s_x


def sample_globals(hyper, rng):
    sigma_y = 1.0 / rng.gamma(hyper.sigy_shape, 1.0 / hyper.sigy_rate)
    sigma_x = 1.0 / rng.gamma(hyper.sigx_shape, 1.0 / hyper.sigx_rate)
    return sigma_y, sigma_x


def sample_prior(hyper, m_max=DEFAULT_M_MAX, rng=None, m=None):
    """Draw a :class:`MixtureTheta` from the prior.

    ``m`` fixes the number of components instead of drawing it.
    """
    rng = np.random.default_rng(rng)
    if m_max < 1:
        raise InvalidParameterError("m_max must be at least 1")
    if m is None:
        m = sample_m(hyper.A_m, m_max, rng)
    if m == 1:
        weights = np.ones(1)
    else:
        weights = np.exp(sample_log_dirichlet(hyper.a / m, m, rng))
        weights /= weights.sum()
    beta, mu_x, s_y, s_x = sample_components(hyper, m, rng)
    sigma_y, sigma_x = sample_globals(hyper, rng)
    return MixtureTheta(weights, beta, mu_x, s_y, s_x, sigma_y, sigma_x)


# -- audits -------------------------------------------------------------------

@dataclass
class BetaTailResult:
    mc_estimate: float
    mc_se: float
    bound: float
    exact: float
    passed: bool


def beta_tail_bound(a, m, alpha_floor):
    """2 e^2 Gamma(a + 1) alpha_floor**(a / m), evaluated via log-gamma.

    Returns ``inf`` when the bound exceeds the double range (it is vacuous there).
    """
    log_bound = math.log(2.0) + 2.0 + float(gammaln(a + 1.0)) + (a / m) * math.log(alpha_floor)
    return math.exp(log_bound) if log_bound < 709.0 else math.inf


def beta_tail_check(a, m, alpha_floor, n_mc=100_000, rng=None):
    """Monte Carlo check of P(w_j < alpha_floor | m) against its closed-form bound.

    A single weight of a symmetric Dirichlet(a/m, ..., a/m) draw is
    Beta(a/m, a(m-1)/m).
    """
    if not 0.0 < alpha_floor <= 0.5:
        raise InvalidParameterError(f"alpha_floor must lie in (0, 1/2], got {alpha_floor}")
    if m < 2:
        raise InvalidParameterError("m must be at least 2")
    from scipy.stats import beta as beta_dist

    rng = np.random.default_rng(rng)
    p, q = a / m, a * (m - 1) / m
    draws = rng.beta(p, q, size=n_mc)
    est = float(np.mean(draws < alpha_floor))
    se = math.sqrt(max(est * (1.0 - est), 0.0) / n_mc)
    bound = beta_tail_bound(a, m, alpha_floor)
    return BetaTailResult(est, se, bound, float(beta_dist.cdf(alpha_floor, p, q)),
                          est <= bound + 3.0 * se)


@dataclass
class AuditPoint:
    condition: str
    s: float
    t: float
    estimate: float
    se: float
    template: float
    passed: bool


@dataclass
class AuditReport:
    points: list

    @property
    def passed(self):
        return all(p.passed for p in self.points)

    def by_condition(self, name):
        return [p for p in self.points if p.condition == name]

    def summary(self):
        out = {}
        for cond in ("upper_tail", "lower_tail", "thickness"):
            pts = self.by_condition(cond)
            if pts:
                out[cond] = {"n_points": len(pts), "n_passed": sum(p.passed for p in pts)}
        return out


def audit_sigma_conditions(constants, prior_sampler, s_grid, t_grid=(), n_mc=100_000, rng=None,
                           lower_s_grid=None):
    """Monte Carlo audit of the three scale-prior conditions.

    ``prior_sampler(rng, size)`` returns draws of sigma. The precision
    ``sigma**-2`` is checked against

    * upper tail   P(prec >= s)            <= a1 exp(-a2 s**a3)
    * lower tail   P(prec < s)             <= a4 s**a5
    * thickness    P(s < prec < s (1 + t)) >= a6 s**a7 t**a8 exp(-a9 sqrt(s))

    Upper and lower tails use ``s_grid`` (``lower_s_grid`` overrides the
    latter); thickness uses every (s, t) pair. A point passes when the
    estimate is on the right side of the template within three standard
    errors.
    """
    s_grid = list(np.atleast_1d(s_grid))
    lower = list(np.atleast_1d(lower_s_grid)) if lower_s_grid is not None else s_grid
    if not s_grid:
        raise InvalidParameterError("the s grid is empty")
    rng = np.random.default_rng(rng)
    prec = np.asarray(prior_sampler(rng, n_mc), dtype=float) ** -2
    c = constants

    def est(mask):
        p = float(np.mean(mask))
        return p, math.sqrt(p * (1.0 - p) / n_mc)

    points = []
    for s in s_grid:
        p, se = est(prec >= s)
        tmpl = c.ai(1) * math.exp(-c.ai(2) * s ** c.ai(3))
        points.append(AuditPoint("upper_tail", float(s), math.nan, p, se, tmpl, p <= tmpl + 3 * se))
    for s in lower:
        p, se = est(prec < s)
        tmpl = c.ai(4) * s ** c.ai(5)
        points.append(AuditPoint("lower_tail", float(s), math.nan, p, se, tmpl, p <= tmpl + 3 * se))
    for s in s_grid:
        for t in t_grid:
            if not 0.0 < t < 1.0:
                raise InvalidParameterError(f"t must lie in (0, 1), got {t}")
            p, se = est((prec > s) & (prec < s * (1.0 + t)))
            tmpl = c.ai(6) * s ** c.ai(7) * t ** c.ai(8) * math.exp(-c.ai(9) * math.sqrt(s))
            points.append(AuditPoint("thickness", float(s), float(t), p, se, tmpl,
                                     p >= tmpl - 3 * se and p > 0.0))
    return AuditReport(points)


def gamma_reciprocal_sampler(shape, rate):
    """Sampler for sigma when 1/sigma ~ Gamma(shape, rate)."""
    def draw(rng, size):
        return 1.0 / rng.gamma(shape, 1.0 / rate, size=size)
    return draw
