import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import gammaincc

from mixcde.exceptions import (DegenerateVarianceWarning, DimensionError, InvalidParameterError,
                               RankDeficientError)
from mixcde.model import Dataset, MixtureTheta, eval_conditional_density
from mixcde.prior import (ALTERNATIVE_CONSTANTS, DEFAULT_CONSTANTS, PriorConditionConstants, PriorHyper,
                          audit_sigma_conditions, beta_tail_bound, beta_tail_check, derive_hyperparameters,
                          gamma_reciprocal_sampler, geometric_m_mean, log_dirichlet, log_m_prior,
                          log_prior_density, m_prior_masses, sample_log_dirichlet, sample_m, sample_prior)
from mixcde.sim import ExperimentConfig, f0_true, generate_dgp

# Mean of the untruncated geometric prior at A_m = 1: (e - 1) e^-1 / (1 - e^-1)^2.
M_MEAN_A1 = (math.e - 1) * math.exp(-1) / (1 - math.exp(-1)) ** 2


def dgp_data(n=200, d_x=1, seed=0):
    return generate_dgp(ExperimentConfig(n=max(n, 10), d_x=d_x, replications=1), seed)


def test_geometric_mean_oracle():
    assert M_MEAN_A1 == pytest.approx(1.582, abs=5e-4)
    assert geometric_m_mean(1.0) == pytest.approx(M_MEAN_A1, rel=1e-14)


def test_m_masses_sum_to_one():
    for A in (0.3, 1.0, 2.0):
        for m_max in (1, 5, 50):
            assert abs(m_prior_masses(A, m_max).sum() - 1.0) < 1e-12


def test_m_prior_support():
    assert log_m_prior(51, 1.0, 50) == -math.inf
    assert log_m_prior(0, 1.0, 50) == -math.inf


class TestDeriveHyperparameters:
    def test_four_point_ols(self):
        data = Dataset([0.0, 1.0, 1.0, 2.0], [0.0, 1.0, 0.0, 1.0])
        h = derive_hyperparameters(data)
        np.testing.assert_allclose(h.beta_mean, [0.5, 1.0], atol=1e-14)

    def test_default_constants_echoed(self):
        h = derive_hyperparameters(dgp_data())
        assert (h.c_beta, h.c_sigma, h.c_s, h.a, h.A_m) == (100.0, 0.1, 10.0, 15.0, 1.0)
        assert DEFAULT_CONSTANTS == {"c_beta": 100.0, "c_sigma": 0.1, "c_s": 10.0, "a": 15.0, "A_m": 1.0}
        assert ALTERNATIVE_CONSTANTS == {"c_beta": 200.0, "c_sigma": 0.2, "c_s": 15.0, "a": 12.0, "A_m": 2.0}

    def test_formulas(self):
        data = dgp_data(300, d_x=2)
        h = derive_hyperparameters(data)
        X = data.design
        beta = np.linalg.lstsq(X, data.y, rcond=None)[0]
        rss_n = np.sum((data.y - X @ beta) ** 2) / data.n
        np.testing.assert_allclose(h.beta_mean, beta, rtol=1e-10)
        np.testing.assert_allclose(np.linalg.inv(h.beta_prec), 100.0 * np.linalg.inv(X.T @ X) * rss_n,
                                   rtol=1e-8)
        np.testing.assert_allclose(h.mu_mean, data.x.mean(axis=0))
        np.testing.assert_allclose(np.linalg.inv(h.mu_prec), np.cov(data.x.T, bias=True), rtol=1e-8)
        assert h.sigy_shape == pytest.approx(0.1 / rss_n)
        assert h.sigy_rate == pytest.approx(0.1 / math.sqrt(rss_n))
        var_x = data.x.var(axis=0)
        np.testing.assert_allclose(h.sigx_shape, 0.1 / var_x)
        np.testing.assert_allclose(h.sigx_rate, 0.1 / np.sqrt(var_x))
        assert h.sy_shape == h.sy_rate == 10.0

    def test_perfect_fit_floors_variance(self):
        x = np.linspace(0, 1, 8)
        with pytest.warns(DegenerateVarianceWarning):
            h = derive_hyperparameters(Dataset(x, x))
        np.testing.assert_allclose(h.beta_mean, [0.0, 1.0], atol=1e-10)
        assert math.isfinite(h.sigy_shape) and h.sigy_shape > 0

    def test_rank_deficiency_names_column(self):
        x = np.column_stack([np.linspace(0, 1, 10), 2 * np.linspace(0, 1, 10)])
        with pytest.raises(RankDeficientError) as info:
            derive_hyperparameters(Dataset(np.arange(10.0), x))
        assert info.value.column == "x2"
        with pytest.raises(RankDeficientError) as info:
            derive_hyperparameters(Dataset(np.arange(10.0), np.ones(10)))
        assert info.value.column == "x1"

    def test_too_few_observations(self):
        with pytest.raises(InvalidParameterError):
            derive_hyperparameters(Dataset([0.0, 1.0], [0.0, 1.0]))

    def test_scale_covariance(self):
        data = dgp_data(150)
        c = 3.0
        h = derive_hyperparameters(data)
        hc = derive_hyperparameters(Dataset(c * data.y, data.x))
        np.testing.assert_allclose(hc.beta_mean, c * h.beta_mean, rtol=1e-12)
        np.testing.assert_allclose(np.linalg.inv(hc.beta_prec), c ** 2 * np.linalg.inv(h.beta_prec), rtol=1e-10)
        # Shape c_sigma / (RSS/n) scales by 1 / c^2, rate c_sigma / sqrt(RSS/n) by 1 / c.
        assert hc.sigy_shape == pytest.approx(h.sigy_shape / c ** 2, rel=1e-12)
        assert hc.sigy_rate == pytest.approx(h.sigy_rate / c, rel=1e-12)
        np.testing.assert_allclose(hc.mu_prec, h.mu_prec)

    def test_dict_round_trip(self):
        h = derive_hyperparameters(dgp_data(60, d_x=2))
        h2 = PriorHyper.from_dict(h.to_dict())
        for k, v in h.to_dict().items():
            np.testing.assert_array_equal(np.asarray(getattr(h2, k)), np.asarray(v))

    def test_invalid_hyper(self):
        with pytest.raises(InvalidParameterError):
            PriorHyper(beta_mean=[0, 0], beta_prec=[[1, 2], [2, 1]], mu_mean=[0], mu_prec=[[1]],
                       sy_shape=1, sy_rate=1, sx_shape=1, sx_rate=1, sigy_shape=1, sigy_rate=1,
                       sigx_shape=1, sigx_rate=1)
        with pytest.raises(InvalidParameterError):
            PriorHyper(beta_mean=[0, 0], beta_prec=np.eye(2), mu_mean=[0], mu_prec=[[1]],
                       sy_shape=-1, sy_rate=1, sx_shape=1, sx_rate=1, sigy_shape=1, sigy_rate=1,
                       sigx_shape=1, sigx_rate=1)


@pytest.fixture(scope="module")
def hyper():
    return derive_hyperparameters(dgp_data(400))


class TestSampling:
    def test_m_mean(self):
        rng = np.random.default_rng(0)
        ms = np.array([sample_m(1.0, 50, rng) for _ in range(100_000)], dtype=float)
        assert abs(ms.mean() - M_MEAN_A1) < 0.02

    def test_draws_satisfy_invariants(self, hyper):
        rng = np.random.default_rng(1)
        for _ in range(10_000):
            t = sample_prior(hyper, 50, rng)
            assert 1 <= t.m <= 50
            assert abs(t.weights.sum() - 1.0) <= 1e-12
            assert np.all(t.s_y > 0) and t.sigma_y > 0

    def test_single_component_weight(self, hyper):
        t = sample_prior(hyper, 50, np.random.default_rng(2), m=1)
        assert t.weights.tolist() == [1.0]

    def test_dirichlet_means(self):
        rng = np.random.default_rng(3)
        for conc, m in ((15.0 / 4, 4), (0.05, 3), (15.0 / 40, 40)):
            w = np.exp(np.array([sample_log_dirichlet(conc, m, rng) for _ in range(20_000)]))
            se = w.std(axis=0) / math.sqrt(len(w))
            assert np.all(np.abs(w.mean(axis=0) - 1.0 / m) <= 3 * se + 1e-12)
            ref = stats.dirichlet(np.full(m, conc)).var()
            np.testing.assert_allclose(w.var(axis=0), ref, rtol=0.1)

    def test_prior_predictive_encloses_truth(self):
        data = dgp_data(1000)
        h = derive_hyperparameters(data)
        rng = np.random.default_rng(4)
        draws = [sample_prior(h, 50, rng) for _ in range(2000)]
        ys = np.linspace(data.y.min(), data.y.max(), 50)
        inside = []
        for x in (0.1, 0.5, 0.9):
            dens = np.array([eval_conditional_density(t, [x], ys) for t in draws])
            lo, hi = np.quantile(dens, [0.00005, 0.99995], axis=0)
            truth = f0_true(ys, x)
            inside.append(np.mean((lo <= truth) & (truth <= hi)))
            assert np.max(hi - lo) > np.max(truth)
        assert min(inside) >= 0.95


class TestLogPriorDensity:
    def oracle(self, t, h, m_max):
        lp = math.log(math.expm1(h.A_m)) - h.A_m * t.m - math.log1p(-math.exp(-h.A_m * m_max))
        if t.m > 1:
            lp += stats.dirichlet(np.full(t.m, h.a / t.m)).logpdf(t.weights)
        bcov = np.linalg.inv(h.beta_prec)
        mcov = np.linalg.inv(h.mu_prec)
        for j in range(t.m):
            lp += stats.multivariate_normal(h.beta_mean, bcov).logpdf(t.beta[j])
            lp += stats.multivariate_normal(h.mu_mean, mcov).logpdf(t.mu_x[j])
            s = t.s_y[j]
            lp += stats.gamma(h.sy_shape, scale=1 / h.sy_rate).logpdf(s ** -2) + math.log(2 * s ** -3)
            for k in range(t.d_x):
                s = t.s_x[j, k]
                lp += stats.gamma(h.sx_shape[k], scale=1 / h.sx_rate[k]).logpdf(s ** -2) + math.log(2 * s ** -3)
        lp += stats.gamma(h.sigy_shape, scale=1 / h.sigy_rate).logpdf(1 / t.sigma_y) - 2 * math.log(t.sigma_y)
        for k in range(t.d_x):
            sx = t.sigma_x[k]
            lp += stats.gamma(h.sigx_shape[k], scale=1 / h.sigx_rate[k]).logpdf(1 / sx) - 2 * math.log(sx)
        return lp

    def test_finite_at_prior_draws(self, hyper):
        rng = np.random.default_rng(5)
        for _ in range(200):
            assert math.isfinite(log_prior_density(sample_prior(hyper, 50, rng), hyper, 50))

    def test_matches_termwise_oracle(self):
        h = derive_hyperparameters(dgp_data(100, d_x=2))
        rng = np.random.default_rng(6)
        for _ in range(30):
            t1 = sample_prior(h, 50, rng, m=int(rng.integers(1, 5)))
            t2 = sample_prior(h, 50, rng, m=int(rng.integers(1, 5)))
            assert log_prior_density(t1, h, 50) == pytest.approx(self.oracle(t1, h, 50), rel=1e-9, abs=1e-8)
            ratio = math.exp(log_prior_density(t1, h, 50) - log_prior_density(t2, h, 50))
            oracle = math.exp(self.oracle(t1, h, 50) - self.oracle(t2, h, 50))
            assert ratio == pytest.approx(oracle, rel=1e-7)

    def test_m_above_m_max(self, hyper):
        t = sample_prior(hyper, 50, np.random.default_rng(7), m=6)
        assert log_prior_density(t, hyper, m_max=5) == -math.inf

    def test_dimension_mismatch(self, hyper):
        t = MixtureTheta.basic([1.0], [0.0], [[0.0, 0.0]], 1.0)
        with pytest.raises(DimensionError):
            log_prior_density(t, hyper)

    def test_dirichlet_single_component(self):
        assert log_dirichlet(np.array([1.0]), 15.0) == 0.0


class TestBetaTail:
    def test_arcsine_cell(self):
        r = beta_tail_check(1.0, 2, 0.01, 200_000, np.random.default_rng(8))
        exact = 2 / math.pi * math.asin(0.1)
        assert exact == pytest.approx(0.0638, abs=5e-5)
        assert r.exact == pytest.approx(exact, rel=1e-10)
        assert abs(r.mc_estimate - exact) <= 3 * r.mc_se
        assert r.bound == pytest.approx(2 * math.e ** 2 * 0.1, rel=1e-12)
        assert r.passed

    def test_large_a(self):
        r = beta_tail_check(15.0, 5, 0.5, 10_000, np.random.default_rng(9))
        assert r.bound == pytest.approx(2 * math.e ** 2 * math.gamma(16) * 0.5 ** 3, rel=1e-12)
        assert r.mc_estimate <= 1.0 <= r.bound and r.passed

    def test_tiny_floor(self):
        r = beta_tail_check(5.0, 3, 1e-12, 10_000, np.random.default_rng(10))
        assert r.mc_estimate == 0.0 and r.passed

    def test_bound_uses_log_gamma(self):
        # Gamma(101) alone overflows a float product of factorials; the log route does not.
        assert beta_tail_bound(100.0, 400, 0.4) == pytest.approx(
            2 * math.e ** 2 * math.exp(math.lgamma(101.0)) * 0.4 ** 0.25, rel=1e-10)
        assert beta_tail_bound(200.0, 400, 0.4) == math.inf
        assert beta_tail_check(200.0, 400, 0.4, 1000, np.random.default_rng(0)).passed

    def test_errors(self):
        with pytest.raises(InvalidParameterError):
            beta_tail_check(1.0, 2, 0.6)
        with pytest.raises(InvalidParameterError):
            beta_tail_check(1.0, 1, 0.1)


class TestSigmaAudit:
    def test_gamma_reciprocal_prior_tails(self):
        # 1/sigma ~ Gamma(2, 1): P(sigma^-2 >= s) = exp(-sqrt(s)) (1 + sqrt(s)).
        a = np.ones(16)
        a[1], a[2] = 0.5, 0.5
        a[0] = 10.0
        a[4] = 0.01
        consts = PriorConditionConstants(a=a)
        rep = audit_sigma_conditions(consts, gamma_reciprocal_sampler(2.0, 1.0), s_grid=[10.0, 100.0],
                                     n_mc=200_000, rng=11)
        assert rep.passed
        for p in rep.by_condition("upper_tail"):
            exact = gammaincc(2.0, math.sqrt(p.s))
            assert abs(p.estimate - exact) <= 4 * max(p.se, 1e-4)

    def test_point_mass_fails_thickness(self):
        consts = PriorConditionConstants()
        rep = audit_sigma_conditions(consts, lambda rng, size: np.ones(size), s_grid=[2.0, 10.0],
                                     t_grid=[0.1, 0.5], n_mc=1000, rng=12)
        thick = rep.by_condition("thickness")
        assert len(thick) == 4 and not any(p.passed for p in thick)

    def test_default_prior_report(self):
        h = derive_hyperparameters(dgp_data(500))
        rep = audit_sigma_conditions(PriorConditionConstants(),
                                     gamma_reciprocal_sampler(h.sigy_shape, h.sigy_rate),
                                     s_grid=[1.0, 10.0, 100.0], t_grid=[0.1, 0.5], n_mc=20_000, rng=13)
        summary = rep.summary()
        assert summary["thickness"]["n_points"] == 6
        assert summary["upper_tail"]["n_points"] == 3

    def test_empty_grid(self):
        with pytest.raises(InvalidParameterError):
            audit_sigma_conditions(PriorConditionConstants(), gamma_reciprocal_sampler(1, 1), s_grid=[])

    def test_constants_positive(self):
        with pytest.raises(InvalidParameterError):
            PriorConditionConstants(a=-np.ones(16))
