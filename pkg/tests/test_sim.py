import csv
import io
import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from mixcde.metrics import EvalGrid
from mixcde.sim import (NORMAL_SD, TABLE1_ROWS, TABLE_HEADER, ExperimentConfig, MetricsReport,
                        ReplicationResult, f0_true, generate_dgp, run_experiment, table_csv)


def truth_stub(cfg, index, seed):
    """Replication whose estimates equal the true density."""
    return ReplicationResult(index, seed, {"bayes": 0.0, "kernel": 0.0}, {"bayes": 0.0, "kernel": 0.0})


class TestTrueDensity:
    def test_point_values(self):
        assert f0_true(0.0, 0.0) == pytest.approx(1 / (0.1 * math.sqrt(2 * math.pi)), rel=1e-14)
        assert f0_true(0.0, 0.0) == pytest.approx(3.9894, abs=1e-4)
        w = math.exp(-1.0)
        expected = w * norm.pdf(0.5, 0.5, 0.1) + (1 - w) * norm.pdf(0.5, 0.5 ** 4, 0.2)
        assert f0_true(0.5, 0.5) == pytest.approx(expected, rel=1e-13)
        assert f0_true(0.5, 0.5) == pytest.approx(1.583, abs=1e-3)

    @pytest.mark.parametrize("x1", [-0.8, 0.0, 0.1, 0.5, 0.9, 1.7])
    def test_integrates_to_one(self, x1):
        val = integrate.quad(lambda y: float(f0_true(y, x1)), -5, 15, points=[x1, x1 ** 4], limit=200)[0]
        assert val == pytest.approx(1.0, abs=1e-10)

    def test_weight_capped_for_negative_covariate(self):
        ys = np.linspace(-1, 1, 7)
        np.testing.assert_allclose(f0_true(ys, -0.5), norm.pdf(ys, -0.5, 0.1), rtol=1e-13)


class TestDGP:
    def test_shapes_and_metadata(self):
        data = generate_dgp(ExperimentConfig(n=50, d_x=3), 11)
        assert data.y.shape == (50,) and data.x.shape == (50, 3)
        assert data.meta["seed"] == 11

    def test_regime_mixture_near_half(self):
        # Near x1 = 0.5 the first regime has probability exp(-1); compare P(y > 0.3) with the truth.
        x1 = 0.5
        data = generate_dgp(ExperimentConfig(n=100_000), 5)
        near = np.abs(data.x[:, 0] - x1) < 0.01
        assert near.sum() > 1000
        p_true = math.exp(-1) * norm.sf(0.3, 0.5, 0.1) + (1 - math.exp(-1)) * norm.sf(0.3, 0.0625, 0.2)
        frac = np.mean(data.y[near] > 0.3)
        # The window of half-width 0.01 shifts the probability by well under 0.01.
        assert abs(frac - p_true) <= 3 * math.sqrt(p_true * (1 - p_true) / near.sum()) + 0.01

    def test_irrelevant_covariates_independent(self):
        data = generate_dgp(ExperimentConfig(n=10_000, d_x=3), 3)
        r = np.corrcoef(np.column_stack([data.y, data.x]).T)
        assert np.all(np.abs(r[0, 2:]) < 4 / math.sqrt(10_000))
        assert np.all(np.abs(r[1, 2:]) < 4 / math.sqrt(10_000))

    def test_matched_across_dimensions(self):
        a = generate_dgp(ExperimentConfig(n=40, d_x=1), 99)
        b = generate_dgp(ExperimentConfig(n=40, d_x=5), 99)
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.x[:, 0], b.x[:, 0])

    def test_normal_covariates(self):
        data = generate_dgp(ExperimentConfig(n=20_000, covariates="normal"), 1)
        assert data.x[:, 0].mean() == pytest.approx(0.5, abs=0.01)
        assert data.x[:, 0].std() == pytest.approx(NORMAL_SD, rel=0.02)
        assert np.all(np.isfinite(data.y))

    def test_reproducible(self):
        a = generate_dgp(ExperimentConfig(n=30), 4)
        b = generate_dgp(ExperimentConfig(n=30), 4)
        assert np.array_equal(a.y, b.y) and np.array_equal(a.x, b.x)


class TestConfig:
    def test_replicate_seeds_prefix_stable(self):
        short = ExperimentConfig(replications=3, seed=8).replicate_seeds()
        long = ExperimentConfig(replications=10, seed=8).replicate_seeds()
        assert long[:3] == short and len(set(long)) == 10

    @pytest.mark.parametrize("bad", [dict(n=5), dict(d_x=0), dict(replications=0),
                                     dict(covariates="cauchy"), dict(estimators=("ols",)),
                                     dict(estimators=()), dict(prior="flat")])
    def test_validation(self, bad):
        with pytest.raises(ValueError):
            ExperimentConfig(**bad)

    def test_prior_sets(self):
        assert ExperimentConfig().prior_constants["c_beta"] == 100.0
        alt = ExperimentConfig(prior="alt").prior_constants
        assert alt == dict(c_beta=200.0, c_sigma=0.2, c_s=15.0, a=12.0, A_m=2.0)
        assert ExperimentConfig(prior={"c_beta": 5.0}).prior_constants == {"c_beta": 5.0}

    def test_table_rows(self):
        assert len(TABLE1_ROWS) == 9
        assert sum(1 for r in TABLE1_ROWS if r[3] == "alt") == 1


class TestReport:
    def test_truth_stub_gives_zero_and_undefined_t(self):
        rep = run_experiment(ExperimentConfig(replications=4), fit=truth_stub)
        assert rep.mean("bayes") == 0.0 and rep.difference == 0.0
        assert rep.t_stat is None and rep.fraction_bayes_better == 0.0
        assert rep.table_row()[-1] == ""

    def test_summary_statistics(self):
        rep = MetricsReport({"covariates": "uniform", "d_x": 1, "n": 100})
        pairs = [(0.10, 0.15), (0.12, 0.11), (0.08, 0.14), (0.11, 0.16)]
        for i, (b, k) in enumerate(pairs):
            rep.replications.append(ReplicationResult(i, i, {"bayes": b, "kernel": k}, {}))
        d = np.array([b - k for b, k in pairs])
        assert rep.difference == pytest.approx(d.mean())
        assert rep.fraction_bayes_better == 0.75
        assert rep.t_stat == pytest.approx(d.mean() / (d.std(ddof=1) / 2))
        row = rep.table_row()
        assert row[:3] == ["U[0,1]", "1", "100"] and row[3] == "0.1025"

    def test_single_estimator_row(self):
        rep = MetricsReport({"covariates": "normal", "d_x": 3, "n": 1000},
                            [ReplicationResult(0, 1, {"bayes": 0.05}, {})])
        row = rep.table_row()
        assert row[0] == "N(0.5,12^-1/2)" and row[4] == "" and row[5] == "" and row[7] == ""

    def test_failure_is_recorded(self):
        def flaky(cfg, index, seed):
            if index == 1:
                raise RuntimeError("diverged")
            return truth_stub(cfg, index, seed)

        with pytest.warns(RuntimeWarning, match="replication 1 failed"):
            rep = run_experiment(ExperimentConfig(replications=3), fit=flaky)
        assert [r.index for r in rep.replications] == [0, 2]
        assert rep.failures[0]["index"] == 1 and "diverged" in rep.failures[0]["error"]
        assert rep.to_dict()["format_version"] == 1

    def test_csv(self):
        rep = run_experiment(ExperimentConfig(replications=2), fit=truth_stub)
        rows = list(csv.reader(io.StringIO(table_csv([rep, rep]))))
        assert tuple(rows[0]) == TABLE_HEADER and len(rows) == 3
        assert rows[1][0] == "U[0,1]"


def test_real_replication_is_reproducible():
    cfg = ExperimentConfig(n=30, replications=1, n_iter=120, burn_in=20, seed=3)
    a = run_experiment(cfg).replications[0]
    b = run_experiment(cfg).replications[0]
    assert a.mae == b.mae and a.bandwidths == b.bandwidths
    assert set(a.mae) == {"bayes", "kernel"} and all(v > 0 for v in a.mae.values())


def test_eval_grid_matches_sample_range():
    data = generate_dgp(ExperimentConfig(n=25, d_x=2), 2)
    grid = EvalGrid.for_sample(data.y, 2)
    assert grid.xs.shape == (9, 2)
    assert grid.ys[0] == data.y.min() and grid.ys[-1] == data.y.max()
