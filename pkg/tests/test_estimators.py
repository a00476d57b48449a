import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mixcde import KernelCDE, MixtureCDE
from mixcde.kernel import kernel_cond_density
from mixcde.model import eval_conditional_density
from mixcde.sim import ExperimentConfig, generate_dgp


@pytest.fixture(scope="module")
def xy():
    data = generate_dgp(ExperimentConfig(n=60, d_x=2), 12)
    return data.x, data.y


@pytest.fixture(scope="module")
def fitted_mixture(xy):
    return MixtureCDE(n_iter=150, burn_in=30, random_state=3).fit(*xy)


def test_params_and_clone():
    est = MixtureCDE(n_iter=10, c_s=12.0)
    params = est.get_params()
    assert params["n_iter"] == 10 and params["c_s"] == 12.0 and params["random_state"] == 0
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(burn_in=3)
    assert est.burn_in == 3
    assert KernelCDE(restarts=2).get_params() == {"restarts": 2, "method": "auto", "random_state": 0}


@pytest.mark.parametrize("cls", [MixtureCDE, KernelCDE])
def test_unfitted(cls):
    with pytest.raises(NotFittedError):
        cls().predict_density([[0.5]], [0.0])


def test_mixture_matches_draw_average(fitted_mixture):
    X = np.array([[0.1, 0.5], [0.9, 0.2]])
    ys = np.linspace(-0.5, 1.5, 7)
    dens = fitted_mixture.predict_density(X, ys)
    assert dens.shape == (2, 7) and np.all(dens >= 0)
    ref = np.mean([eval_conditional_density(t, X[1], ys) for t in fitted_mixture.chain_.draws], axis=0)
    np.testing.assert_allclose(dens[1], ref, rtol=1e-10)
    assert len(fitted_mixture.chain_) == 120 and fitted_mixture.n_features_in_ == 2


def test_mixture_bands_and_draws(fitted_mixture):
    ys = np.linspace(0, 1, 5)
    bands = fitted_mixture.predictive_bands([0.5, 0.5], ys, quantiles=(0.1, 0.9))
    assert np.all(bands.quantiles[0.1] <= bands.quantiles[0.9])
    logs = fitted_mixture.draw_log_densities([[0.5, 0.5]], ys)
    assert logs.shape == (120, 1, 5)
    np.testing.assert_allclose(np.exp(logs).mean(axis=0)[0], bands.mean, rtol=1e-10)


def test_feature_mismatch(fitted_mixture):
    with pytest.raises(ValueError, match="features"):
        fitted_mixture.predict_density([[0.5]], [0.0])


def test_kernel_estimator(xy):
    est = KernelCDE(restarts=1, random_state=1).fit(*xy)
    X = np.array([[0.5, 0.5]])
    ys = np.linspace(-0.5, 1.5, 9)
    np.testing.assert_allclose(est.predict_density(X, ys)[0],
                               kernel_cond_density(est.data_, est.bandwidths_, X[0], ys), rtol=1e-12)
    assert np.isfinite(est.score(*xy))


def test_score_is_mean_log_density(fitted_mixture, xy):
    X, y = xy
    dens = np.array([fitted_mixture.predict_density(X[i:i + 1], y[i:i + 1])[0, 0] for i in range(5)])
    assert fitted_mixture.score(X[:5], y[:5]) == pytest.approx(np.log(dens).mean(), rel=1e-12)


def test_same_seed_same_fit(xy):
    a = MixtureCDE(n_iter=40, burn_in=5, random_state=8).fit(*xy)
    b = MixtureCDE(n_iter=40, burn_in=5, random_state=8).fit(*xy)
    assert a.chain_.equals(b.chain_)


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        MixtureCDE(n_iter=20, burn_in=2).fit([[0.1], [np.nan]], [0.0, 1.0])
    with pytest.raises(ValueError):
        KernelCDE().fit([[0.1], [0.2]], [0.0])
