"""scikit-learn style wrappers around the mixture sampler and the kernel estimator."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .kernel import kernel_cond_density_grid, select_bandwidths
from .mcmc import run_chain
from .model import Dataset, log_conditional_density_grid, posterior_mean_density, posterior_predictive
from .prior import DEFAULT_M_MAX, derive_hyperparameters


class _ConditionalDensityMixin:
    def _check_X(self, X):
        X = check_array(X, ensure_2d=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, the estimator was fitted with "
                             f"{self.n_features_in_}")
        return X

    def predict_density(self, X, ys):
        """Estimated f(y | x) for each row of ``X`` and each ``y``: shape (len(X), len(ys))."""
        check_is_fitted(self)
        X = self._check_X(X)
        ys = check_array(np.atleast_1d(ys), ensure_2d=False)
        return self._density(X, ys)

    def score(self, X, y):
        """Mean log predictive density of the observed pairs."""
        check_is_fitted(self)
        X, y = check_X_y(X, y, y_numeric=True)
        X = self._check_X(X)
        dens = np.array([self._density(X[i:i + 1], y[i:i + 1])[0, 0] for i in range(len(y))])
        with np.errstate(divide="ignore"):
            return float(np.mean(np.log(dens)))


class MixtureCDE(_ConditionalDensityMixin, BaseEstimator):
    """Bayesian mixture of regressions with covariate-dependent gates.

    Parameters
    ----------
    n_iter, burn_in : int
        Sweeps of the sampler and how many of them to discard.
    c_beta, c_sigma, c_s, a, A_m : float
        Constants generating the data-dependent prior.
    m_max : int
        Largest number of components allowed.
    random_state : int
        Seed of the sampler.

    Attributes
    ----------
    chain_ : Chain
        Retained posterior draws.
    hyper_ : PriorHyper
        Prior hyperparameters derived from the training data.
    """

    def __init__(self, n_iter=5000, burn_in=500, c_beta=100.0, c_sigma=0.1, c_s=10.0, a=15.0,
                 A_m=1.0, m_max=DEFAULT_M_MAX, random_state=0):
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.c_beta = c_beta
        self.c_sigma = c_sigma
        self.c_s = c_s
        self.a = a
        self.A_m = A_m
        self.m_max = m_max
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        data = Dataset(y, X)
        self.hyper_ = derive_hyperparameters(data, self.c_beta, self.c_sigma, self.c_s, self.a, self.A_m)
        self.chain_ = run_chain(data, self.hyper_, self.n_iter, self.burn_in, self.m_max,
                                seed=self.random_state)
        self.n_features_in_ = X.shape[1]
        return self

    def _density(self, X, ys):
        return posterior_mean_density(self.chain_, X, ys)

    def predictive_bands(self, x, ys, quantiles=(0.00005, 0.99995)):
        """Posterior mean density at one point ``x`` with pointwise quantile bands."""
        check_is_fitted(self)
        x = self._check_X(np.atleast_2d(x))
        return posterior_predictive(self.chain_, x[0], ys, quantiles)

    def draw_log_densities(self, X, ys):
        """Per-draw log densities, shape (n_draws, len(X), len(ys))."""
        check_is_fitted(self)
        X = self._check_X(X)
        return np.stack([log_conditional_density_grid(t, X, np.asarray(ys, dtype=float))
                         for t in self.chain_.draws])


class KernelCDE(_ConditionalDensityMixin, BaseEstimator):
    """Gaussian product-kernel conditional density estimator with LSCV bandwidths.

    Attributes
    ----------
    bandwidths_ : Bandwidths
    """

    def __init__(self, restarts=3, method="auto", random_state=0):
        self.restarts = restarts
        self.method = method
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self.data_ = Dataset(y, X)
        self.bandwidths_ = select_bandwidths(self.data_, self.restarts, self.random_state, self.method)
        self.n_features_in_ = X.shape[1]
        return self

    def _density(self, X, ys):
        return kernel_cond_density_grid(self.data_, self.bandwidths_, X, ys)
