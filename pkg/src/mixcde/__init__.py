"""Conditional density estimation with covariate-gated mixtures of regressions.

The Bayesian estimator samples a mixture with a random number of components
by adaptive Metropolis-within-Gibbs with birth and death moves; a kernel
estimator with cross-validated bandwidths serves as the benchmark.
"""

from .estimators import KernelCDE, MixtureCDE
from .kernel import Bandwidths, kernel_cond_density, lscv_objective, select_bandwidths
from .mcmc import Chain, diagnostics, load_chain, run_chain, save_chain
from .model import (Dataset, MixtureTheta, eval_conditional_density, eval_joint_density,
                    eval_log_likelihood, posterior_predictive)
from .prior import PriorHyper, derive_hyperparameters, log_prior_density, sample_prior

__version__ = "0.1.0"

__all__ = [
    "Bandwidths", "Chain", "Dataset", "KernelCDE", "MixtureCDE", "MixtureTheta", "PriorHyper",
    "derive_hyperparameters", "diagnostics", "eval_conditional_density", "eval_joint_density",
    "eval_log_likelihood", "kernel_cond_density", "load_chain", "log_prior_density",
    "lscv_objective", "posterior_predictive", "run_chain", "sample_prior", "save_chain",
    "select_bandwidths",
]
