"""Simulated data from a two-regime conditional density and Monte Carlo comparisons."""

import csv
import io
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .kernel import kernel_cond_density_grid, select_bandwidths
from .mcmc import run_chain
from .metrics import GRID_LEVELS, N_Y_GRID, EvalGrid, mae
from .model import Dataset, posterior_mean_density
from .prior import PRIOR_SETS, derive_hyperparameters

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
COVARIATE_LAWS = ("uniform", "normal")
ESTIMATORS = ("bayes", "kernel")
NORMAL_SD = 12.0 ** -0.5
TABLE_HEADER = ("g0", "d_x", "n", "Bayes", "Kernel", "B-K", "%(B<K)", "t-stat")
G0_LABELS = {"uniform": "U[0,1]", "normal": "N(0.5,12^-1/2)"}

# (covariate law, d_x, n, prior set) for every row of the published comparison table
TABLE1_ROWS = (
    ("uniform", 1, 100, "default"),
    ("uniform", 1, 10_000, "default"),
    ("uniform", 1, 1000, "default"),
    ("uniform", 3, 1000, "default"),
    ("uniform", 5, 1000, "default"),
    ("normal", 1, 1000, "default"),
    ("normal", 3, 1000, "default"),
    ("normal", 5, 1000, "default"),
    ("uniform", 1, 1000, "alt"),
)


def f0_true(y, x1):
    """True conditional density; depends on the first covariate only.

    The first-regime weight ``exp(-2 x1)`` is capped at 1 so the density stays
    valid for negative ``x1``, which normal covariates can produce.
    """
    y = np.asarray(y, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    w = np.minimum(np.exp(-2.0 * x1), 1.0)
    a = np.exp(-0.5 * ((y - x1) / 0.1) ** 2) / (0.1 * math.sqrt(2 * math.pi))
    b = np.exp(-0.5 * ((y - x1 ** 4) / 0.2) ** 2) / (0.2 * math.sqrt(2 * math.pi))
    return w * a + (1.0 - w) * b


def true_density_evaluator(x, ys):
    return f0_true(ys, np.atleast_1d(x)[0])


@dataclass
class ExperimentConfig:
    """Settings of one Monte Carlo comparison.

    ``prior`` names a constant set ("default" or "alt") or is a dict of
    ``c_beta, c_sigma, c_s, a, A_m``.
    """

    n: int = 100
    d_x: int = 1
    covariates: str = "uniform"
    replications: int = 20
    seed: int = 0
    estimators: tuple = ESTIMATORS
    prior: object = "default"
    n_iter: int = 5000
    burn_in: int = 500
    m_max: int = 50
    kernel_restarts: int = 3
    n_y: int = N_Y_GRID
    grid_levels: tuple = GRID_LEVELS
    n_jobs: int = 1

    def __post_init__(self):
        if self.n < 10 or self.d_x < 1 or self.replications < 1:
            raise ValueError("need n >= 10, d_x >= 1 and at least one replication")
        if self.covariates not in COVARIATE_LAWS:
            raise ValueError(f"covariates must be one of {COVARIATE_LAWS}")
        self.estimators = tuple(self.estimators)
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown or not self.estimators:
            raise ValueError(f"unknown estimators {sorted(unknown)}")
        if isinstance(self.prior, str) and self.prior not in PRIOR_SETS:
            raise ValueError(f"prior must be one of {sorted(PRIOR_SETS)} or a dict")
        self.grid_levels = tuple(self.grid_levels)

    @property
    def prior_constants(self):
        return dict(PRIOR_SETS[self.prior]) if isinstance(self.prior, str) else dict(self.prior)

    def replicate_seeds(self):
        children = np.random.SeedSequence(self.seed).spawn(self.replications)
        return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]

    def to_dict(self):
        d = asdict(self)
        d["estimators"] = list(self.estimators)
        d["grid_levels"] = list(self.grid_levels)
        return d


def generate_dgp(cfg, replicate_seed):
    """Draw a dataset of size ``cfg.n``.

    The first covariate and the response are drawn before the irrelevant
    covariates, so equal seeds give the same (y, x1) for every ``d_x``.
    """
    rng = np.random.default_rng(replicate_seed)
    n = cfg.n

    def covariate(size):
        if cfg.covariates == "uniform":
            return rng.uniform(0.0, 1.0, size=size)
        return rng.normal(0.5, NORMAL_SD, size=size)

    x1 = covariate(n)
    first = rng.uniform(size=n) < np.exp(-2.0 * x1)
    y = np.where(first, rng.normal(x1, 0.1), rng.normal(x1 ** 4, 0.2))
    rest = covariate((n, cfg.d_x - 1))
    x = np.column_stack([x1, rest])
    return Dataset(y, x, {"seed": int(replicate_seed), "dgp": "two-regime", "covariates": cfg.covariates})


@dataclass
class ReplicationResult:
    index: int
    seed: int
    mae: dict
    runtime: dict
    bandwidths: dict = None
    m_mean: float = math.nan


@dataclass
class MetricsReport:
    config: dict
    replications: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def maes(self, est):
        return np.array([r.mae[est] for r in self.replications if est in r.mae])

    def mean(self, est):
        v = self.maes(est)
        return float(v.mean()) if len(v) else math.nan

    def _diffs(self):
        return np.array([r.mae["bayes"] - r.mae["kernel"] for r in self.replications
                         if "bayes" in r.mae and "kernel" in r.mae])

    @property
    def difference(self):
        d = self._diffs()
        return float(d.mean()) if len(d) else math.nan

    @property
    def fraction_bayes_better(self):
        d = self._diffs()
        return float(np.mean(d < 0)) if len(d) else math.nan

    @property
    def t_stat(self):
        """Paired t-statistic of Bayes minus kernel; None when it is undefined."""
        d = self._diffs()
        if len(d) < 2:
            return None
        sd = float(d.std(ddof=1))
        if sd == 0.0:
            return None
        return float(d.mean() / (sd / math.sqrt(len(d))))

    def table_row(self):
        c = self.config

        def fmt(v, spec):
            return "" if v is None or (isinstance(v, float) and math.isnan(v)) else format(v, spec)

        return [G0_LABELS[c["covariates"]], str(c["d_x"]), str(c["n"]),
                fmt(self.mean("bayes"), ".4f"), fmt(self.mean("kernel"), ".4f"),
                fmt(self.difference, ".4f"), fmt(self.fraction_bayes_better, ".2f"),
                fmt(self.t_stat, ".2f")]

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "config": self.config,
            "summary": {
                "bayes_mean": self.mean("bayes"), "kernel_mean": self.mean("kernel"),
                "difference": self.difference, "fraction_bayes_better": self.fraction_bayes_better,
                "t_stat": self.t_stat, "n_replications": len(self.replications),
            },
            "replications": [asdict(r) for r in self.replications],
            "failures": self.failures,
        }


def table_csv(reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_HEADER)
    for r in reports:
        w.writerow(r.table_row())
    return buf.getvalue()


def _fit_replication(cfg, index, seed):
    data = generate_dgp(cfg, seed)
    grid = EvalGrid.for_sample(data.y, cfg.d_x, cfg.n_y, cfg.grid_levels)
    truth = np.stack([f0_true(grid.ys, x[0]) for x in grid.xs])
    res = ReplicationResult(index, seed, {}, {})
    ss = np.random.SeedSequence(seed).spawn(2)
    if "bayes" in cfg.estimators:
        t = time.perf_counter()
        hyper = derive_hyperparameters(data, **cfg.prior_constants)
        chain = run_chain(data, hyper, cfg.n_iter, cfg.burn_in, cfg.m_max,
                          seed=int(ss[0].generate_state(1)[0]))
        est = posterior_mean_density(chain, grid.xs, grid.ys)
        res.mae["bayes"] = mae(est, truth, grid)
        res.m_mean = float(chain.m_trace.mean())
        res.runtime["bayes"] = time.perf_counter() - t
    if "kernel" in cfg.estimators:
        t = time.perf_counter()
        bw = select_bandwidths(data, cfg.kernel_restarts, seed=int(ss[1].generate_state(1)[0]))
        est = kernel_cond_density_grid(data, bw, grid.xs, grid.ys)
        res.mae["kernel"] = mae(est, truth, grid)
        res.bandwidths = bw.to_dict()
        res.runtime["kernel"] = time.perf_counter() - t
    return res


def _safe_replication(args):
    cfg, index, seed = args
    try:
        return _fit_replication(cfg, index, seed), None
    except Exception as exc:
        return None, {"index": index, "seed": seed, "error": f"{type(exc).__name__}: {exc}"}


def run_experiment(cfg, fit=None):
    """Run every replication and collect MAEs into a :class:`MetricsReport`.

    ``fit(cfg, index, seed) -> ReplicationResult`` replaces the default
    estimator fitting (used to plug in stubs). Failed replications are
    logged, recorded in ``failures`` and excluded from the summary.
    """
    seeds = cfg.replicate_seeds()
    jobs = [(cfg, i, s) for i, s in enumerate(seeds)]
    if fit is not None:
        def runner(args):
            try:
                return fit(*args), None
            except Exception as exc:
                return None, {"index": args[1], "seed": args[2], "error": f"{type(exc).__name__}: {exc}"}
        outcomes = [runner(j) for j in jobs]
    elif cfg.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.n_jobs) as pool:
            outcomes = list(pool.map(_safe_replication, jobs))
    else:
        outcomes = [_safe_replication(j) for j in jobs]
    report = MetricsReport(cfg.to_dict())
    for result, failure in outcomes:
        if failure is not None:
            logger.warning("replication %d failed: %s", failure["index"], failure["error"])
            warnings.warn(f"replication {failure['index']} failed: {failure['error']}", RuntimeWarning,
                          stacklevel=2)
            report.failures.append(failure)
        else:
            report.replications.append(result)
    report.replications.sort(key=lambda r: r.index)
    return report
