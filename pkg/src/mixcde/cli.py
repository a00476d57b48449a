"""Command-line entry point: ``mixcde {simulate,fit,compare,theory-check,rate-study}``.

Every subcommand accepts ``--config FILE`` (TOML). Its top-level keys use
the long flag names with dashes replaced by underscores (``n``, ``dx``,
``replications``, ...); flags given on the command line win over the file.

Exit codes: 0 success, 1 a verification check failed, 2 usage error,
3 runtime failure.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
import tomli

from . import theory
from .exceptions import MixcdeError
from .mcmc import diagnostics, run_chain, save_chain
from .metrics import GRID_LEVELS, N_Y_GRID, EvalGrid
from .model import Dataset, posterior_predictive
from .prior import (PRIOR_SETS, PriorConditionConstants, audit_sigma_conditions, beta_tail_check,
                    derive_hyperparameters, gamma_reciprocal_sampler)
from .sim import TABLE1_ROWS, ExperimentConfig, generate_dgp, run_experiment, table_csv

FORMAT_VERSION = 1
EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3
DEFAULT_QUANTILES = (0.00005, 0.99995)

logger = logging.getLogger("mixcde")


class UsageError(Exception):
    pass


class VerificationFailed(Exception):
    def __init__(self, report_path):
        super().__init__(f"verification failed, see {report_path}")


def _seed(text):
    try:
        v = int(text)
    except (TypeError, ValueError):
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except (TypeError, ValueError):
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _common(parser):
    parser.add_argument("--config", type=Path, help="TOML file with default values for the flags")
    parser.add_argument("--seed", type=_seed, help="master seed (default 0)")
    parser.add_argument("--out", type=Path, help="output directory (default: current directory)")
    parser.add_argument("-v", "--verbose", action="count", default=0)


def _data_flags(parser):
    parser.add_argument("--n", type=_positive_int, help="sample size")
    parser.add_argument("--dx", type=_positive_int, help="number of covariates")
    parser.add_argument("--covariates", choices=("uniform", "normal"))


def _chain_flags(parser):
    parser.add_argument("--prior", choices=sorted(PRIOR_SETS))
    parser.add_argument("--iters", type=_positive_int, help="MCMC iterations (default 5000)")
    parser.add_argument("--burnin", type=int, help="burn-in iterations (default 500)")


def build_parser():
    p = argparse.ArgumentParser(prog="mixcde", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a dataset from the two-regime simulation design")
    _common(s)
    _data_flags(s)

    f = sub.add_parser("fit", help="run the sampler and write the chain and predictive curves")
    _common(f)
    _data_flags(f)
    _chain_flags(f)
    f.add_argument("--data", type=Path, help="CSV with columns y, x1..xd (simulated if omitted)")
    f.add_argument("--quantiles", type=float, nargs="+", help="predictive band levels")
    f.add_argument("--m-max", type=_positive_int)

    c = sub.add_parser("compare", help="Monte Carlo comparison of the mixture and kernel estimators")
    _common(c)
    _data_flags(c)
    _chain_flags(c)
    c.add_argument("--replications", type=_positive_int, help="datasets per row (default 20)")
    c.add_argument("--estimators", nargs="+", choices=("bayes", "kernel"))
    c.add_argument("--jobs", type=_positive_int, help="worker processes")
    c.add_argument("--full-table", action="store_true",
                   help="run every row of the published comparison table (50 replications by default)")

    t = sub.add_parser("theory-check", help="numerical checks of the inequalities behind the theory")
    _common(t)
    t.add_argument("--instances", type=_positive_int, help="random instances per dimension (default 50)")
    t.add_argument("--mc", type=_positive_int, help="Monte Carlo draws per tail check (default 100000)")
    t.add_argument("--inject-bug", action="store_true",
                   help="negate the lemma inequality to confirm that failures are detected")

    r = sub.add_parser("rate-study", help="regress log mean MAE on log n")
    _common(r)
    _data_flags(r)
    _chain_flags(r)
    r.add_argument("--ns", type=_positive_int, nargs="+", help="sample sizes (default 100 1000 10000)")
    r.add_argument("--replications", type=_positive_int, help="datasets per sample size (default 5)")
    r.add_argument("--maes", type=Path,
                   help="CSV with columns n, mae; regress these instead of fitting")
    return p


def _merge_config(args):
    """Fill flags left unset from the TOML config file."""
    if args.config is None:
        return args
    try:
        with open(args.config, "rb") as fh:
            cfg = tomli.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from None
    except tomli.TOMLDecodeError as exc:
        raise UsageError(f"invalid TOML in {args.config}: {exc}") from None
    known = vars(args)
    for key, value in cfg.items():
        attr = key.replace("-", "_")
        if attr not in known or attr in ("config", "command"):
            raise UsageError(f"unknown key {key!r} in {args.config}")
        if known[attr] is None or known[attr] is False:
            setattr(args, attr, Path(value) if attr in ("out", "data", "maes") else value)
    return args


def _out_dir(args):
    out = args.out or Path(".")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable")
    return out


def _or(value, default):
    return default if value is None else value


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True, default=_jsonable)
        fh.write("\n")


def _experiment(args, n=None, replications=None, estimators=None):
    try:
        return _build_experiment(args, n, replications, estimators)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _build_experiment(args, n, replications, estimators):
    def opt(name, default):
        return _or(getattr(args, name, None), default)

    return ExperimentConfig(
        n=_or(n, opt("n", 100)), d_x=opt("dx", 1), covariates=opt("covariates", "uniform"),
        replications=_or(replications, 20), seed=opt("seed", 0),
        estimators=tuple(_or(estimators, ("bayes", "kernel"))), prior=opt("prior", "default"),
        n_iter=opt("iters", 5000), burn_in=opt("burnin", 500),
    )


def _write_dataset_csv(path, data):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y"] + [f"x{k + 1}" for k in range(data.d_x)])
        for yi, xi in zip(data.y, data.x):
            w.writerow([repr(float(yi))] + [repr(float(v)) for v in xi])


def _read_dataset_csv(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise UsageError(f"cannot read data file {path}: {exc.strerror}") from None
    if not rows or rows[0][:1] != ["y"] or len(rows[0]) < 2:
        raise UsageError(f"{path}: expected a header 'y,x1,...'")
    try:
        arr = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    if arr.ndim != 2 or arr.shape[1] != len(rows[0]):
        raise UsageError(f"{path}: ragged rows")
    return Dataset(arr[:, 0], arr[:, 1:], {"source": str(path)})


def cmd_simulate(args):
    out = _out_dir(args)
    cfg = _experiment(args, replications=1)
    data = generate_dgp(cfg, cfg.seed)
    _write_dataset_csv(out / "data.csv", data)
    _write_json(out / "data.json", {"format_version": FORMAT_VERSION, "seed": cfg.seed,
                                    "n": cfg.n, "d_x": cfg.d_x, "covariates": cfg.covariates})
    logger.info("wrote %d rows to %s", data.n, out / "data.csv")
    return EXIT_OK


def cmd_fit(args):
    out = _out_dir(args)
    if args.data is not None:
        data = _read_dataset_csv(args.data)
    else:
        data = generate_dgp(_experiment(args, replications=1), _or(args.seed, 0))
    n_iter, burn_in = _or(args.iters, 5000), _or(args.burnin, 500)
    if not 0 <= burn_in < n_iter:
        raise UsageError(f"need 0 <= burnin < iters, got {burn_in} and {n_iter}")
    qs = tuple(_or(args.quantiles, DEFAULT_QUANTILES))
    if any(not 0.0 < q < 1.0 for q in qs):
        raise UsageError("quantiles must lie strictly between 0 and 1")
    prior = PRIOR_SETS[_or(args.prior, "default")]
    hyper = derive_hyperparameters(data, **prior)
    chain = run_chain(data, hyper, n_iter, burn_in, _or(args.m_max, 50), seed=_or(args.seed, 0))
    save_chain(chain, out / "chain.jsonl")
    grid = EvalGrid.for_sample(data.y, data.d_x, N_Y_GRID, GRID_LEVELS)
    with open(out / "predictive.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{k + 1}" for k in range(data.d_x)] + ["y", "mean"] + [f"q{q:g}" for q in qs])
        for x in grid.xs:
            summ = posterior_predictive(chain, x, grid.ys, qs)
            for i, yv in enumerate(grid.ys):
                w.writerow([f"{v:g}" for v in x] + [repr(float(yv)), repr(float(summ.mean[i]))]
                           + [repr(float(summ.quantiles[float(q)][i])) for q in qs])
    _write_json(out / "fit.json", {"format_version": FORMAT_VERSION, "prior": hyper.to_dict(),
                                   "diagnostics": diagnostics(chain), "config": chain.config})
    logger.info("kept %d draws", len(chain))
    return EXIT_OK


def cmd_compare(args):
    out = _out_dir(args)
    if args.full_table:
        reports = []
        for law, d_x, n, prior in TABLE1_ROWS:
            cfg = ExperimentConfig(n=n, d_x=d_x, covariates=law, replications=_or(args.replications, 50),
                                   seed=_or(args.seed, 0), prior=prior, n_iter=_or(args.iters, 5000),
                                   burn_in=_or(args.burnin, 500), n_jobs=_or(args.jobs, 1))
            logger.info("row %s d_x=%d n=%d prior=%s", law, d_x, n, prior)
            reports.append(run_experiment(cfg))
    else:
        cfg = _experiment(args, replications=args.replications, estimators=args.estimators)
        cfg.n_jobs = _or(args.jobs, 1)
        reports = [run_experiment(cfg)]
    with open(out / "table.csv", "w", newline="") as fh:
        fh.write(table_csv(reports))
    _write_json(out / "report.json", {"format_version": FORMAT_VERSION,
                                      "rows": [r.to_dict() for r in reports]})
    for r in reports:
        if r.failures:
            logger.warning("%d replications failed", len(r.failures))
    return EXIT_OK


def _lemma_suite(instances, seed, inject_bug):
    rng = np.random.default_rng(seed)
    worst, failed, total = math.inf, 0, 0
    for d_x in (1, 2):
        for k in range(instances):
            res = theory.check_lemma_a1(**theory.random_lemma_instance(rng, d_x, uniform=k % 2 == 1))
            ok = (res.lhs > res.rhs) if inject_bug else res.passed
            margin = (res.lhs - res.rhs) if inject_bug else res.margin
            worst = min(worst, margin)
            failed += not ok
            total += 1
    return {"name": "lemma_conditional_hellinger", "instances": total, "failures": failed,
            "worst_margin": worst, "passed": failed == 0}


def _beta_tail_suite(n_mc, seed):
    rng = np.random.default_rng(seed)
    cells, failed, worst = [], 0, math.inf
    for a in (1.0, 5.0, 15.0):
        for m in (2, 5, 10):
            for floor in (0.01, 0.1, 0.5):
                r = beta_tail_check(a, m, floor, n_mc, rng)
                worst = min(worst, r.bound + 3 * r.mc_se - r.mc_estimate)
                failed += not r.passed
                cells.append({"a": a, "m": m, "alpha_floor": floor, "estimate": r.mc_estimate,
                              "se": r.mc_se, "bound": r.bound, "passed": r.passed})
    return {"name": "dirichlet_weight_tail", "instances": len(cells), "failures": failed,
            "worst_margin": worst, "passed": failed == 0, "cells": cells}


def _covering_suite(seed):
    rng = np.random.default_rng(seed)
    base = theory.sieve_covering_bound(theory.SieveSpec(1, 1.0, math.e, 1.0, 0.5, 0.5))
    worst_rel = 0.0
    for _ in range(20):
        s = theory.SieveSpec(H=int(rng.integers(1, 5)), sigma_lo=rng.uniform(0.2, 1.0),
                             sigma_hi=rng.uniform(1.0, 10.0), mu_bar=rng.uniform(0.5, 5.0),
                             alpha_floor=rng.uniform(0.01, 0.5), eps=rng.uniform(0.05, 0.95),
                             d_y=1, d_x=int(rng.integers(1, 4)))
        b = theory.sieve_covering_bound(s)
        worst_rel = max(worst_rel, abs(math.log(b.bound) - b.log_bound) / max(1.0, abs(b.log_bound)))
    ok = base.bound == 297984 and worst_rel <= 1e-10
    return {"name": "sieve_covering_number", "instances": 21, "failures": int(not ok),
            "worst_margin": 1e-10 - worst_rel, "passed": ok, "reference_bound": base.bound}


def _rate_suite():
    r = theory.contraction_rate(theory.RateParams(1.0, 2, 1.0, 1.0, 1.0, 1000))
    ok = abs(r.s - 3.0) < 1e-12 and abs(r.t0 - 1.75) < 1e-12 and r.t_min >= r.t0
    return {"name": "contraction_rate_exponents", "instances": 1, "failures": int(not ok),
            "worst_margin": 0.0, "passed": ok, "t0": r.t0}


def _sigma_audit(n_mc, seed):
    """Report-only audit of the Gamma prior on 1/sigma (no pass/fail gate)."""
    rep = audit_sigma_conditions(PriorConditionConstants(), gamma_reciprocal_sampler(1.0, 1.0),
                                 s_grid=(1.0, 10.0, 100.0), t_grid=(0.1, 0.5), n_mc=n_mc, rng=seed)
    return {"name": "scale_prior_conditions_audit", "gated": False, "summary": rep.summary(),
            "points": [vars(p) for p in rep.points]}


def cmd_theory_check(args):
    out = _out_dir(args)
    seed = _or(args.seed, 0)
    n_mc = _or(args.mc, 100_000)
    checks = [
        _lemma_suite(_or(args.instances, 50), seed, args.inject_bug),
        _beta_tail_suite(n_mc, seed),
        _covering_suite(seed),
        _rate_suite(),
    ]
    report = {"format_version": FORMAT_VERSION, "inject_bug": bool(args.inject_bug), "checks": checks,
              "audits": [_sigma_audit(n_mc, seed)], "passed": all(c["passed"] for c in checks)}
    path = out / "theory_report.json"
    _write_json(path, report)
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']} ({c['instances']} instances, "
              f"{c['failures']} failures)")
    if not report["passed"]:
        raise VerificationFailed(path)
    return EXIT_OK


def _read_maes(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return [(int(r["n"]), float(r["mae"])) for r in rows]
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{path}: expected columns n, mae ({exc})") from None


def cmd_rate_study(args):
    out = _out_dir(args)
    if args.maes is not None:
        results = _read_maes(args.maes)
    else:
        ns = _or(args.ns, [100, 1000, 10_000])
        if len(set(ns)) < 3:
            raise UsageError(f"need at least 3 distinct sample sizes, got {len(set(ns))}")
        results = []
        for n in ns:
            cfg = _experiment(args, n=n, replications=_or(args.replications, 5), estimators=("bayes",))
            rep = run_experiment(cfg)
            results.append((n, rep.maes("bayes").tolist()))
    try:
        study = theory.empirical_rate_study(results, seed=_or(args.seed, 0))
    except MixcdeError as exc:
        raise UsageError(str(exc)) from None
    with open(out / "rate_points.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["log_n", "log_mae"])
        for n, m in zip(study.ns, study.means):
            w.writerow([repr(float(np.log(n))), repr(float(np.log(m)))])
    _write_json(out / "rate_study.json", {"format_version": FORMAT_VERSION, "slope": study.slope,
                                          "intercept": study.intercept, "ci": list(study.ci),
                                          "ns": study.ns.tolist(), "mean_mae": study.means.tolist()})
    print(f"slope {study.slope:.4f} (95% CI {study.ci[0]:.4f}, {study.ci[1]:.4f})")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "compare": cmd_compare,
            "theory-check": cmd_theory_check, "rate-study": cmd_rate_study}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _merge_config(args)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"mixcde: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VerificationFailed as exc:
        print(f"mixcde: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (MixcdeError, ValueError) as exc:
        print(f"mixcde: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"mixcde: I/O error on {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception:
        logger.exception("unexpected failure")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
