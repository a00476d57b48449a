"""Posterior sampling for the mixture model with a variable number of components.

One sweep of :func:`run_chain` performs, in order,

1. an allocation-augmented Gibbs update of every component's regression
   coefficients and local response scale (optional, on by default),
2. per-component random-walk Metropolis updates of ``beta``, ``log s_y``
   and the gate block ``(mu_x, log s_x)``,
3. a logit random walk on each mixing weight with the others rescaled,
4. a joint random walk on the log global scales,
5. one birth or death move for ``m``.

Step sizes adapt toward a 0.30 acceptance rate during burn-in and are frozen
afterwards.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import logsumexp

from . import prior as pr
from ._kernels import lse_sum, lse_sum2, sample_allocations
from .exceptions import ChainFormatError, InvalidParameterError, SamplerInitError, UnsupportedVersionError
from .model import LOG_2PI, MixtureTheta

CHAIN_FORMAT = "mixcde-chain"
CHAIN_VERSION = 1
TARGET_ACCEPT = 0.30
ADAPTED_BLOCKS = ("beta", "local_y", "gate", "weights", "globals")
MOVES = ADAPTED_BLOCKS + ("birth", "death")
INIT_M = 5
MAX_INIT_ATTEMPTS = 100


@dataclass(eq=False)
class Chain:
    """Post-burn-in draws with the run configuration and sampler statistics."""

    draws: list
    logposts: np.ndarray
    config: dict
    accepted: dict
    attempted: dict
    step_sizes: dict = field(default_factory=dict)
    step_history: np.ndarray = field(default_factory=lambda: np.zeros((0, len(ADAPTED_BLOCKS))))

    @property
    def m_trace(self):
        return np.array([t.m for t in self.draws], dtype=int)

    def __len__(self):
        return len(self.draws)

    def equals(self, other):
        return (len(self) == len(other)
                and all(a.equals(b) for a, b in zip(self.draws, other.draws))
                and np.array_equal(self.logposts, other.logposts)
                and self.config == other.config
                and self.accepted == other.accepted
                and self.attempted == other.attempted
                and self.step_sizes == other.step_sizes
                and np.array_equal(self.step_history, other.step_history))


def _softplus(t):
    return max(t, 0.0) + math.log1p(math.exp(-abs(t)))


class _Sampler:
    def __init__(self, data, hyper, m_max, rng, gibbs_response=True, fix_m=None):
        if data.d_x != hyper.d_x:
            raise InvalidParameterError("dataset and prior disagree on d_x")
        self.y = np.ascontiguousarray(data.y)
        self.x = np.ascontiguousarray(data.x)
        self.X1 = np.ascontiguousarray(data.design)
        self.n = data.n
        self.d = data.d_x
        self.hyper = hyper
        self.m_max = m_max
        self.rng = rng
        self.gibbs_response = gibbs_response
        self.fix_m = fix_m
        self.Lb, _ = hyper._factor("beta_prec")
        self.Lm, _ = hyper._factor("mu_prec")
        self.Hb = hyper.beta_prec
        self.Hb_mean = hyper.beta_prec @ hyper.beta_mean
        self.base = {
            "local_y": 1.0 / math.sqrt(hyper.sy_shape),
            "gate_sx": 1.0 / np.sqrt(hyper.sx_shape),
            "globals": np.minimum(1.0, 1.0 / np.sqrt(np.concatenate(
                [[hyper.sigy_shape], hyper.sigx_shape]))),
        }
        self.log_step = {b: math.log(0.5) for b in ADAPTED_BLOCKS}
        self.acc = {k: 0 for k in MOVES}
        self.att = {k: 0 for k in MOVES}
        self.adapting = True
        self.t = 0

    # -- state ----------------------------------------------------------------

    def set_state(self, theta):
        self.m = theta.m
        with np.errstate(divide="ignore"):
            self.lw = np.log(np.array(theta.weights))
        self.beta = np.array(theta.beta)
        self.mu = np.array(theta.mu_x)
        self.sy = np.array(theta.s_y)
        self.sx = np.array(theta.s_x)
        self.sigy = float(theta.sigma_y)
        self.sigx = np.array(theta.sigma_x)
        self.G = self._gate_matrix(self.mu, self.sx, self.sigx)
        self.D = self._resp_matrix(self.beta, self.sy, self.sigy)
        self.Sg = lse_sum(self.lw, self.G)
        self.Sj = lse_sum2(self.lw, self.G, self.D)
        h = self.hyper
        self.lpb = pr.log_prior_beta(h, self.beta)
        self.lpmu = pr.log_prior_mu(h, self.mu)
        self.lpsy = pr.log_prior_local_y(h, self.sy)
        self.lpsx = pr.log_prior_local_x(h, self.sx)
        self.lpg = pr.log_prior_global(h, self.sigy, self.sigx)

    @property
    def loglik(self):
        return self.Sj - self.Sg

    def _lp_mw(self, m, lw):
        lp = pr.log_m_prior(m, self.hyper.A_m, self.m_max)
        if m > 1:
            c = self.hyper.a / m
            lp += math.lgamma(self.hyper.a) - m * math.lgamma(c) + (c - 1.0) * float(np.sum(lw))
        return lp

    def logprior(self):
        return (self._lp_mw(self.m, self.lw) + float(np.sum(self.lpb + self.lpmu + self.lpsy + self.lpsx))
                + self.lpg)

    def logpost(self):
        return self.loglik + self.logprior()

    def theta(self):
        w = np.exp(self.lw - logsumexp(self.lw))
        w /= w.sum()
        return MixtureTheta(w, self.beta.copy(), self.mu.copy(), self.sy.copy(), self.sx.copy(),
                            self.sigy, self.sigx.copy())

    # -- rows -------------------------------------------------------------------

    def _gate_row(self, mu_j, sx_j, sigx):
        z = (self.x - mu_j) / (sigx * sx_j)
        return -0.5 * np.sum(z * z, axis=1)

    def _resp_row(self, beta_j, sy_j, sigy):
        sc = sigy * sy_j
        r = (self.y - self.X1 @ beta_j) / sc
        return -0.5 * r * r - math.log(sc) - 0.5 * LOG_2PI

    def _gate_matrix(self, mu, sx, sigx):
        z = (self.x[None, :, :] - mu[:, None, :]) / (sigx * sx)[:, None, :]
        return np.ascontiguousarray(-0.5 * np.sum(z * z, axis=2))

    def _resp_matrix(self, beta, sy, sigy):
        sc = sigy * sy
        r = (self.y[None, :] - beta @ self.X1.T) / sc[:, None]
        with np.errstate(over="ignore"):
            return np.ascontiguousarray(-0.5 * r * r - np.log(sc)[:, None] - 0.5 * LOG_2PI)

    # -- adaptation ---------------------------------------------------------------

    def _step(self, block):
        return math.exp(self.log_step[block])

    def _record(self, move, accepted):
        self.att[move] += 1
        self.acc[move] += int(accepted)
        if self.adapting and move in self.log_step:
            gamma = (self.t + 1.0) ** -0.6
            v = self.log_step[move] + gamma * (float(accepted) - TARGET_ACCEPT)
            self.log_step[move] = min(3.0, max(-12.0, v))

    def _accept(self, log_ratio):
        return math.isfinite(log_ratio) and math.log(self.rng.random()) < log_ratio

    # -- moves ----------------------------------------------------------------------

    def gibbs_response_update(self):
        h = self.hyper
        if self.n:
            z = sample_allocations(self.lw, self.G, self.D, self.rng.random(self.n))
            order = np.argsort(z, kind="stable")
            bounds = np.concatenate([[0], np.cumsum(np.bincount(z, minlength=self.m))])
        else:
            order = np.zeros(0, dtype=int)
            bounds = np.zeros(self.m + 1, dtype=int)
        for j in range(self.m):
            idx = order[bounds[j]:bounds[j + 1]]
            Xj, yj = self.X1[idx], self.y[idx]
            v = (self.sigy * self.sy[j]) ** 2
            P = self.Hb + Xj.T @ Xj / v
            L = np.linalg.cholesky(P)
            mean = cho_solve((L, True), self.Hb_mean + Xj.T @ yj / v)
            self.beta[j] = mean + solve_triangular(L.T, self.rng.standard_normal(self.d + 1), lower=False)
            resid = yj - Xj @ self.beta[j]
            q = float(resid @ resid)
            prec = self.rng.gamma(h.sy_shape + 0.5 * len(idx),
                                  1.0 / (h.sy_rate + 0.5 * q / self.sigy ** 2))
            self.sy[j] = prec ** -0.5
        self.D = self._resp_matrix(self.beta, self.sy, self.sigy)
        self.Sj = lse_sum2(self.lw, self.G, self.D)
        self.lpb = pr.log_prior_beta(h, self.beta)
        self.lpsy = pr.log_prior_local_y(h, self.sy)

    def _try_resp_row(self, j, beta_j, sy_j, dlp, move):
        old = self.D[j].copy()
        self.D[j] = self._resp_row(beta_j, sy_j, self.sigy)
        sj = lse_sum2(self.lw, self.G, self.D)
        ok = self._accept(sj - self.Sj + dlp)
        if ok:
            self.Sj = sj
        else:
            self.D[j] = old
        self._record(move, ok)
        return ok

    def rw_beta(self, j):
        prop = self.beta[j] + self._step("beta") * (self.Lb @ self.rng.standard_normal(self.d + 1))
        lp = float(pr.log_prior_beta(self.hyper, prop)[0])
        if self._try_resp_row(j, prop, self.sy[j], lp - self.lpb[j], "beta"):
            self.beta[j] = prop
            self.lpb[j] = lp

    def rw_local_y(self, j):
        dl = self._step("local_y") * self.base["local_y"] * self.rng.standard_normal()
        prop = self.sy[j] * math.exp(dl)
        lp = float(pr.log_prior_local_y(self.hyper, prop))
        if self._try_resp_row(j, self.beta[j], prop, lp - self.lpsy[j] + dl, "local_y"):
            self.sy[j] = prop
            self.lpsy[j] = lp

    def rw_gate(self, j):
        step = self._step("gate")
        mu = self.mu[j] + step * (self.Lm @ self.rng.standard_normal(self.d))
        dl = step * self.base["gate_sx"] * self.rng.standard_normal(self.d)
        sx = self.sx[j] * np.exp(dl)
        lpmu = float(pr.log_prior_mu(self.hyper, mu)[0])
        lpsx = float(pr.log_prior_local_x(self.hyper, sx)[0])
        old = self.G[j].copy()
        self.G[j] = self._gate_row(mu, sx, self.sigx)
        sg = lse_sum(self.lw, self.G)
        sj = lse_sum2(self.lw, self.G, self.D)
        dlp = lpmu - self.lpmu[j] + lpsx - self.lpsx[j] + float(np.sum(dl))
        ok = self._accept(sj - sg - self.loglik + dlp)
        if ok:
            self.mu[j], self.sx[j] = mu, sx
            self.lpmu[j], self.lpsx[j] = lpmu, lpsx
            self.Sg, self.Sj = sg, sj
        else:
            self.G[j] = old
        self._record("gate", ok)

    def rw_weight(self, j):
        m = self.m
        lw = self.lw
        log_rest = logsumexp(np.delete(lw, j))
        t = lw[j] - log_rest
        t_new = t + self._step("weights") * self.rng.standard_normal()
        la_new, lr_new = -_softplus(-t_new), -_softplus(t_new)
        lw_new = lw - log_rest + lr_new
        lw_new[j] = la_new
        sg = lse_sum(lw_new, self.G)
        sj = lse_sum2(lw_new, self.G, self.D)
        c = self.hyper.a / m
        dlp = (c - 1.0) * float(np.sum(lw_new) - np.sum(lw))
        jac = (la_new + (m - 1) * lr_new) - (lw[j] + (m - 1) * log_rest)
        ok = self._accept(sj - sg - self.loglik + dlp + jac)
        if ok:
            self.lw, self.Sg, self.Sj = lw_new, sg, sj
        self._record("weights", ok)

    def rw_globals(self):
        dl = self._step("globals") * self.base["globals"] * self.rng.standard_normal(self.d + 1)
        sigy = self.sigy * math.exp(dl[0])
        sigx = self.sigx * np.exp(dl[1:])
        G = self._gate_matrix(self.mu, self.sx, sigx)
        D = self._resp_matrix(self.beta, self.sy, sigy)
        sg = lse_sum(self.lw, G)
        sj = lse_sum2(self.lw, G, D)
        lpg = pr.log_prior_global(self.hyper, sigy, sigx)
        ok = self._accept(sj - sg - self.loglik + lpg - self.lpg + float(np.sum(dl)))
        if ok:
            self.sigy, self.sigx, self.G, self.D = sigy, sigx, G, D
            self.Sg, self.Sj, self.lpg = sg, sj, lpg
        self._record("globals", ok)

    def _birth_prob(self, m):
        if m >= self.m_max:
            return 0.0
        return 1.0 if m == 1 else 0.5

    def birth_death(self):
        m = self.m
        if self.m_max == 1:
            return
        if self.rng.random() < self._birth_prob(m):
            self._birth()
        else:
            self._death()

    def _birth(self):
        m, h = self.m, self.hyper
        beta, mu, sy, sx = pr.sample_components(h, 1, self.rng)
        u = self.rng.beta(1.0, m)
        pos = int(self.rng.integers(m + 1))
        if not 0.0 < u < 1.0:
            self._record("birth", False)
            return
        lw_new = np.insert(self.lw + math.log1p(-u), pos, math.log(u))
        G = np.ascontiguousarray(np.insert(self.G, pos, self._gate_row(mu[0], sx[0], self.sigx), axis=0))
        D = np.ascontiguousarray(np.insert(self.D, pos, self._resp_row(beta[0], sy[0], self.sigy), axis=0))
        sg = lse_sum(lw_new, G)
        sj = lse_sum2(lw_new, G, D)
        d_rev = 1.0 - self._birth_prob(m + 1)
        log_r = (sj - sg - self.loglik + self._lp_mw(m + 1, lw_new) - self._lp_mw(m, self.lw)
                 + math.log(d_rev) - math.log(self._birth_prob(m)) - math.log(m))
        ok = self._accept(log_r)
        if ok:
            self.m = m + 1
            self.lw, self.G, self.D, self.Sg, self.Sj = lw_new, G, D, sg, sj
            self.beta = np.insert(self.beta, pos, beta[0], axis=0)
            self.mu = np.insert(self.mu, pos, mu[0], axis=0)
            self.sy = np.insert(self.sy, pos, sy[0])
            self.sx = np.insert(self.sx, pos, sx[0], axis=0)
            self.lpb = np.insert(self.lpb, pos, pr.log_prior_beta(h, beta)[0])
            self.lpmu = np.insert(self.lpmu, pos, pr.log_prior_mu(h, mu)[0])
            self.lpsy = np.insert(self.lpsy, pos, pr.log_prior_local_y(h, sy)[0])
            self.lpsx = np.insert(self.lpsx, pos, pr.log_prior_local_x(h, sx)[0])
        self._record("birth", ok)

    def _death(self):
        m = self.m
        j = int(self.rng.integers(m))
        keep = np.arange(m) != j
        log_rest = logsumexp(self.lw[keep])
        lw_new = self.lw[keep] - log_rest
        G = np.ascontiguousarray(self.G[keep])
        D = np.ascontiguousarray(self.D[keep])
        sg = lse_sum(lw_new, G)
        sj = lse_sum2(lw_new, G, D)
        b_rev = self._birth_prob(m - 1)
        log_r = (sj - sg - self.loglik + self._lp_mw(m - 1, lw_new) - self._lp_mw(m, self.lw)
                 + math.log(b_rev) - math.log(1.0 - self._birth_prob(m)) + math.log(m - 1))
        ok = self._accept(log_r)
        if ok:
            self.m = m - 1
            self.lw, self.G, self.D, self.Sg, self.Sj = lw_new, G, D, sg, sj
            self.beta, self.mu, self.sy, self.sx = self.beta[keep], self.mu[keep], self.sy[keep], self.sx[keep]
            self.lpb, self.lpmu = self.lpb[keep], self.lpmu[keep]
            self.lpsy, self.lpsx = self.lpsy[keep], self.lpsx[keep]
        self._record("death", ok)

    def sweep(self):
        if self.gibbs_response:
            self.gibbs_response_update()
        for j in range(self.m):
            self.rw_beta(j)
            self.rw_local_y(j)
            self.rw_gate(j)
        if self.m > 1:
            for j in range(self.m):
                self.rw_weight(j)
        self.rw_globals()
        if self.fix_m is None:
            self.birth_death()
        self.t += 1


def _initial_state(sampler, hyper, m_max, rng, m0):
    lp = -math.inf
    for attempt in range(1, MAX_INIT_ATTEMPTS + 1):
        theta = pr.sample_prior(hyper, m_max, rng, m=m0)
        sampler.set_state(theta)
        lp = sampler.logpost()
        if math.isfinite(lp):
            return
    raise SamplerInitError(f"log posterior not finite after {MAX_INIT_ATTEMPTS} prior draws "
                           f"(last value {lp})", MAX_INIT_ATTEMPTS, lp)


def run_chain(data, hyper, n_iter=5000, burn_in=500, m_max=pr.DEFAULT_M_MAX, seed=0,
              gibbs_response=True, fix_m=None, init=None):
    """Run the sampler and return the post-burn-in :class:`Chain`.

    Parameters
    ----------
    data : Dataset
        An empty dataset makes the chain target the prior.
    hyper : PriorHyper
    n_iter, burn_in : int
        Total sweeps and the number discarded. Adaptation stops at ``burn_in``.
    m_max : int
        Truncation point of the prior on the number of components.
    seed : int
        Seed of the chain's private generator; equal seeds give identical chains.
    gibbs_response : bool
        Include the allocation-augmented Gibbs update of ``beta`` and ``s_y``.
    fix_m : int, optional
        Hold the number of components fixed (no birth or death moves).
    init : MixtureTheta, optional
        Starting state; drawn from the prior with ``m = 5`` otherwise.
    """
    if not 0 <= burn_in < n_iter:
        raise InvalidParameterError(f"need 0 <= burn_in < n_iter, got {burn_in}, {n_iter}")
    if m_max < 1:
        raise InvalidParameterError("m_max must be at least 1")
    rng = np.random.default_rng(seed)
    sampler = _Sampler(data, hyper, m_max, rng, gibbs_response, fix_m)
    if init is not None:
        if fix_m is not None and init.m != fix_m:
            raise InvalidParameterError("init has the wrong number of components")
        sampler.set_state(init)
        if not math.isfinite(sampler.logpost()):
            raise SamplerInitError("initial state has non-finite log posterior", 1, sampler.logpost())
    else:
        _initial_state(sampler, hyper, m_max, rng, fix_m if fix_m is not None else min(INIT_M, m_max))

    draws, logposts = [], []
    history = np.empty((n_iter, len(ADAPTED_BLOCKS)))
    for it in range(n_iter):
        if it == burn_in:
            sampler.adapting = False
            sampler.acc = {k: 0 for k in MOVES}
            sampler.att = {k: 0 for k in MOVES}
        sampler.sweep()
        history[it] = [math.exp(sampler.log_step[b]) for b in ADAPTED_BLOCKS]
        if it >= burn_in:
            draws.append(sampler.theta())
            logposts.append(sampler.logpost())
    config = {"n_iter": n_iter, "burn_in": burn_in, "seed": seed, "m_max": m_max,
              "fix_m": fix_m, "gibbs_response": gibbs_response, "n": data.n, "d_x": data.d_x}
    return Chain(draws, np.array(logposts), config, dict(sampler.acc), dict(sampler.att),
                 {b: math.exp(sampler.log_step[b]) for b in ADAPTED_BLOCKS}, history)


# -- diagnostics ------------------------------------------------------------------

def effective_sample_size(x):
    """ESS of a scalar trace using Geyer's initial monotone sequence."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 2:
        return float(n)
    xc = x - x.mean()
    var = float(xc @ xc) / n
    if var <= 0.0:
        return float(n)
    f = np.fft.rfft(xc, 2 * n)
    acov = np.fft.irfft(f * np.conj(f))[:n] / n
    rho = acov / acov[0]
    pair_sums = []
    for k in range(0, n - 1, 2):
        p = rho[k] + rho[k + 1]
        if p <= 0.0:
            break
        if pair_sums and p > pair_sums[-1]:
            p = pair_sums[-1]
        pair_sums.append(p)
    tau = -1.0 + 2.0 * sum(pair_sums)
    return float(min(n, n / max(tau, 1e-12)))


def mc_standard_error(x):
    x = np.asarray(x, dtype=float)
    return float(np.std(x) / math.sqrt(effective_sample_size(x)))


def diagnostics(chain):
    """Acceptance rates, the histogram of m, and a log-posterior summary."""
    rates = {k: (chain.accepted.get(k, 0) / chain.attempted[k] if chain.attempted.get(k) else math.nan)
             for k in MOVES}
    ms = chain.m_trace
    values, counts = np.unique(ms, return_counts=True)
    lp = np.asarray(chain.logposts, dtype=float)
    return {
        "acceptance": rates,
        "m_histogram": {int(v): float(c) / len(ms) for v, c in zip(values, counts)},
        "logpost": {"mean": float(lp.mean()), "sd": float(lp.std()), "min": float(lp.min()),
                    "max": float(lp.max())} if len(lp) else {},
        "ess_logpost": effective_sample_size(lp) if len(lp) else 0.0,
        "n_draws": len(chain),
    }


# -- persistence ----------------------------------------------------------------------

def save_chain(chain, path):
    """Write ``chain`` as JSON lines: a header record, then one record per draw."""
    header = {
        "format": CHAIN_FORMAT, "version": CHAIN_VERSION, "config": chain.config,
        "accepted": chain.accepted, "attempted": chain.attempted,
        "step_sizes": chain.step_sizes, "step_history": np.asarray(chain.step_history).tolist(),
        "n_draws": len(chain),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for k, (theta, lp) in enumerate(zip(chain.draws, chain.logposts)):
            fh.write(json.dumps({"index": k, "logpost": float(lp), "theta": theta.to_dict()}) + "\n")


def load_chain(path):
    with open(path) as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ChainFormatError("empty chain file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ChainFormatError(f"malformed header: {exc.msg}", line=1) from None
    if not isinstance(header, dict) or header.get("format") != CHAIN_FORMAT:
        raise ChainFormatError("not a chain file (missing format tag)", line=1)
    if header.get("version") != CHAIN_VERSION:
        raise UnsupportedVersionError(f"unsupported chain format version {header.get('version')!r}", line=1)
    draws, logposts = [], []
    for lineno, text in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(text)
            theta = MixtureTheta.from_dict(rec["theta"])
            logposts.append(float(rec["logpost"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ChainFormatError(f"malformed draw record ({exc})", line=lineno) from None
        draws.append(theta)
    if len(draws) != header.get("n_draws"):
        raise ChainFormatError(f"expected {header.get('n_draws')} draws, found {len(draws)} (truncated file?)",
                               line=len(lines) + 1)
    history = np.asarray(header.get("step_history", []), dtype=float).reshape(-1, len(ADAPTED_BLOCKS))
    return Chain(draws, np.array(logposts), header["config"], header["accepted"], header["attempted"],
                 header.get("step_sizes", {}), history)
