"""Pseudo-marginal random-walk Metropolis over (p, rho_A, kernel parameter)."""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .. import rng
from ..errors import DomainError
from ..model import ModelParams, make_kernel, map_default_to_asset
from .fitting import FitConfig, ParameterBox
from .likelihood import LikelihoodEvaluator

OK = "ok"
LOW_ACCEPTANCE = "low_acceptance"

_TARGET_ACCEPT = 0.3
_BATCH = 50


@dataclass(frozen=True)
class PosteriorSample:
    """Post-warm-up draws; ``draws`` has columns (p, rho_A, kernel parameter)."""

    family: str
    draws: np.ndarray
    logliks: np.ndarray
    acceptance_rate: float
    beta: float
    status: str = OK

    def __len__(self):
        return self.draws.shape[0]

    def params(self, i):
        p, rho, k = self.draws[i]
        return ModelParams(float(p), float(rho), make_kernel(self.family, float(k)))


def initial_values(history, box):
    """Moment-based starting point: pooled rate for p, excess rate variance for rho_A."""
    k, n = history.k_array, history.n_array
    p = float(k.sum() / n.sum())
    rate = k / n
    rho = 0.1
    if len(history) > 1 and 0.0 < p < 1.0:
        excess = float(np.var(rate, ddof=1)) - p * (1.0 - p) * float(np.mean(1.0 / n))
        rho_d = min(max(excess / (p * (1.0 - p)), 1e-4), 0.5)
        rho = map_default_to_asset(p, rho_d)
    kernel = 0.5 if box.family == "exponential" else 1.0
    values = []
    for i, v in enumerate((p, rho, kernel)):
        lo, hi = box.bounds[i]
        values.append(min(max(v, lo), hi))
    return values


def pseudo_marginal_mcmc(history, family, config=None, n_draws=2000, beta=1.0, start=None):
    """Random-walk Metropolis targeting prior x (estimated likelihood)^beta.

    Each proposal gets a fresh path seed, so the chain is exact for the
    path-averaged target (pseudo-marginal). The walk runs in the unbounded
    coordinates of :class:`ParameterBox` and carries the Jacobian of that
    map. During ``config.warmup`` discarded iterations the proposal
    covariance is learned from the chain and its scale tuned toward 30%
    acceptance; afterwards the proposal is frozen.
    """
    config = config or FitConfig()
    if n_draws < 100:
        raise DomainError("n_draws must be >= 100")
    if not beta > 0 or not math.isfinite(beta):
        raise DomainError("beta must be a positive finite number")
    if len(history) == 0:
        raise DomainError("history must be nonempty")
    box = ParameterBox(family, config)
    d = len(box.free)
    ev = LikelihoodEvaluator(history, config.mcmc_paths, config.method)
    seed = config.seed

    def log_target(x, it):
        est = ev.estimate(box.params(x), seed=rng.derive_seed(seed, rng.PATH_SEEDS, it))
        ll = est.loglik
        if not np.isfinite(ll):
            return -math.inf, ll
        return beta * ll + box.log_jacobian(x), ll

    total = config.warmup + n_draws
    x = box.coords(start if start is not None else initial_values(history, box))
    cur, cur_ll = log_target(x, 0)
    if d == 0:
        vals = np.array([box.values(x)] * n_draws)
        lls = np.array([ev.estimate(box.params(x), seed=rng.derive_seed(seed, rng.PATH_SEEDS, i + 1)).loglik
                        for i in range(n_draws)])
        return PosteriorSample(family, vals, lls, 1.0, float(beta))

    eps = rng.normals(seed, rng.PROPOSAL, 0, total, d)
    acc_u = rng.uniforms(seed, rng.ACCEPT, 0, total, 1)[:, 0]
    log_scale = 0.0
    chol = 0.3 * np.eye(d)
    history_x = []
    draws = np.empty((n_draws, 3))
    lls = np.empty(n_draws)
    accepted_batch = 0
    accepted_main = 0
    for it in range(total):
        prop = x + math.exp(log_scale) * (chol @ eps[it])
        new, new_ll = log_target(prop, it + 1)
        if math.log(acc_u[it]) < new - cur:
            x, cur, cur_ll = prop, new, new_ll
            if it < config.warmup:
                accepted_batch += 1
            else:
                accepted_main += 1
        if it < config.warmup:
            history_x.append(x.copy())
            if (it + 1) % _BATCH == 0:
                rate = accepted_batch / _BATCH
                n_batch = (it + 1) // _BATCH
                log_scale += (rate - _TARGET_ACCEPT) / math.sqrt(n_batch) * 2.0
                accepted_batch = 0
                # learn the shape once half of the warm-up is behind us
                if it + 1 >= config.warmup // 2 and len(history_x) >= 4 * d:
                    cov = np.cov(np.array(history_x[len(history_x) // 2:]).T).reshape(d, d)
                    cov += 1e-8 * np.eye(d)
                    try:
                        chol = 2.38 / math.sqrt(d) * np.linalg.cholesky(cov)
                    except np.linalg.LinAlgError:
                        pass
        else:
            j = it - config.warmup
            draws[j] = box.values(x)
            lls[j] = cur_ll
    rate = accepted_main / n_draws
    status = OK
    if rate < 0.05:
        status = LOW_ACCEPTANCE
        warnings.warn(f"pseudo-marginal acceptance rate {rate:.3f} is below 0.05", RuntimeWarning)
    return PosteriorSample(family, draws, lls, float(rate), float(beta), status)
