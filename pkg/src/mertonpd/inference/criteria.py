"""WAIC and WBIC on the -2 log scale (smaller is better)."""

import math

import numpy as np
from scipy import special

from .. import rng
from ..errors import DomainError
from .fitting import FitConfig
from .likelihood import YearTerms, log_ndtr_pair, one_step_logliks, year_marginal_logliks
from .mcmc import pseudo_marginal_mcmc

POINTWISE = ("sequential", "marginal", "marginal_paths")


def pointwise_logliks(history, sample, n_paths=4096, seed=0, pointwise="sequential"):
    """Matrix (draws x years) of per-year log-likelihood terms.

    ``sequential``: log p(k_t | k_1..k_{t-1}, draw), the one-step-ahead
    predictive; the terms of a row add up to the joint log-likelihood.
    ``marginal``: log p(k_t | draw) with each year integrated against its own
    N(0, 1) factor, ignoring the temporal link (adaptive Gauss-Hermite).
    ``marginal_paths``: the same marginal, averaged over ``n_paths`` factor draws.
    """
    if pointwise not in POINTWISE:
        raise DomainError(f"unknown pointwise method {pointwise!r}")
    terms = YearTerms(history)
    m = len(sample)
    params = [sample.params(i) for i in range(m)]
    if pointwise == "sequential":
        chunk = 256
        return np.concatenate([one_step_logliks(terms, params[i:i + chunk]) for i in range(0, m, chunk)])
    out = np.empty((m, terms.T))
    if pointwise == "marginal_paths":
        s = rng.normals(seed, rng.LIKELIHOOD_PATHS, 0, n_paths, 1)[:, 0]
    for i, pr in enumerate(params):
        if pointwise == "marginal":
            out[i] = year_marginal_logliks(terms, pr)
        else:
            x = (pr.Y - math.sqrt(pr.rho_A) * s) / math.sqrt(1.0 - pr.rho_A)
            lo, hi = log_ndtr_pair(x[None, :])
            ll = terms.logc[:, None] + terms.k[:, None] * lo + (terms.n - terms.k)[:, None] * hi
            out[i] = special.logsumexp(ll, axis=1) - math.log(n_paths)
    return out


def waic_from_pointwise(ll):
    """-2 (lppd - p_waic) from a (draws x units) log-likelihood matrix."""
    ll = np.asarray(ll, dtype=float)
    m = ll.shape[0]
    if m < 2:
        raise DomainError("WAIC needs at least 2 posterior draws")
    lppd = float(np.sum(special.logsumexp(ll, axis=0) - math.log(m)))
    p_waic = float(np.sum(np.var(ll, axis=0, ddof=1)))
    return -2.0 * (lppd - p_waic)


def waic(history, sample, n_paths=4096, seed=0, pointwise="sequential"):
    """WAIC from a beta = 1 posterior sample with years as pointwise units."""
    if len(sample) < 2:
        raise DomainError("WAIC needs at least 2 posterior draws")
    if sample.beta != 1.0:
        raise DomainError(f"WAIC needs an untempered sample (beta = 1), got beta = {sample.beta}")
    return waic_from_pointwise(pointwise_logliks(history, sample, n_paths, seed, pointwise))


def wbic_beta(m):
    if m < 2:
        raise DomainError("WBIC needs at least 2 years (log m must be positive)")
    return 1.0 / math.log(m)


def wbic_from_sample(sample):
    """-2 x mean full-history log-likelihood over the tempered draws."""
    return -2.0 * float(np.mean(sample.logliks))


def wbic(history, family, config=None, n_draws=2000):
    """WBIC from a pseudo-marginal chain at beta = 1 / log m, m the number of years.

    Reported as -2 times the mean log-likelihood so it sits on the WAIC scale.
    """
    beta = wbic_beta(len(history))
    sample = pseudo_marginal_mcmc(history, family, config or FitConfig(), n_draws, beta=beta)
    return wbic_from_sample(sample)
