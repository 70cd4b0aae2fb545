"""Variance of the pooled PD estimator Z(T): exact sum, bounds, asymptotics and scaling exponent."""

import enum
import math
import threading
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .model import Power, map_asset_to_default, tangent_slope_A
from .simulation import simulate_counts


class Regime(enum.Enum):
    EXP = "EXP"
    POWER_GT1 = "POWER_GT1"
    POWER_EQ1 = "POWER_EQ1"
    POWER_LT1 = "POWER_LT1"


@dataclass(frozen=True)
class VarianceBreakdown:
    term_binomial: float
    term_intra_year: float
    term_temporal: float
    total: float
    lower_bound: float
    upper_bound: float


@dataclass(frozen=True)
class ScalingPoint:
    param: float
    T: int
    delta: float


class _LagCorrelationCache:
    """f(rho_A d_i), i = 1..L, kept per (p, rho_A, kernel) and extended on demand."""

    def __init__(self, max_entries=64):
        self._data = {}
        self._lock = threading.Lock()
        self._max_entries = max_entries

    def get(self, params, max_lag):
        key = (params.p, params.rho_A, params.kernel)
        with self._lock:
            have = self._data.get(key)
        if have is not None and have.size >= max_lag:
            return have[:max_lag]
        done = 0 if have is None else have.size
        lags = np.arange(done + 1, max_lag + 1)
        fresh = map_asset_to_default(params.p, params.rho_A * params.kernel.values(lags))
        full = np.concatenate([have, np.atleast_1d(fresh)]) if have is not None else np.atleast_1d(fresh)
        with self._lock:
            if len(self._data) >= self._max_entries and key not in self._data:
                self._data.pop(next(iter(self._data)))
            self._data[key] = full
        return full[:max_lag]

    def clear(self):
        with self._lock:
            self._data.clear()


lag_cache = _LagCorrelationCache()


def lag_default_correlations(params, max_lag):
    """Array of f(rho_A d_i) for i = 1..max_lag (cached)."""
    if max_lag <= 0:
        return np.empty(0)
    return lag_cache.get(params, int(max_lag))


def _check_nT(n, T):
    if int(n) != n or n < 1:
        raise DomainError(f"n must be a positive integer, got {n!r}")
    if int(T) != T or T < 1:
        raise DomainError(f"T must be a positive integer, got {T!r}")
    return int(n), int(T)


def variance_exact(params, n, T):
    """V(Z(T)) for n obligors per year over T years, with its three terms and bounds."""
    n, T = _check_nT(n, T)
    p = params.p
    pq = p * (1.0 - p)
    rho_D = map_asset_to_default(p, params.rho_A)
    binom = pq / (n * T)
    intra = pq * (n - 1) * rho_D / (n * T)
    if T > 1:
        i = np.arange(1, T)
        weights = (T - i).astype(float)
        f = lag_default_correlations(params, T - 1)
        d = params.kernel.values(i)
        scale = 2.0 * pq / (T * T)
        temporal = scale * float(f @ weights)
        a = tangent_slope_A(p)
        dsum = float(d @ weights)
        lower_t = scale * a * params.rho_A * dsum
        upper_t = scale * rho_D * dsum
    else:
        temporal = lower_t = upper_t = 0.0
    base = binom + intra
    return VarianceBreakdown(binom, intra, temporal, base + temporal, base + lower_t, base + upper_t)


def variance_curve(params, n, t_values):
    """Vectorized V(Z(t)) with bounds for many horizons t, via prefix sums.

    Returns a dict of arrays: ``t``, ``total``, ``lower``, ``upper``.
    """
    t = np.asarray(t_values, dtype=np.int64)
    if t.size == 0 or np.any(t < 1):
        raise DomainError("t values must be positive integers")
    n, _ = _check_nT(n, 1)
    p = params.p
    pq = p * (1.0 - p)
    tmax = int(t.max())
    rho_D = map_asset_to_default(p, params.rho_A)
    i = np.arange(1, tmax, dtype=float)
    f = lag_default_correlations(params, tmax - 1)
    d = params.kernel.values(i)

    def weighted(x):
        # sum_{i<t} x_i (t - i) = t * S0(t-1) - S1(t-1)
        s0 = np.concatenate([[0.0], np.cumsum(x)])
        s1 = np.concatenate([[0.0], np.cumsum(x * i)])
        return t * s0[t - 1] - s1[t - 1]

    tf = t.astype(float)
    base = pq / (n * tf) + pq * (n - 1) * rho_D / (n * tf)
    scale = 2.0 * pq / (tf * tf)
    dsum = weighted(d)
    return {
        "t": t,
        "total": base + scale * weighted(f),
        "lower": base + scale * tangent_slope_A(p) * params.rho_A * dsum,
        "upper": base + scale * rho_D * dsum,
    }


def variance_mc(params, n, T, replicas, seed):
    """Sample variance of Z(T) over simulated panels, with its standard error.

    The standard error uses the fourth central moment:
    Var(s^2) ~ (m4 - (R - 3) / (R - 1) s^4) / R.
    """
    n, T = _check_nT(n, T)
    if replicas < 2:
        raise DomainError("variance_mc needs at least 2 replicas")
    k = simulate_counts(params, [n] * T, seed, replicas)
    z = k.sum(axis=1) / (n * T)
    dev = z - z.mean()
    s2 = float(dev @ dev) / (replicas - 1)
    m4 = float(np.mean(dev**4))
    var_s2 = (m4 - (replicas - 3) / (replicas - 1) * s2 * s2) / replicas
    return s2, math.sqrt(max(var_s2, 0.0))


def default_bracket_constant(params):
    """sqrt(A rho_A * rho_D): geometric mean of the two ends of the bracket."""
    a = tangent_slope_A(params.p)
    rho_D = map_asset_to_default(params.p, params.rho_A)
    return math.sqrt(a * params.rho_A * rho_D)


def variance_asymptotic(params, n, T, c=None):
    """Closed-form large-T approximation of V(Z(T)) and its regime.

    The temporal term uses a constant ``c`` bracketed by A rho_A and rho_D in
    place of f(rho_A d_i) / d_i; by default its geometric-mean midpoint.
    """
    n, T = _check_nT(n, T)
    if T < 2:
        raise DomainError("variance_asymptotic needs T >= 2")
    p = params.p
    pq = p * (1.0 - p)
    if c is None:
        c = default_bracket_constant(params)
    rho_D = map_asset_to_default(p, params.rho_A)
    head = pq / (n * T) + pq * (n - 1) * rho_D / (n * T)
    kernel = params.kernel
    if kernel.family == "exponential":
        theta = kernel.theta
        if theta < 1.0:
            tail = 2.0 * pq * c * theta / ((1.0 - theta) * T)
        else:
            tail = pq * c * (T - 1) / T
        return head + tail, Regime.EXP
    gamma = kernel.gamma
    if gamma > 1.0:
        return head + 2.0 * pq * c * T ** (-gamma) / (gamma - 1.0), Regime.POWER_GT1
    if gamma == 1.0:
        bracket = (T + 1) * math.log(T) - T + 2
        return head + 2.0 * pq * c * bracket / (T * T), Regime.POWER_EQ1
    return head + 2.0 * pq * c / ((1.0 - gamma) * (2.0 - gamma) * T**gamma), Regime.POWER_LT1


def scaling_exponent(params, n, T):
    """delta = log2(V(Z(T)) / V(Z(2T))) from the exact variance."""
    n, T = _check_nT(n, T)
    if T < 2:
        raise DomainError("scaling_exponent needs T >= 2")
    v1 = variance_exact(params, n, T).total
    v2 = variance_exact(params, n, 2 * T).total
    return ScalingPoint(float(params.kernel.param), T, math.log2(v1 / v2))


def delta_curve(gammas, params, n, T):
    """Scaling exponent for each power index in ``gammas`` (other parameters from ``params``)."""
    gammas = list(gammas)
    if not gammas:
        raise DomainError("delta_curve needs at least one gamma")
    return [scaling_exponent(params.with_kernel(Power(float(g))), n, T) for g in gammas]
