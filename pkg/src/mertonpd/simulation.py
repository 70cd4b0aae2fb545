"""Yearly default-count panels: containers, forward simulation and the pooled PD estimator."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from . import rng
from .errors import DomainError
from .gaussian import sample_kernel_paths


@dataclass(frozen=True)
class DefaultHistory:
    """Contiguous yearly panel of cohort sizes ``n`` and default counts ``k``."""

    years: tuple
    n: tuple
    k: tuple

    def __post_init__(self):
        years = tuple(int(y) for y in self.years)
        n = tuple(int(v) for v in self.n)
        k = tuple(int(v) for v in self.k)
        if not (len(years) == len(n) == len(k)):
            raise DomainError("years, n and k must have equal length")
        for i, (y, nt, kt) in enumerate(zip(years, n, k)):
            if nt < 1:
                raise DomainError(f"cohort size must be positive (year {y})")
            if not 0 <= kt <= nt:
                raise DomainError(f"default count must lie in [0, n] (year {y})")
            if i and y != years[i - 1] + 1:
                raise DomainError(f"years must be contiguous and increasing ({years[i - 1]} -> {y})")
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "k", k)

    @classmethod
    def from_rows(cls, rows):
        rows = list(rows)
        return cls(tuple(r[0] for r in rows), tuple(r[1] for r in rows), tuple(r[2] for r in rows))

    @classmethod
    def from_counts(cls, n, k, start_year=1):
        n = np.broadcast_to(np.asarray(n, dtype=np.int64), np.shape(k))
        return cls(tuple(range(start_year, start_year + len(k))), tuple(n.tolist()), tuple(np.asarray(k).tolist()))

    @property
    def rows(self):
        return list(zip(self.years, self.n, self.k))

    def __len__(self):
        return len(self.years)

    @property
    def n_array(self):
        return np.asarray(self.n, dtype=float)

    @property
    def k_array(self):
        return np.asarray(self.k, dtype=float)

    def slice(self, start, stop):
        return DefaultHistory(self.years[start:stop], self.n[start:stop], self.k[start:stop])


@dataclass(frozen=True)
class PanelStats:
    z: float
    per_year_rates: tuple


def estimator_z(history):
    """Pooled default rate Z = sum(k) / sum(n) and the per-year rates."""
    if len(history) == 0:
        raise DomainError("estimator_z needs a nonempty history")
    k, n = history.k_array, history.n_array
    return PanelStats(float(k.sum() / n.sum()), tuple((k / n).tolist()))


def _binomial_from_uniform(u, n, prob):
    k = stats.binom.ppf(u, n, prob)
    return np.nan_to_num(k, nan=0.0).astype(np.int64)


def simulate_counts(params, cohort_sizes, seed, replicas, start=0):
    """Default counts for replicas ``start .. start + replicas - 1``, shape (replicas, T).

    Replica ``r`` uses path block ``r`` of the PATHS stream and uniform block
    ``r`` of the BINOMIAL stream, so any replica can be regenerated alone.
    """
    n = np.asarray(cohort_sizes, dtype=np.int64)
    if n.ndim != 1 or n.size == 0:
        raise DomainError("cohort_sizes must be a nonempty list")
    if np.any(n < 1):
        raise DomainError("cohort sizes must be positive")
    T = n.size
    if params.rho_A == 0.0:
        g = np.full((replicas, T), params.p)
    else:
        s = sample_kernel_paths(params.kernel, T, seed, replicas, start)
        x = (params.Y - math.sqrt(params.rho_A) * s) / math.sqrt(1.0 - params.rho_A)
        g = special.ndtr(x)
    u = rng.uniforms(seed, rng.BINOMIAL, start, replicas, T)
    return _binomial_from_uniform(u, n[None, :], g)


def simulate_panel(params, cohort_sizes, seed, replica=0, start_year=1):
    """One simulated history: a latent path S, then k_t ~ Binomial(n_t, G(S_t))."""
    k = simulate_counts(params, cohort_sizes, seed, 1, start=replica)[0]
    return DefaultHistory.from_counts(np.asarray(cohort_sizes), k, start_year)


def empirical_autocorr(histories, lag):
    """Sample lag correlation of yearly default rates.

    ``histories`` is one history or a list of them; pairs from all histories
    are pooled. Returns NaN when either side has zero variance.
    """
    if isinstance(histories, DefaultHistory):
        histories = [histories]
    if lag < 1:
        raise DomainError("lag must be >= 1")
    xs, ys = [], []
    for h in histories:
        if lag >= len(h):
            raise DomainError(f"lag {lag} needs more than {len(h)} years")
        r = h.k_array / h.n_array
        xs.append(r[:-lag])
        ys.append(r[lag:])
    x, y = np.concatenate(xs), np.concatenate(ys)
    dx, dy = x - x.mean(), y - y.mean()
    den = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if den == 0.0:
        return float("nan")
    return float(dx @ dy) / den
