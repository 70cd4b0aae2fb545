"""MAP estimation of (p, rho_A, kernel parameter) under a uniform box prior."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special
from scipy.stats import qmc

from .. import rng
from ..errors import DomainError
from ..model import FAMILIES, ModelParams, make_kernel, map_asset_to_default
from .likelihood import METHODS, LikelihoodEvaluator

NAMES = ("p", "rho_A", "kernel")


@dataclass(frozen=True)
class FitConfig:
    """Settings shared by MAP fitting and posterior sampling.

    The bounds are the support of the uniform prior. ``n_paths`` paths with
    fixed uniforms (common random numbers) are used by :func:`map_fit`;
    the pseudo-marginal sampler draws ``mcmc_paths`` fresh paths per proposal.
    """

    n_paths: int = 4096
    seed: int = 0
    p_bounds: tuple = (1e-6, 0.5)
    rho_bounds: tuple = (0.0, 0.999)
    theta_bounds: tuple = (0.0, 0.999)
    gamma_bounds: tuple = (1e-3, 20.0)
    n_starts: int = 8
    xatol: float = 1e-6
    max_evals: int = 2000
    method: str = "laplace"
    mcmc_paths: int = 256
    warmup: int = 1000

    def __post_init__(self):
        if self.n_paths < 2 or self.mcmc_paths < 2:
            raise DomainError("n_paths must be >= 2")
        if self.n_starts < 1:
            raise DomainError("n_starts must be >= 1")
        if self.max_evals < 1 or not self.xatol > 0:
            raise DomainError("optimizer tolerances must be positive")
        if self.warmup < 0:
            raise DomainError("warmup must be >= 0")
        if self.method not in METHODS:
            raise DomainError(f"unknown likelihood method {self.method!r}")
        domains = {
            "p": (self.p_bounds, lambda lo, hi: 0.0 < lo and hi < 1.0),
            "rho_A": (self.rho_bounds, lambda lo, hi: 0.0 <= lo and hi < 1.0),
            "theta": (self.theta_bounds, lambda lo, hi: 0.0 <= lo and hi <= 1.0),
            # gamma is searched on a log scale, so a free box must start above 0
            "gamma": (self.gamma_bounds, lambda lo, hi: 0.0 < lo or (lo == hi == 0.0)),
        }
        for name, ((lo, hi), inside) in domains.items():
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise DomainError(f"{name} bounds must be a finite nonempty interval, got {(lo, hi)}")
            if not inside(lo, hi):
                raise DomainError(f"{name} bounds {(lo, hi)} leave the parameter domain")

    def kernel_bounds(self, family):
        if family not in FAMILIES:
            raise DomainError(f"unknown kernel family {family!r}")
        return self.theta_bounds if family == "exponential" else self.gamma_bounds


class ParameterBox:
    """Map between the prior box and unconstrained coordinates.

    p, rho_A and theta use a logit scaled to their bounds; gamma, whose box
    spans orders of magnitude, is logged first and then logit-scaled. Pinned
    coordinates (lo == hi) are not part of the free vector. The kernel
    parameter is also held fixed when rho_A is pinned at 0, since it then
    has no effect on the likelihood.
    """

    def __init__(self, family, config):
        self.family = family
        self.bounds = (tuple(config.p_bounds), tuple(config.rho_bounds), tuple(config.kernel_bounds(family)))
        self.log_scale = (False, False, family == "power")
        self.inert = [False, False, self.bounds[1] == (0.0, 0.0)]
        self.free = [i for i in range(3) if self.bounds[i][0] < self.bounds[i][1] and not self.inert[i]]
        self.log_volume = sum(math.log(self.bounds[i][1] - self.bounds[i][0]) for i in self.free)

    def _ends(self, i):
        lo, hi = self.bounds[i]
        if self.log_scale[i]:
            return math.log(lo), math.log(hi)
        return lo, hi

    def fraction(self, i, value):
        """Position of ``value`` in the box, on the transformed scale, in [0, 1]."""
        a, b = self._ends(i)
        if b == a:
            return 0.5
        v = math.log(value) if self.log_scale[i] else value
        return (v - a) / (b - a)

    def _from_fraction(self, i, frac):
        a, b = self._ends(i)
        v = a + (b - a) * frac
        return math.exp(v) if self.log_scale[i] else v

    def values(self, x):
        """Full (p, rho_A, kernel) triple for free coordinates ``x``."""
        out = [self._from_fraction(i, 0.5) for i in range(3)]
        for i in range(3):
            lo, hi = self.bounds[i]
            if lo == hi:
                out[i] = lo
        for j, i in enumerate(self.free):
            lo, hi = self.bounds[i]
            out[i] = min(max(self._from_fraction(i, float(special.expit(x[j]))), lo), hi)
        return out

    def coords(self, values):
        """Inverse of :meth:`values` for the free coordinates (clipped off the edges)."""
        x = np.empty(len(self.free))
        for j, i in enumerate(self.free):
            frac = min(max(self.fraction(i, values[i]), 1e-9), 1.0 - 1e-9)
            x[j] = special.logit(frac)
        return x

    def params(self, x):
        p, rho, k = self.values(x)
        return ModelParams(p, rho, make_kernel(self.family, k))

    def log_jacobian(self, x):
        """log |d values / d x| of the free coordinates."""
        total = 0.0
        for j, i in enumerate(self.free):
            a, b = self._ends(i)
            s = float(special.expit(x[j]))
            total += math.log(b - a) + math.log(s) + math.log1p(-s)
            if self.log_scale[i]:
                total += a + (b - a) * s
        return total

    def log_prior(self):
        return -self.log_volume


@dataclass(frozen=True)
class MultistartSpread:
    log_posteriors: tuple
    best: float
    median: float
    param_ranges: tuple
    max_box_fraction: float


@dataclass(frozen=True)
class FitResult:
    family: str
    params_hat: ModelParams
    rho_D_hat: float
    log_posterior: float
    loglik: float
    converged: bool
    evaluations: int
    spread: MultistartSpread
    non_identifiable: bool
    waic: float = None
    wbic: float = None
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def kernel_param_hat(self):
        return self.params_hat.kernel.param


def _starts(box, config):
    d = len(box.free)
    if d == 0:
        return [np.empty(0)]
    sampler = qmc.LatinHypercube(d=d, seed=rng.derive_seed(config.seed, rng.MULTISTART, 0))
    fr = sampler.random(config.n_starts)
    # keep the starting points off the very edges of the box
    fr = 0.05 + 0.9 * fr
    return [special.logit(row) for row in fr]


def _nelder_mead(fun, x0, step, xatol, fatol, max_evals):
    d = x0.size
    simplex = np.vstack([x0] + [x0 + step * np.eye(d)[i] for i in range(d)])
    return optimize.minimize(fun, x0, method="Nelder-Mead",
                             options={"initial_simplex": simplex, "xatol": xatol, "fatol": fatol,
                                      "maxfev": max_evals})


def map_fit(history, family, config=None):
    """Maximize the Monte-Carlo log posterior over the prior box.

    Every evaluation reuses the same ``n_paths`` path uniforms, so the
    objective is a smooth function of the parameters. The search runs in
    two stages: Nelder-Mead from each Latin-hypercube start on the
    deterministic Laplace approximation of the log-likelihood, then the
    Monte-Carlo objective is evaluated at every local optimum and the best
    one is polished by Nelder-Mead on the Monte-Carlo objective itself.
    """
    config = config or FitConfig()
    if len(history) == 0:
        raise DomainError("history must be nonempty")
    box = ParameterBox(family, config)
    T = len(history)
    z = rng.normals(config.seed, rng.LIKELIHOOD_PATHS, 0, config.n_paths, T)
    ev = LikelihoodEvaluator(history, config.n_paths, config.method, z=z)
    log_prior = box.log_prior()
    count = [0]

    def mc_obj(x):
        count[0] += 1
        est = ev.estimate(box.params(x))
        return -est.loglik if np.isfinite(est.loglik) else 1e300

    def laplace_obj(x):
        count[0] += 1
        val = ev.laplace(box.params(x))
        return -val if np.isfinite(val) else 1e300

    optima = []
    for x0 in _starts(box, config):
        if x0.size == 0:
            optima.append((x0, True))
            continue
        res = _nelder_mead(laplace_obj, x0, 0.5, 1e-4, 1e-6, config.max_evals)
        optima.append((res.x, bool(res.success)))

    scored = []
    for x, ok in optima:
        scored.append((mc_obj(x), x, ok))
    # first occurrence wins ties so the choice does not depend on float noise ordering
    best_i = min(range(len(scored)), key=lambda i: (scored[i][0], i))
    f_best, x_best, _ = scored[best_i]
    converged = True
    if x_best.size:
        res = _nelder_mead(mc_obj, x_best, 0.05, config.xatol, 1e-9, config.max_evals)
        converged = bool(res.success)
        if res.fun <= f_best:
            f_best, x_best = float(res.fun), res.x

    params_hat = box.params(x_best)
    loglik = -f_best
    lps = np.array([-f + log_prior for f, _, _ in scored])
    vals = np.array([box.values(x) for _, x, _ in scored])
    ranges = tuple(float(r) for r in vals.max(axis=0) - vals.min(axis=0))
    fracs = [abs(box.fraction(i, vals[:, i].max()) - box.fraction(i, vals[:, i].min())) for i in box.free]
    max_frac = max(fracs) if fracs else 0.0
    best_lp, median_lp = float(lps.max()), float(np.median(lps))
    spread = MultistartSpread(tuple(float(v) for v in lps), best_lp, median_lp, ranges, float(max_frac))
    flat = best_lp - median_lp < 0.5 and max_frac > 0.5
    no_defaults = sum(history.k) == 0
    return FitResult(
        family=family,
        params_hat=params_hat,
        rho_D_hat=float(map_asset_to_default(params_hat.p, params_hat.rho_A)),
        log_posterior=float(loglik + log_prior),
        loglik=float(loglik),
        converged=converged,
        evaluations=count[0],
        spread=spread,
        non_identifiable=bool(flat or no_defaults),
    )
