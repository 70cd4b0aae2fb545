"""Monte-Carlo marginal likelihood of a default history under the Merton model.

The joint likelihood integrates the binomial year terms over the latent
factor path S ~ N(0, Sigma(kernel)):

    P(k_1..k_T) = E_S[ prod_t Binom(k_t; n_t, G(S_t)) ].

Two estimators are provided. ``prior`` averages the product over paths drawn
from N(0, Sigma) exactly as written. ``laplace`` draws the paths from a
Gaussian fitted to the posterior of S at its mode and reweights them, which
is still an unbiased path average but stays usable when cohorts are large
and every year pins S_t tightly.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg, special

from .. import rng
from ..errors import DomainError
from ..gaussian import cholesky_psd, toeplitz_from_kernel

METHODS = ("prior", "laplace")
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LikelihoodEstimate:
    loglik: float
    std_error: float
    degenerate: bool = False


def log_binom_coef(n, k):
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    return special.gammaln(n + 1.0) - special.gammaln(k + 1.0) - special.gammaln(n - k + 1.0)


_SQRT_HALF = math.sqrt(0.5)


def log_ndtr_pair(x):
    """(log Phi(x), log Phi(-x)) sharing one erfc call.

    The smaller tail is computed directly and the larger one through log1p,
    so both stay accurate; entries past erfc underflow fall back to log_ndtr.
    """
    x = np.asarray(x, dtype=float)
    tail = 0.5 * special.erfc(np.abs(x) * _SQRT_HALF)
    with np.errstate(divide="ignore"):
        small = np.log(tail)
    big = np.log1p(-tail)
    under = tail == 0.0
    if np.any(under):
        small = np.where(under, special.log_ndtr(-np.abs(x)), small)
    neg = x < 0
    return np.where(neg, small, big), np.where(neg, big, small)


def _mills(x):
    # phi(x) / Phi(x), stable in both tails
    return np.exp(-0.5 * x * x - _LOG_SQRT_2PI - special.log_ndtr(x))


def _derivs(k, n, x):
    lp, lm = _mills(x), _mills(-x)
    d1 = k * lp - (n - k) * lm
    d2 = -k * lp * (x + lp) - (n - k) * lm * (lm - x)
    return d1, d2


def _binom_kernel(k, n, x):
    lo, hi = log_ndtr_pair(x)
    return k * lo + (n - k) * hi


class YearTerms:
    """Per-year binomial log-likelihood as a function of the latent factor."""

    def __init__(self, history):
        if len(history) == 0:
            raise DomainError("history must be nonempty")
        self.n = history.n_array
        self.k = history.k_array
        self.logc = log_binom_coef(self.n, self.k)
        self.T = len(history)

    def loglik_x(self, x):
        """Year log-likelihood at standardized threshold x = (Y - sqrt(rho) s) / sqrt(1 - rho)."""
        lo, hi = log_ndtr_pair(x)
        return self.logc + self.k * lo + (self.n - self.k) * hi

    def derivs_x(self, x):
        """First and second derivatives of :meth:`loglik_x` in x."""
        return _derivs(self.k, self.n, x)

    def independent_loglik(self, p):
        return float(np.sum(self.logc + self.k * math.log(p) + (self.n - self.k) * math.log1p(-p)))


@lru_cache(maxsize=256)
def _kernel_factor(kernel, T):
    return cholesky_psd(toeplitz_from_kernel(kernel, T), max_jitter=1e-6).lower


def kernel_factor(kernel, T):
    """Cached lower Cholesky factor of the T x T kernel correlation matrix."""
    return _kernel_factor(kernel, int(T))


def _reduce(logw):
    """log(mean(exp(logw))) and its delta-method standard error."""
    n = logw.size
    m = np.max(logw)
    if not np.isfinite(m):
        return LikelihoodEstimate(-math.inf, math.inf, True)
    w = np.exp(logw - m)
    mean = w.mean()
    sd = w.std(ddof=1) if n > 1 else 0.0
    return LikelihoodEstimate(float(m + math.log(mean)), float(sd / (mean * math.sqrt(n))))


def _coeffs(params):
    scale = 1.0 / math.sqrt(1.0 - params.rho_A)
    return params.Y * scale, math.sqrt(params.rho_A) * scale


class LaplaceFit:
    """Mode and curvature of the posterior of u (S = L u, u ~ N(0, I)) given the data."""

    def __init__(self, terms, L, a, b, u0=None, tol=1e-9, step_tol=1e-7, max_iter=50):
        T = terms.T
        u = np.zeros(T) if u0 is None else np.array(u0, dtype=float)

        def objective(u):
            s = L @ u
            return -0.5 * u @ u + float(np.sum(terms.loglik_x(a - b * s))), s

        val, s = objective(u)
        eye = np.eye(T)
        for _ in range(max_iter):
            d1, d2 = terms.derivs_x(a - b * s)
            grad = -u - b * (L.T @ d1)
            w = -(b * b) * d2
            H = eye + (L.T * w) @ L
            chol = linalg.cho_factor(H, lower=True, check_finite=False)
            step = linalg.cho_solve(chol, grad, check_finite=False)
            t = 1.0
            while True:
                new_u = u + t * step
                new_val, new_s = objective(new_u)
                if new_val >= val - 1e-12 or t < 1e-8:
                    break
                t *= 0.5
            u, s = new_u, new_s
            done = abs(new_val - val) < tol and float(np.max(np.abs(t * step))) < step_tol
            val = new_val
            if done:
                break
        d1, d2 = terms.derivs_x(a - b * s)
        w = -(b * b) * d2
        H = eye + (L.T * w) @ L
        self.mode = u
        self.x_mode = a - b * s
        self.value = val
        self.chol = np.linalg.cholesky(H)
        self.logdet_half = float(np.sum(np.log(np.diag(self.chol))))

    @property
    def laplace_loglik(self):
        return self.value - self.logdet_half


def path_logliks(terms, params, z, method="laplace", L=None, u0=None, return_fit=False, loose=False):
    """Per-path log importance weights for standard-normal draws ``z`` of shape (N, T).

    ``u0`` warm-starts the mode search of the ``laplace`` proposal. With
    ``loose`` the search stops early; the estimate stays unbiased but then
    depends slightly on ``u0``.
    """
    if L is None:
        L = kernel_factor(params.kernel, terms.T)
    a, b = _coeffs(params)
    if method == "prior":
        s = z @ L.T
        out = np.sum(terms.loglik_x(a - b * s), axis=1)
        return (out, None) if return_fit else out
    if method != "laplace":
        raise DomainError(f"unknown likelihood method {method!r}")
    tol = dict(tol=1e-6, step_tol=1e-3) if loose else {}
    fit = LaplaceFit(terms, L, a, b, u0=u0, **tol)
    # u = mode + C^{-T} z has density N(mode, H^{-1})
    v = linalg.solve_triangular(fit.chol, z.T, lower=True, trans="T", check_finite=False)
    u = fit.mode[None, :] + v.T
    s = u @ L.T
    ll = np.sum(terms.loglik_x(a - b * s), axis=1)
    out = ll - 0.5 * np.sum(u * u, axis=1) + 0.5 * np.sum(z * z, axis=1) - fit.logdet_half
    return (out, fit) if return_fit else out


def mc_log_likelihood(history, params, n_paths=4096, seed=0, method="laplace", terms=None, z=None):
    """Log of the path-averaged product of binomial pmfs, with its MC standard error.

    Binomial coefficients are included. At rho_A = 0 the result is the exact
    independent-binomial log-likelihood with zero error. ``z`` (standard
    normals, shape (n_paths, T)) may be passed to reuse common random numbers.
    """
    if n_paths < 2:
        raise DomainError("n_paths must be >= 2")
    terms = terms or YearTerms(history)
    if params.rho_A == 0.0:
        return LikelihoodEstimate(terms.independent_loglik(params.p), 0.0)
    if z is None:
        z = rng.normals(seed, rng.LIKELIHOOD_PATHS, 0, n_paths, terms.T)
    return _reduce(path_logliks(terms, params, z, method))


class LikelihoodEvaluator:
    """Repeated likelihood evaluations on one history.

    With ``z`` fixed every call uses the same path normals (common random
    numbers) and the result depends only on the parameters; otherwise
    ``seed`` picks fresh paths and the last Laplace mode warm-starts the next
    mode search.
    """

    def __init__(self, history, n_paths=4096, method="laplace", z=None):
        if n_paths < 2:
            raise DomainError("n_paths must be >= 2")
        if method not in METHODS:
            raise DomainError(f"unknown likelihood method {method!r}")
        self.terms = YearTerms(history)
        self.n_paths = int(n_paths)
        self.method = method
        self.z = z
        # empirical thresholds: a fixed start that keeps common-random-number
        # objectives an exact function of the parameters
        self._x_data = special.ndtri((self.terms.k + 0.5) / (self.terms.n + 1.0))
        self._x = None

    def _start(self, params, L, x):
        # thresholds at the mode are pinned by the data, so a threshold path
        # carries over between parameter sets; map it to u for this kernel
        a, b = _coeffs(params)
        s0 = np.clip((a - x) / b, -8.0, 8.0)
        return linalg.solve_triangular(L, s0, lower=True, check_finite=False)

    def _keep(self, fit):
        if fit is not None and np.all(np.isfinite(fit.x_mode)):
            self._x = fit.x_mode

    def estimate(self, params, seed=None):
        if params.rho_A == 0.0:
            return LikelihoodEstimate(self.terms.independent_loglik(params.p), 0.0)
        z = self.z
        if z is None or seed is not None:
            z = rng.normals(0 if seed is None else seed, rng.LIKELIHOOD_PATHS, 0, self.n_paths, self.terms.T)
        L = kernel_factor(params.kernel, self.terms.T)
        fresh = z is not self.z
        u0 = None
        if self.method == "laplace":
            # fresh paths already make the estimate random, so warm-start from
            # the last mode and stop early; fixed paths get a fixed start
            x = self._x if fresh and self._x is not None else self._x_data
            u0 = self._start(params, L, x)
        logw, fit = path_logliks(self.terms, params, z, self.method, L=L, u0=u0, return_fit=True, loose=fresh)
        self._keep(fit)
        return _reduce(logw)

    def laplace(self, params):
        """Deterministic Laplace approximation of the log-likelihood."""
        if params.rho_A == 0.0:
            return self.terms.independent_loglik(params.p)
        a, b = _coeffs(params)
        L = kernel_factor(params.kernel, self.terms.T)
        fit = LaplaceFit(self.terms, L, a, b, u0=self._start(params, L, self._x_data))
        return fit.laplace_loglik


_GH_X, _GH_W = special.roots_hermite(32)
_GH_LOGW = np.log(_GH_W) + _GH_X**2


def _gauss_1d(k, n, logc, a, b, mu, var):
    """Integrate Binom(k; n, Phi(a - b s)) against N(s; mu, var).

    Arrays broadcast elementwise. Adaptive Gauss-Hermite centred at the
    posterior mode of s with the curvature there as scale. Returns the log
    integral and the posterior mean and variance of s.
    """
    k, n, logc, a, b, mu, var = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (k, n, logc, a, b, mu, var)))

    def h(s):
        return _binom_kernel(k, n, a - b * s) - 0.5 * (s - mu) ** 2 / var

    s = mu.copy()
    hv = h(s)
    for _ in range(100):
        d1, d2 = _derivs(k, n, a - b * s)
        step = (-b * d1 - (s - mu) / var) / (1.0 / var - b * b * d2)
        t = np.ones_like(s)
        new = s + step
        hn = h(new)
        for _ in range(40):
            # concave objective: halve the step wherever it went downhill
            bad = hn < hv - 1e-12
            if not np.any(bad):
                break
            t = np.where(bad, 0.5 * t, t)
            new = np.where(bad, s + t * step, new)
            hn = np.where(bad, h(new), hn)
        moved = np.max(np.abs(new - s)) if s.size else 0.0
        s, hv = new, hn
        if moved < 1e-10:
            break
    _, d2 = _derivs(k, n, a - b * s)
    sigma = 1.0 / np.sqrt(1.0 / var - b * b * d2)
    scale = math.sqrt(2.0) * sigma
    nodes = s[..., None] + scale[..., None] * _GH_X
    logf = (_binom_kernel(k[..., None], n[..., None], a[..., None] - b[..., None] * nodes)
            - 0.5 * (nodes - mu[..., None]) ** 2 / var[..., None])
    logw = _GH_LOGW + logf
    top = np.max(logw, axis=-1, keepdims=True)
    w = np.exp(logw - top)
    total = np.sum(w, axis=-1)
    log_z = logc + top[..., 0] + np.log(total) + np.log(scale) - 0.5 * np.log(2.0 * math.pi * var)
    w /= total[..., None]
    mean = np.sum(w * nodes, axis=-1)
    post_var = np.sum(w * (nodes - mean[..., None]) ** 2, axis=-1)
    return log_z, mean, post_var


def year_marginal_logliks(terms, params):
    """log p(k_t | p, rho_A) for each year, integrating S_t ~ N(0, 1) alone."""
    if params.rho_A == 0.0:
        p = params.p
        return terms.logc + terms.k * math.log(p) + (terms.n - terms.k) * math.log1p(-p)
    a, b = _coeffs(params)
    return _gauss_1d(terms.k, terms.n, terms.logc, a, b, 0.0, 1.0)[0]


def one_step_logliks(terms, params_list):
    """log p(k_t | k_1..k_{t-1}, params) for each year, for a batch of parameter sets.

    Returns an array (len(params_list), T). The latent path is filtered
    forward under a Gaussian approximation: at each year the predictive of
    S_t is integrated against the binomial term by adaptive Gauss-Hermite,
    and the Gaussian over the remaining years is conditioned on the matched
    mean and variance of S_t. The rows sum to an approximation of the joint
    log-likelihood.
    """
    m = len(params_list)
    T = terms.T
    coeffs = np.array([_coeffs(pr) for pr in params_list]).reshape(m, 2)
    a, b = coeffs[:, 0], coeffs[:, 1]
    lags = np.arange(T)
    d = np.array([pr.kernel.values(lags) for pr in params_list]).reshape(m, T)
    idx = np.abs(lags[:, None] - lags[None, :])
    P = d[:, idx]
    mu = np.zeros((m, T))
    out = np.empty((m, T))
    for t in range(T):
        v = P[:, t, t]
        log_z, mean, post_var = _gauss_1d(terms.k[t], terms.n[t], terms.logc[t], a, b, mu[:, t], v)
        out[:, t] = log_z
        if t + 1 < T:
            gain = P[:, t + 1:, t] / v[:, None]
            mu[:, t + 1:] += gain * (mean - mu[:, t])[:, None]
            P[:, t + 1:, t + 1:] -= (v - post_var)[:, None, None] * gain[:, :, None] * gain[:, None, :]
    return out
