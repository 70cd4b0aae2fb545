"""Normal distribution functions, Toeplitz correlation matrices and path sampling."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, signal, special

from . import rng
from .errors import DomainError, NotPositiveSemidefiniteError

_TWO_PI = 2.0 * math.pi

# Gauss-Legendre half-rules (abscissae in (0, 1), weights) for 6, 12 and 20 points.
_GL = {
    6: (
        np.array([0.9324695142031522, 0.6612093864662647, 0.2386191860831970]),
        np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904]),
    ),
    12: (
        np.array([0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
                  0.5873179542866171, 0.3678314989981802, 0.1252334085114692]),
        np.array([0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                  0.2031674267230659, 0.2334925365383547, 0.2491470458134029]),
    ),
    20: (
        np.array([0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
                  0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
                  0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
                  0.07652652113349733]),
        np.array([0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
                  0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
                  0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
                  0.1527533871307259]),
    ),
}
_NODES = {m: (np.concatenate([1.0 - x, 1.0 + x]), np.concatenate([w, w])) for m, (x, w) in _GL.items()}

AR1_THRESHOLD = 4096


def std_normal_cdf(x):
    """Standard normal CDF; rejects NaN and infinities."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("std_normal_cdf requires finite input")
    out = special.ndtr(arr)
    return float(out) if out.ndim == 0 else out


def std_normal_quantile(p):
    """Inverse standard normal CDF on the open interval (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError("std_normal_quantile requires 0 < p < 1")
    out = special.ndtri(arr)
    return float(out) if out.ndim == 0 else out


def std_normal_pdf(x):
    return np.exp(-0.5 * np.square(x)) / math.sqrt(_TWO_PI)


def _small_r_excess(h, k, r, m):
    # Plackett integral of the bivariate density from 0 to r, |r| < 0.925.
    x, w = _NODES[m]
    hk = h * k
    hs = 0.5 * (h * h + k * k)
    asr = 0.5 * np.arcsin(r)
    sn = np.sin(asr[:, None] * x[None, :])
    vals = np.exp((sn * hk[:, None] - hs[:, None]) / (1.0 - sn * sn)) @ w
    return vals * asr / _TWO_PI


def _large_r_upper(h, k, r):
    # Genz's treatment of |r| >= 0.925; returns P(X > h, Y > k).
    x, w = _NODES[20]
    k = np.where(r < 0, -k, k)
    hk = h * k
    bvn = np.zeros_like(h)
    inner = np.abs(r) < 1.0
    if np.any(inner):
        hi, ki, hki, ri = h[inner], k[inner], hk[inner], r[inner]
        as_ = 1.0 - ri * ri
        a = np.sqrt(as_)
        bs = (hi - ki) ** 2
        c = (4.0 - hki) / 8.0
        d = (12.0 - hki) / 80.0
        asr = -0.5 * (bs / as_ + hki)
        b0 = np.where(asr > -100.0,
                      a * np.exp(asr) * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_),
                      0.0)
        b = np.sqrt(bs)
        sp = math.sqrt(_TWO_PI) * special.ndtr(-b / a)
        with np.errstate(over="ignore"):
            b0 = np.where(hki > -100.0,
                          b0 - np.exp(-0.5 * hki) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0),
                          b0)
        a2 = 0.5 * a
        xs = (a2[:, None] * x[None, :]) ** 2
        with np.errstate(divide="ignore"):
            asr2 = -0.5 * (bs[:, None] / xs + hki[:, None])
        keep = asr2 > -100.0
        xs_c = np.where(keep, xs, 0.0)
        sp2 = 1.0 + c[:, None] * xs_c * (1.0 + 5.0 * d[:, None] * xs_c)
        rs = np.sqrt(1.0 - xs_c)
        ep = np.exp(-0.5 * hki[:, None] * xs_c / (1.0 + rs) ** 2) / rs
        terms = np.where(keep, np.exp(np.where(keep, asr2, 0.0)) * (sp2 - ep), 0.0)
        bvn[inner] = (a2 * (terms @ w) - b0) / _TWO_PI
    out = np.empty_like(h)
    pos = r > 0
    out[pos] = bvn[pos] + special.ndtr(-np.maximum(h[pos], k[pos]))
    neg = ~pos
    hn, kn, bn = h[neg], k[neg], bvn[neg]
    lower = np.where(hn < 0, special.ndtr(kn) - special.ndtr(hn), special.ndtr(-hn) - special.ndtr(-kn))
    out[neg] = np.where(hn >= kn, -bn, lower - bn)
    return out


def _bvn(h, k, rho):
    """Returns (cdf, excess) where excess = cdf - Phi(h) Phi(k)."""
    h, k, r = np.broadcast_arrays(np.asarray(h, dtype=float), np.asarray(k, dtype=float),
                                  np.asarray(rho, dtype=float))
    shape = h.shape
    h, k, r = h.ravel(), k.ravel(), r.ravel()
    if np.any(np.isnan(h) | np.isnan(k) | np.isnan(r)):
        raise DomainError("bivariate_normal_cdf: NaN input")
    if np.any(np.abs(r) > 1.0):
        raise DomainError("bivariate_normal_cdf requires |rho| <= 1")
    ph, pk = special.ndtr(h), special.ndtr(k)
    prod = ph * pk
    cdf = prod.copy()
    excess = np.zeros_like(h)

    finite = np.isfinite(h) & np.isfinite(k)
    # infinite limits: Phi2(inf, k) = Phi(k), Phi2(-inf, k) = 0, product form is exact there
    work = finite & (r != 0.0)
    small = work & (np.abs(r) < 0.925)
    for m, lo, hi in ((6, 0.0, 0.3), (12, 0.3, 0.75), (20, 0.75, 0.925)):
        sel = small & (np.abs(r) >= lo) & (np.abs(r) < hi)
        if np.any(sel):
            # lower orthant at (h, k) equals upper orthant at (-h, -k)
            ex = _small_r_excess(-h[sel], -k[sel], r[sel], m)
            excess[sel] = ex
            cdf[sel] = prod[sel] + ex
    large = work & ~small
    if np.any(large):
        c = _large_r_upper(-h[large], -k[large], r[large])
        cdf[large] = c
        excess[large] = c - prod[large]
    np.clip(cdf, 0.0, 1.0, out=cdf)
    return cdf.reshape(shape), excess.reshape(shape)


def bivariate_normal_cdf(h, k, rho):
    """P(X <= h, Y <= k) for a standard bivariate normal with correlation ``rho``.

    Drezner-Wesolowsky integration in the form given by Genz (6/12/20-point
    Gauss-Legendre by |rho| band, asymptotic expansion for |rho| >= 0.925).
    Accepts broadcastable arrays; ``h`` and ``k`` may be infinite.
    """
    cdf, _ = _bvn(h, k, rho)
    return float(cdf) if cdf.ndim == 0 else cdf


def bivariate_normal_excess(h, k, rho):
    """``Phi2(h, k; rho) - Phi(h) Phi(k)`` without cancellation for |rho| < 0.925.

    For small ``rho`` the Plackett integral is evaluated directly, so the
    result keeps full relative accuracy as ``rho -> 0``.
    """
    _, ex = _bvn(h, k, rho)
    return float(ex) if ex.ndim == 0 else ex


def bivariate_normal_pdf(h, k, rho):
    det = 1.0 - rho * rho
    return np.exp(-(h * h - 2.0 * rho * h * k + k * k) / (2.0 * det)) / (_TWO_PI * np.sqrt(det))


def toeplitz_from_kernel(kernel, T):
    """T x T correlation matrix with entry (t, t') = d_|t - t'|."""
    if int(T) != T or T < 1:
        raise DomainError(f"T must be a positive integer, got {T!r}")
    col = np.asarray(kernel.values(np.arange(int(T))), dtype=float)
    col[0] = 1.0
    return linalg.toeplitz(col)


@dataclass(frozen=True)
class CholeskyFactor:
    lower: np.ndarray
    jitter: float

    @property
    def dim(self):
        return self.lower.shape[0]


def cholesky_psd(sigma, max_jitter=1e-6):
    """Cholesky factor of a correlation matrix, adding diagonal jitter if needed.

    Tries no jitter first, then ``1e-12 * 2**j`` for j = 0, 1, ... while the
    jitter stays within ``max_jitter``.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise DomainError("sigma must be a square matrix")
    if max_jitter < 0:
        raise DomainError("max_jitter must be nonnegative")
    try:
        return CholeskyFactor(np.linalg.cholesky(sigma), 0.0)
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(sigma.shape[0])
    last = 0.0
    jitter = 1e-12
    while jitter <= max_jitter:
        try:
            return CholeskyFactor(np.linalg.cholesky(sigma + jitter * eye), jitter)
        except np.linalg.LinAlgError:
            last = jitter
            jitter *= 2.0
    raise NotPositiveSemidefiniteError(
        f"matrix is not positive semidefinite: Cholesky failed at jitter {last:.3g}", last)


def sample_gaussian_path(factor, seed, index=0):
    """Path ``index`` of the stream keyed by ``seed``: ``L @ z`` with z ~ N(0, I)."""
    # same arithmetic as the batch sampler so both agree bit for bit
    return sample_gaussian_paths(factor, seed, 1, start=index)[0]


def _apply_lower(lower, z):
    # row-wise products summed along contiguous rows: each output row depends
    # on its own z row only, bit for bit, whatever the batch size (BLAS gemm
    # and gemv round differently)
    T = lower.shape[0]
    out = np.empty_like(z)
    step = max(1, (1 << 22) // (T * T))
    for i in range(0, z.shape[0], step):
        out[i:i + step] = np.sum(lower[None, :, :] * z[i:i + step, None, :], axis=2)
    return out


def sample_gaussian_paths(factor, seed, count, start=0):
    """Paths ``start .. start + count - 1`` as rows of a ``(count, T)`` array."""
    z = rng.normals(seed, rng.PATHS, start, count, factor.dim)
    return _apply_lower(factor.lower, z)


def ar1_paths(theta, z):
    """Stationary AR(1) paths ``S_{t+1} = theta S_t + sqrt(1 - theta^2) z_{t+1}``.

    ``z`` has shape (count, T); S_1 = z_1.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    x = z * math.sqrt(max(0.0, 1.0 - theta * theta))
    x[:, 0] = z[:, 0]
    return signal.lfilter([1.0], [1.0, -theta], x, axis=1)


def sample_kernel_paths(kernel, T, seed, count, start=0, method="auto", max_jitter=1e-6):
    """Paths with correlation matrix ``toeplitz_from_kernel(kernel, T)``.

    ``method`` is "cholesky", "ar1" (exponential kernels only) or "auto",
    which picks the AR(1) recursion for exponential kernels when T > 4096.
    """
    if method == "auto":
        method = "ar1" if kernel.family == "exponential" and T > AR1_THRESHOLD else "cholesky"
    if method == "ar1":
        if kernel.family != "exponential":
            raise DomainError("AR(1) sampling requires an exponential kernel")
        return ar1_paths(kernel.theta, rng.normals(seed, rng.PATHS, start, count, T))
    factor = cholesky_psd(toeplitz_from_kernel(kernel, T), max_jitter)
    return sample_gaussian_paths(factor, seed, count, start)
