"""Single-factor Merton model: decay kernels, conditional PD and correlation mapping."""

import math
from dataclasses import dataclass, field
from typing import ClassVar, Union

import numpy as np
from scipy import optimize, special

from .errors import DomainError
from .gaussian import bivariate_normal_excess, std_normal_pdf, std_normal_quantile


@dataclass(frozen=True)
class Exponential:
    """Short-memory kernel d_i = theta**i."""

    theta: float
    family: ClassVar[str] = "exponential"

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise DomainError(f"theta must lie in [0, 1], got {self.theta}")

    @property
    def param(self):
        return self.theta

    def values(self, lags):
        lags = np.asarray(lags, dtype=float)
        # 0.0 ** 0 == 1.0 keeps d_0 = 1 at theta = 0
        return np.power(self.theta, lags)


@dataclass(frozen=True)
class Power:
    """Long/intermediate-memory kernel d_i = (i + 1)**(-gamma)."""

    gamma: float
    family: ClassVar[str] = "power"

    def __post_init__(self):
        if not self.gamma >= 0.0 or not math.isfinite(self.gamma):
            raise DomainError(f"gamma must be a finite nonnegative number, got {self.gamma}")

    @property
    def param(self):
        return self.gamma

    def values(self, lags):
        lags = np.asarray(lags, dtype=float)
        return np.power(lags + 1.0, -self.gamma)


DecayKernel = Union[Exponential, Power]

FAMILIES = {"exponential": Exponential, "power": Power}


def make_kernel(family, param):
    try:
        cls = FAMILIES[family]
    except KeyError:
        raise DomainError(f"unknown kernel family {family!r}") from None
    return cls(float(param))


def kernel_value(kernel, i):
    """d_i for a nonnegative lag ``i`` (scalar or array)."""
    arr = np.asarray(i)
    if np.any(arr < 0):
        raise DomainError("lag must be nonnegative")
    out = kernel.values(arr)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ModelParams:
    p: float
    rho_A: float
    kernel: DecayKernel
    Y: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise DomainError(f"p must lie in (0, 1), got {self.p}")
        if not 0.0 <= self.rho_A < 1.0:
            raise DomainError(f"rho_A must lie in [0, 1), got {self.rho_A}")
        object.__setattr__(self, "Y", float(special.ndtri(self.p)))

    def with_kernel(self, kernel):
        return ModelParams(self.p, self.rho_A, kernel)


def conditional_pd(params, s):
    """G(s) = Phi((Y - sqrt(rho_A) s) / sqrt(1 - rho_A))."""
    s = np.asarray(s, dtype=float)
    rho = params.rho_A
    out = special.ndtr((params.Y - math.sqrt(rho) * s) / math.sqrt(1.0 - rho))
    return float(out) if out.ndim == 0 else out


def _check_p(p):
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p}")


def map_asset_to_default(p, rho_A):
    """Default correlation f(rho_A) = (Phi2(Y, Y; rho_A) - p^2) / (p (1 - p))."""
    _check_p(p)
    rho = np.asarray(rho_A, dtype=float)
    if np.any((rho < 0.0) | (rho > 1.0)):
        raise DomainError("rho_A must lie in [0, 1]")
    y = special.ndtri(p)
    # Phi(Y)^2 cancels inside the excess; at rho = 1 the excess is p - p^2
    out = bivariate_normal_excess(y, y, rho) / (p * (1.0 - p))
    return float(out) if np.ndim(out) == 0 else out


def map_default_to_asset(p, rho_D):
    """Inverse of :func:`map_asset_to_default` by bracketed root finding."""
    _check_p(p)
    if not 0.0 <= rho_D <= 1.0:
        raise DomainError(f"rho_D must lie in [0, 1], got {rho_D}")
    if rho_D == 0.0:
        return 0.0
    # f(1) may round just below 1; anything at or above it maps to 1
    if rho_D >= map_asset_to_default(p, 1.0):
        return 1.0
    return optimize.brentq(lambda r: map_asset_to_default(p, r) - rho_D, 0.0, 1.0,
                           xtol=1e-15, maxiter=200)


def tangent_slope_A(p, mode="plackett"):
    """Slope of f at the origin.

    ``plackett`` gives f'(0) = phi(Y)^2 / (p (1 - p)). ``paper_eq7`` evaluates
    the closed form with the CDF-type integral, which reduces to p / (1 - p)
    and is kept for comparison only.
    """
    _check_p(p)
    if mode == "plackett":
        y = std_normal_quantile(p)
        return float(std_normal_pdf(y) ** 2 / (p * (1.0 - p)))
    if mode == "paper_eq7":
        integral = math.sqrt(2.0 * math.pi) * p
        return integral**2 / (2.0 * math.pi * p * (1.0 - p))
    raise DomainError(f"unknown mode {mode!r}")


def cross_time_default_correlation(params, t):
    """C(t) = f(rho_A d_t) between defaults t years apart."""
    t = np.asarray(t)
    if np.any(t < 1):
        raise DomainError("lag t must be >= 1")
    return map_asset_to_default(params.p, params.rho_A * params.kernel.values(t))
