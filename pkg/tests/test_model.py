import math

import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st
from scipy import integrate, special, stats

from mertonpd.errors import DomainError
from mertonpd.gaussian import bivariate_normal_cdf, std_normal_cdf
from mertonpd.model import (Exponential, ModelParams, Power, conditional_pd, cross_time_default_correlation,
                            kernel_value, make_kernel, map_asset_to_default, map_default_to_asset,
                            tangent_slope_A)

from oracles import phi2_closed_origin

probs = st.floats(1e-4, 0.9999)
unit = st.floats(0.0, 1.0)


# kernel_value

def test_kernel_value_examples():
    assert kernel_value(Power(1.0), 1) == 0.5
    assert kernel_value(Exponential(0.8), 3) == pytest.approx(0.512, abs=1e-15)
    assert kernel_value(Power(0.5), 99) == pytest.approx(0.1, abs=1e-15)


@given(st.one_of(st.floats(0, 1).map(Exponential), st.floats(0, 50).map(Power)))
def test_kernel_value_shape(kernel):
    assert kernel_value(kernel, 0) == 1.0
    v = kernel_value(kernel, np.arange(60))
    assert np.all(np.diff(v) <= 0)
    assert np.all(v >= 0) and np.all(v <= 1)
    if kernel.family == "power":
        assert np.all(v > 0)


def test_kernel_validation():
    for bad in (-0.1, 1.1):
        with pytest.raises(DomainError):
            Exponential(bad)
    for bad in (-1.0, math.nan, math.inf):
        with pytest.raises(DomainError):
            Power(bad)
    with pytest.raises(DomainError):
        make_kernel("gaussian", 1.0)
    with pytest.raises(DomainError):
        kernel_value(Power(1.0), -1)


# ModelParams and conditional_pd

def test_model_params_validation():
    for p in (0.0, 1.0, -0.1):
        with pytest.raises(DomainError):
            ModelParams(p, 0.1, Power(1.0))
    for r in (1.0, -0.01):
        with pytest.raises(DomainError):
            ModelParams(0.1, r, Power(1.0))


@given(probs)
def test_threshold_consistent_with_p(p):
    assert abs(std_normal_cdf(ModelParams(p, 0.2, Power(1.0)).Y) - p) <= 1e-10


@given(probs, st.floats(-5, 5))
def test_conditional_pd_without_factor(p, s):
    assert conditional_pd(ModelParams(p, 0.0, Exponential(0.5)), s) == pytest.approx(p, rel=1e-12)


def test_conditional_pd_examples():
    assert conditional_pd(ModelParams(0.5, 0.5, Power(1.0)), 0.0) == 0.5
    expect = std_normal_cdf((-1.28155 + 0.5) / math.sqrt(0.75))
    got = conditional_pd(ModelParams(0.1, 0.25, Power(1.0)), -1.0)
    assert abs(got - 0.1834) <= 1e-3 and abs(got - expect) <= 1e-4


@given(probs, st.floats(0.01, 0.95))
def test_conditional_pd_decreasing_and_averages_to_p(p, rho):
    params = ModelParams(p, rho, Power(1.0))
    s = np.linspace(-6, 6, 101)
    g = conditional_pd(params, s)
    assert np.all(np.diff(g) <= 0)
    mean, _ = integrate.quad(lambda x: conditional_pd(params, x) * stats.norm.pdf(x), -np.inf, np.inf,
                             epsabs=1e-13, epsrel=1e-10, limit=200)
    assert mean == pytest.approx(p, rel=1e-6, abs=1e-12)


# mapping f

@pytest.mark.parametrize("p", [0.001, 0.01, 0.05, 0.1, 0.3, 0.5])
def test_mapping_endpoints(p):
    assert abs(map_asset_to_default(p, 0.0)) <= 1e-9
    assert abs(map_asset_to_default(p, 1.0) - 1.0) <= 1e-9


def test_mapping_closed_form_at_half():
    expect = (phi2_closed_origin(0.5) - 0.25) / 0.25
    assert abs(map_asset_to_default(0.5, 0.5) - 1 / 3) <= 1e-8
    assert abs(expect - 1 / 3) <= 1e-12


def test_mapping_rejects_bad_p():
    for p in (0.0, 1.0):
        with pytest.raises(DomainError):
            map_asset_to_default(p, 0.3)


@settings(deadline=None)
@given(probs, st.floats(0.0, 0.999), st.floats(1e-4, 0.001))
def test_mapping_strictly_increasing(p, rho, gap):
    assert map_asset_to_default(p, rho + gap) > map_asset_to_default(p, rho)


@settings(deadline=None)
@given(probs, unit, unit)
def test_mapping_convexity_scaling(p, x, rho):
    assert map_asset_to_default(p, x * rho) <= x * map_asset_to_default(p, rho) + 1e-9


@settings(deadline=None)
@given(st.floats(0.001, 0.999), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_sandwich(p, rho, d):
    a = tangent_slope_A(p)
    mid = map_asset_to_default(p, rho * d)
    assert a * rho * d < mid + 1e-9
    assert mid < map_asset_to_default(p, rho) * d + 1e-9


def test_mapping_matches_direct_bvn_difference():
    for p, rho in [(0.2, 0.3), (0.01, 0.7), (0.5, 0.9)]:
        y = float(special.ndtri(p))
        direct = (bivariate_normal_cdf(y, y, rho) - p * p) / (p * (1 - p))
        assert map_asset_to_default(p, rho) == pytest.approx(direct, abs=1e-12)


# inverse mapping

def test_inverse_mapping_examples():
    assert map_default_to_asset(0.3, 0.0) == 0.0
    assert map_default_to_asset(0.3, 1.0) == 1.0
    assert abs(map_default_to_asset(0.5, 1 / 3) - 0.5) <= 1e-6
    for bad in (-0.1, 1.1):
        with pytest.raises(DomainError):
            map_default_to_asset(0.3, bad)


@settings(deadline=None)
@given(st.floats(0.001, 0.999), st.floats(0.0, 0.99))
def test_inverse_round_trip(p, rho):
    back = map_default_to_asset(p, map_asset_to_default(p, rho))
    assert abs(back - rho) <= 1e-6


@settings(deadline=None)
@given(st.floats(0.001, 0.999), st.floats(0.0, 1.0))
@example(0.04717533638651177, 0.9999999999999999)
def test_inverse_accuracy(p, rho_d):
    r = map_default_to_asset(p, rho_d)
    assert abs(map_asset_to_default(p, r) - rho_d) <= 1e-8


# tangent slope

def test_plackett_slope_at_half_against_finite_difference():
    eps = 1e-6
    fd = (bivariate_normal_cdf(0, 0, eps) - bivariate_normal_cdf(0, 0, -eps)) / (2 * eps) / 0.25
    a = tangent_slope_A(0.5)
    assert abs(a - 2 / math.pi) <= 1e-6
    assert abs(a - fd) <= 1e-6


def test_literal_closed_form_variant():
    assert tangent_slope_A(0.5, mode="paper_eq7") == pytest.approx(1.0, abs=1e-14)
    assert tangent_slope_A(0.1, mode="paper_eq7") == pytest.approx(0.1 / 0.9, rel=1e-13)
    with pytest.raises(DomainError):
        tangent_slope_A(0.5, mode="other")


@given(probs)
def test_slopes_positive(p):
    assert tangent_slope_A(p) > 0 and tangent_slope_A(p, "paper_eq7") > 0


@pytest.mark.parametrize("p", [0.01, 0.1, 0.5])
def test_tangent_below_curve(p):
    a = tangent_slope_A(p)
    for rho in np.arange(1, 10) / 10:
        assert a * rho <= map_asset_to_default(p, rho)


def test_slope_rejects_bad_p():
    with pytest.raises(DomainError):
        tangent_slope_A(1.0)


# cross-time correlation

def test_cross_time_zero_without_factor():
    params = ModelParams(0.1, 0.0, Power(0.5))
    assert np.all(cross_time_default_correlation(params, np.arange(1, 50)) == 0.0)


@given(st.floats(0.001, 0.99), st.floats(0.05, 0.95), st.floats(0.05, 0.99))
def test_cross_time_decreasing_for_exponential(p, rho, theta):
    c = cross_time_default_correlation(ModelParams(p, rho, Exponential(theta)), np.arange(1, 8))
    # strict while values are representable
    pos = c > 1e-300
    assert np.all(np.diff(c[pos]) < 0)


def test_cross_time_example():
    val = cross_time_default_correlation(ModelParams(0.5, 0.5, Power(1.0)), 1)
    expect = (phi2_closed_origin(0.25) - 0.25) / 0.25
    # the arcsin oracle gives f(0.25) = 0.160861; the tabulated 0.1667 is not reproduced
    assert abs(expect - 0.160861) <= 1e-6
    assert abs(val - expect) <= 1e-12


def test_cross_time_rejects_zero_lag():
    with pytest.raises(DomainError):
        cross_time_default_correlation(ModelParams(0.5, 0.5, Power(1.0)), 0)


@pytest.mark.parametrize("p", [0.01, 0.1, 0.5])
def test_cross_time_tangent_asymptote(p):
    params = ModelParams(p, 0.5, Power(1.0))
    a = tangent_slope_A(p)
    t = np.array([1000, 5000, 10**5])
    d = params.kernel.values(t)
    assert np.all(params.rho_A * d < 1e-3)
    ratio = cross_time_default_correlation(params, t) / (a * params.rho_A * d)
    assert np.all((ratio >= 0.99) & (ratio <= 1.01))
