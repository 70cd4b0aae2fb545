import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, optimize, stats

from mertonpd import rng
from mertonpd.errors import DomainError, NotPositiveSemidefiniteError
from mertonpd.gaussian import (ar1_paths, bivariate_normal_cdf, bivariate_normal_pdf, cholesky_psd,
                               sample_gaussian_path, sample_gaussian_paths, sample_kernel_paths,
                               std_normal_cdf, std_normal_quantile, toeplitz_from_kernel)
from mertonpd.model import Exponential, Power

from oracles import bvn_conditional, bvn_dblquad, phi2_closed_origin

finite = st.floats(-8, 8, allow_nan=False)
corr = st.floats(-1, 1, allow_nan=False)


# std_normal_cdf

def test_cdf_at_zero():
    assert std_normal_cdf(0.0) == 0.5


@given(finite)
def test_cdf_reflection(x):
    assert abs(std_normal_cdf(x) - (1.0 - std_normal_cdf(-x))) <= 1e-15


def test_cdf_matches_density_quadrature():
    val, _ = integrate.quad(stats.norm.pdf, -np.inf, -1.959964, epsabs=1e-14)
    assert abs(std_normal_cdf(-1.959964) - 0.025) <= 1e-6
    assert abs(std_normal_cdf(-1.959964) - val) <= 1e-12


def test_cdf_monotone_and_bounded():
    x = np.linspace(-40, 40, 20001)
    y = std_normal_cdf(x)
    assert np.all(np.diff(y) >= 0) and y.min() >= 0 and y.max() <= 1


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_cdf_rejects_non_finite(bad):
    with pytest.raises(DomainError):
        std_normal_cdf(bad)


# std_normal_quantile

def test_quantile_median():
    assert std_normal_quantile(0.5) == 0.0


@given(st.floats(-6, 6))
def test_quantile_round_trip(x):
    assert abs(std_normal_quantile(std_normal_cdf(x)) - x) <= 1e-8


def test_quantile_of_average_pd_against_bisection():
    root = optimize.bisect(lambda x: std_normal_cdf(x) - 0.0151, -5, 0, xtol=1e-14)
    q = std_normal_quantile(0.0151)
    # the bisection oracle puts the root at -2.16746, not at the tabulated -2.1686
    assert abs(root - (-2.16746)) <= 1e-5
    assert abs(q - root) <= 1e-10
    assert abs(std_normal_cdf(q) - 0.0151) <= 1e-10


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.5, math.nan])
def test_quantile_rejects_outside_open_interval(bad):
    with pytest.raises(DomainError):
        std_normal_quantile(bad)


# bivariate_normal_cdf

def test_bvn_independent_origin():
    assert abs(bivariate_normal_cdf(0, 0, 0) - 0.25) <= 1e-15


def test_bvn_origin_closed_form_and_2d_quadrature():
    val = bivariate_normal_cdf(0, 0, 0.5)
    assert abs(val - 1 / 3) <= 1e-9
    assert abs(phi2_closed_origin(0.5) - 1 / 3) <= 1e-15
    assert abs(bvn_dblquad(0, 0, 0.5) - val) <= 1e-10


@given(finite, finite)
def test_bvn_comonotone_limit(h, k):
    assert abs(bivariate_normal_cdf(h, k, 1.0) - std_normal_cdf(min(h, k))) <= 1e-15


@given(finite, finite)
def test_bvn_countermonotone_limit(h, k):
    expect = max(0.0, std_normal_cdf(h) - std_normal_cdf(-k))
    assert abs(bivariate_normal_cdf(h, k, -1.0) - expect) <= 1e-14


@settings(max_examples=300)
@given(finite, finite, corr)
def test_bvn_symmetry(h, k, r):
    assert bivariate_normal_cdf(h, k, r) == pytest.approx(bivariate_normal_cdf(k, h, r), abs=1e-15)


@given(finite, finite)
def test_bvn_zero_correlation_is_product(h, k):
    assert abs(bivariate_normal_cdf(h, k, 0.0) - std_normal_cdf(h) * std_normal_cdf(k)) <= 1e-10


@given(finite, corr)
def test_bvn_infinite_limit(k, r):
    assert abs(bivariate_normal_cdf(math.inf, k, r) - std_normal_cdf(k)) <= 1e-10
    assert bivariate_normal_cdf(-math.inf, k, r) == 0.0


@settings(max_examples=60, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-0.999, 0.999))
def test_bvn_against_conditional_quadrature(h, k, r):
    assert abs(bivariate_normal_cdf(h, k, r) - bvn_conditional(h, k, r)) <= 1e-10


@settings(max_examples=60, deadline=None)
@given(st.floats(-4, 4), st.floats(-4, 4), st.floats(-0.99, 0.99))
def test_plackett_identity(h, k, r):
    eps = 1e-5
    lo, hi = max(-1.0, r - eps), min(1.0, r + eps)
    deriv = (bivariate_normal_cdf(h, k, hi) - bivariate_normal_cdf(h, k, lo)) / (hi - lo)
    dens = bivariate_normal_pdf(h, k, r)
    if dens < 1e-8:
        # both sides vanish; compare absolutely
        assert abs(deriv - dens) <= 1e-8
    else:
        assert abs(deriv - dens) <= 1e-4 * dens


@pytest.mark.parametrize("bad", [1.0000001, -1.5, math.nan])
def test_bvn_rejects_bad_rho(bad):
    with pytest.raises(DomainError):
        bivariate_normal_cdf(0.0, 0.0, bad)


def test_bvn_vectorized_matches_scalar():
    h = np.array([-1.0, 0.3, 2.0])
    k = np.array([0.5, -0.2, 1.0])
    r = np.array([0.2, 0.95, -0.4])
    out = bivariate_normal_cdf(h, k, r)
    for i in range(3):
        assert out[i] == bivariate_normal_cdf(h[i], k[i], r[i])


# toeplitz_from_kernel

def test_toeplitz_exponential_zero_is_identity():
    assert np.array_equal(toeplitz_from_kernel(Exponential(0.0), 3), np.eye(3))


def test_toeplitz_power_zero_is_all_ones():
    assert np.array_equal(toeplitz_from_kernel(Power(0.0), 3), np.ones((3, 3)))


def test_toeplitz_exponential_entries():
    m = toeplitz_from_kernel(Exponential(0.9), 3)
    assert m[0, 1] == pytest.approx(0.9) and m[0, 2] == pytest.approx(0.81)
    assert m[2, 0] == pytest.approx(0.81)


def test_toeplitz_rejects_zero_dimension():
    with pytest.raises(DomainError):
        toeplitz_from_kernel(Exponential(0.5), 0)


kernels = st.one_of(st.floats(0, 1).map(Exponential), st.floats(0, 20).map(Power))


@settings(deadline=None, max_examples=50)
@given(kernels, st.integers(1, 40))
def test_toeplitz_structure(kernel, T):
    m = toeplitz_from_kernel(kernel, T)
    assert np.array_equal(m, m.T)
    assert np.all(np.diag(m) == 1.0)
    for lag in range(T):
        assert np.all(np.diag(m, lag) == m[0, lag])


# cholesky_psd

def test_cholesky_identity():
    f = cholesky_psd(np.eye(4))
    assert np.array_equal(f.lower, np.eye(4)) and f.jitter == 0.0


def test_cholesky_two_by_two_by_hand():
    f = cholesky_psd(np.array([[1.0, 0.6], [0.6, 1.0]]))
    assert np.allclose(f.lower, [[1.0, 0.0], [0.6, 0.8]], atol=1e-15) and f.jitter == 0.0


def test_cholesky_rank_deficient_all_ones():
    sigma = np.ones((3, 3))
    assert np.allclose(np.linalg.eigvalsh(sigma), [0, 0, 3], atol=1e-12)
    f = cholesky_psd(sigma)
    assert f.jitter <= 1e-8
    assert np.max(np.abs(f.lower @ f.lower.T - sigma)) <= f.jitter + 1e-10


def test_cholesky_not_psd_reports_failed_jitter():
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(NotPositiveSemidefiniteError) as info:
        cholesky_psd(bad, max_jitter=1e-9)
    assert 0 < info.value.failed_jitter <= 1e-9


@pytest.mark.parametrize("kernel", [Exponential(0.0), Exponential(0.5), Exponential(0.999), Exponential(1.0),
                                    Power(0.0), Power(1e-3), Power(0.3), Power(1.0), Power(5.0)])
@pytest.mark.parametrize("T", [1, 17, 512, 2048])
def test_valid_kernels_factor_with_small_jitter(kernel, T):
    sigma = toeplitz_from_kernel(kernel, T)
    f = cholesky_psd(sigma, max_jitter=1e-8)
    assert f.jitter <= 1e-8
    if T <= 512:
        assert np.max(np.abs(f.lower @ f.lower.T - sigma)) <= f.jitter + 1e-10


# path sampling

def test_identity_factor_gives_standard_normals():
    f = cholesky_psd(np.eye(3))
    z = sample_gaussian_paths(f, seed=11, count=100_000)
    assert np.all(np.abs(z.mean(axis=0)) <= 0.02)
    assert np.all(np.abs(z.var(axis=0) - 1.0) <= 0.02)


def test_same_seed_same_path():
    f = cholesky_psd(toeplitz_from_kernel(Power(0.5), 10))
    assert np.array_equal(sample_gaussian_path(f, 5), sample_gaussian_path(f, 5))
    assert not np.array_equal(sample_gaussian_path(f, 5), sample_gaussian_path(f, 6))


def test_two_dimensional_correlation():
    f = cholesky_psd(np.array([[1.0, 0.9], [0.9, 1.0]]))
    z = sample_gaussian_paths(f, seed=3, count=100_000)
    assert abs(np.corrcoef(z.T)[0, 1] - 0.9) <= 0.01


def test_path_index_addresses_batch_rows():
    f = cholesky_psd(toeplitz_from_kernel(Exponential(0.7), 6))
    batch = sample_gaussian_paths(f, seed=9, count=20, start=5)
    for i in (0, 7, 19):
        assert np.array_equal(batch[i], sample_gaussian_path(f, 9, index=5 + i))


def test_batches_independent_of_chunking_and_threads(monkeypatch):
    monkeypatch.setattr(rng, "CHUNK_ROWS", 7)
    monkeypatch.setenv("MERTON_THREADS", "3")
    a = rng.normals(4, rng.PATHS, 3, 50, 5)
    monkeypatch.setattr(rng, "CHUNK_ROWS", 4096)
    monkeypatch.setenv("MERTON_THREADS", "1")
    b = rng.normals(4, rng.PATHS, 3, 50, 5)
    assert np.array_equal(a, b)


def test_uniforms_open_interval():
    u = rng.uniforms(0, rng.PATHS, 0, 1000, 10)
    assert u.min() > 0 and u.max() < 1


@pytest.mark.parametrize("kernel", [Exponential(0.8), Power(0.5)])
def test_batch_correlations_within_mc_band(kernel):
    T, N = 6, 40_000
    sigma = toeplitz_from_kernel(kernel, T)
    z = sample_kernel_paths(kernel, T, seed=21, count=N)
    emp = np.corrcoef(z.T)
    # Fisher-z 3 sigma band
    band = 3.0 / math.sqrt(N - 3)
    for i in range(T):
        for j in range(i + 1, T):
            assert abs(np.arctanh(emp[i, j]) - np.arctanh(sigma[i, j])) <= band


def test_ar1_sampler_moment_match():
    theta, T, N = 0.9, 40, 40_000
    z = ar1_paths(theta, rng.normals(2, rng.PATHS, 0, N, T))
    assert np.all(np.abs(z.var(axis=0) - 1.0) <= 0.05)
    band = 3.0 / math.sqrt(N - 3)
    for lag in (1, 2, 5):
        r = np.corrcoef(z[:, 10], z[:, 10 + lag])[0, 1]
        assert abs(np.arctanh(r) - np.arctanh(theta**lag)) <= band


def test_auto_sampler_switches_to_ar1_for_long_exponential():
    kernel = Exponential(0.6)
    a = sample_kernel_paths(kernel, 5000, seed=1, count=2)
    b = sample_kernel_paths(kernel, 5000, seed=1, count=2, method="ar1")
    assert np.array_equal(a, b)
    with pytest.raises(DomainError):
        sample_kernel_paths(Power(0.5), 10, seed=1, count=1, method="ar1")
