import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import norm

from catmap import inference
from catmap.asymptotics import ScalingParams, solve_3eq
from catmap.datagen import (AuxiliarySpec, CoefficientSpec, DesignSpec, gen_beta_s, gen_coefficients,
                            gen_logistic_data, gen_synthetic, toeplitz_covariance)
from catmap.fitting import MapFit, fit_map
from catmap.glm import Dataset
from catmap.inference import (AdjustedCI, CurveError, GDeltaCurve, OutOfDictionaryError, adjusted_cis,
                              build_gdelta, conditional_variances, default_m, estimate_eta_general,
                              estimate_kappa1, estimate_xi, estimate_xi_details)


@pytest.fixture(scope="module")
def curve4():
    return build_gdelta(4.0, 0.25, 5.0)


def _fit(beta):
    beta = np.asarray(beta, dtype=float)
    return MapFit(beta, 1.0, True, 1, 0.0, 0.0)


# ------------------------------------------------------------------ g_delta curve

def test_curve_grid_defaults(curve4):
    assert curve4.kappa_grid.size == 60
    assert curve4.kappa_grid[0] == pytest.approx(0.05) and curve4.kappa_grid[-1] == pytest.approx(4.0)
    assert default_m(4.0) == 5.0


def test_eta_increases_with_signal(curve4):
    assert np.interp(2.0, curve4.kappa_grid, curve4.eta_sq) > np.interp(0.5, curve4.kappa_grid, curve4.eta_sq)
    assert np.all(np.diff(curve4.eta_sq) > 0)


def test_eta_dominates_sigma(curve4):
    assert np.all(curve4.sigma**2 > 0)
    assert np.all(curve4.eta_sq >= curve4.sigma**2)


def test_curve_points_match_direct_solves(curve4):
    for j in (0, 17, 59):
        k = curve4.kappa_grid[j]
        sol = solve_3eq(ScalingParams(4.0, 0.25, 5.0, float(k)))
        assert curve4.eta_sq[j] == pytest.approx(sol.alpha1**2 * k**2 + sol.sigma**2, rel=1e-8)


def test_curve_is_deterministic_without_caches(monkeypatch, curve4):
    monkeypatch.delenv(inference.CACHE_ENV, raising=False)
    monkeypatch.setattr(inference, "_memory_cache", {})
    first = build_gdelta(4.0, 0.25, 5.0, n_points=12)
    monkeypatch.setattr(inference, "_memory_cache", {})
    second = build_gdelta(4.0, 0.25, 5.0, n_points=12)
    assert first is not second
    assert np.array_equal(first.eta_sq, second.eta_sq)


def test_disk_cache_round_trip(tmp_path, monkeypatch):
    monkeypatch.setenv(inference.CACHE_ENV, str(tmp_path))
    monkeypatch.setattr(inference, "_memory_cache", {})
    built = build_gdelta(2.0, 0.25, 10.0, n_points=8)
    files = list(tmp_path.glob("gdelta_*.json"))
    assert len(files) == 1
    monkeypatch.setattr(inference, "_memory_cache", {})
    loaded = build_gdelta(2.0, 0.25, 10.0, n_points=8)
    assert np.array_equal(built.eta_sq, loaded.eta_sq)
    assert np.array_equal(built.alpha, loaded.alpha)


def test_curve_rejects_bad_inputs():
    with pytest.raises(CurveError):
        GDeltaCurve(2.0, 0.25, 10.0, np.array([0.1, 0.2, 0.3]), np.array([1.0, 0.9, 1.2]))
    with pytest.raises(CurveError):
        GDeltaCurve(2.0, 0.25, 10.0, np.array([0.1, 0.1, 0.3]), np.array([1.0, 1.1, 1.2]))
    with pytest.raises(ValueError):
        build_gdelta(2.0, 0.25, 10.0, kappa_range=(0.0, 1.0))


def test_curve_solver_failure_names_the_point():
    # m * delta <= 2 has no solution anywhere on the grid
    with pytest.raises(CurveError, match="kappa = 0.05"):
        build_gdelta(1.0, 0.25, 1.5, n_points=4)


def test_knot_inversion_returns_the_knot(curve4):
    for j in range(curve4.kappa_grid.size):
        assert curve4.invert(float(curve4.eta[j])) == pytest.approx(curve4.kappa_grid[j], abs=1e-12)


def test_inversion_between_knots_is_linear(curve4):
    e0, e1 = curve4.eta[10], curve4.eta[11]
    k0, k1 = curve4.kappa_grid[10], curve4.kappa_grid[11]
    assert curve4.invert(0.3 * e0 + 0.7 * e1) == pytest.approx(0.3 * k0 + 0.7 * k1, rel=1e-12)


def test_out_of_dictionary(curve4):
    hi = float(curve4.eta[-1])
    with pytest.raises(OutOfDictionaryError) as info:
        curve4.invert(hi * 1.5)
    assert info.value.hi == pytest.approx(hi)
    with pytest.raises(OutOfDictionaryError):
        curve4.invert(0.5 * float(curve4.eta[0]))
    assert curve4.invert(hi * 1.5, clip=True) == pytest.approx(4.0)


def test_estimate_kappa_checks_curve_parameters(curve4):
    beta = gen_coefficients(CoefficientSpec(20, 0.5), 3)
    obs = gen_logistic_data(DesignSpec(60, 20), beta, 4)  # delta = 3, curve is for 4
    with pytest.raises(ValueError, match="delta"):
        estimate_kappa1(obs, 0.25, 5.0, curve4)


def test_estimate_kappa_small_problem(curve4):
    p = 50
    beta = gen_coefficients(CoefficientSpec(p, 1.0, "gaussian", exact_norm=True), 8)
    obs = gen_logistic_data(DesignSpec(200, p), beta, 9)
    k = estimate_kappa1(obs, 0.25, 5.0, curve4, seed=10, clip=True)
    assert 0.05 <= k <= 4.0
    assert estimate_kappa1(obs, 0.25, 5.0, curve4, seed=10, clip=True) == k


# ------------------------------------------------------------------ adjusted intervals

def test_interval_quantile():
    ci = adjusted_cis(_fit([0.0]), 1, 1.0, 1.0)
    assert ci.upper[0] == pytest.approx(1.959964, abs=1e-5)
    ci90 = adjusted_cis(_fit([0.0]), 1, 1.0, 1.0, level=0.9)
    assert ci90.upper[0] == pytest.approx(norm.ppf(0.95), abs=1e-12)


def test_zero_sigma_gives_point_intervals():
    b = np.array([0.3, -1.2, 0.0])
    ci = adjusted_cis(_fit(b), 3, 0.8, 0.0)
    assert np.array_equal(ci.lower, ci.upper)
    assert np.allclose(ci.lower, b / 0.8)


def test_interval_formula():
    b = np.array([0.4, -0.1])
    ci = adjusted_cis(_fit(b), 100, 0.9, 1.7)
    half = norm.ppf(0.975) * 1.7 / 10
    assert np.allclose(ci.lower, (b - half) / 0.9)
    assert np.allclose(ci.upper, (b + half) / 0.9)
    assert ci.level == 0.95 and ci.alpha_star_hat == 0.9 and ci.sigma_star_hat == 1.7


@given(beta=st.lists(st.floats(-5, 5), min_size=1, max_size=8),
       alpha=st.floats(0.05, 3.0) | st.floats(-3.0, -0.05),
       sigma=st.floats(0.0, 4.0), c=st.floats(0.1, 10) | st.floats(-10, -0.1))
def test_interval_ordering_and_equivariance(beta, alpha, sigma, c):
    b = np.array(beta)
    ci = adjusted_cis(_fit(b), len(b), alpha, sigma)
    assert np.all(ci.lower <= ci.upper)
    scaled = adjusted_cis(_fit(c * b), len(b), c * alpha, abs(c) * sigma)
    assert np.allclose(scaled.lower, ci.lower, atol=1e-9)
    assert np.allclose(scaled.upper, ci.upper, atol=1e-9)


def test_interval_coverage_helper():
    ci = AdjustedCI(np.array([0.0, 1.0]), np.array([1.0, 2.0]), 0.95, 1.0, 1.0)
    assert ci.covers([0.5, 2.5]).tolist() == [True, False]


def test_interval_rejects_bad_inputs():
    with pytest.raises(ValueError):
        adjusted_cis(_fit([1.0]), 1, 0.0, 1.0)
    with pytest.raises(ValueError):
        adjusted_cis(_fit([1.0]), 1, 1.0, 1.0, level=1.0)


# ------------------------------------------------------------------ conditional variances

def _gaussian(n, cov, seed):
    return np.random.default_rng(seed).multivariate_normal(np.zeros(len(cov)), cov, size=n)


def test_identity_design_variances():
    X = np.random.default_rng(1).standard_normal((5000, 50))
    for method in ("nodewise", "precision_diag"):
        assert np.all(np.abs(conditional_variances(X, method) - 1) < 0.1)


def test_toeplitz_interior_variance():
    p, r = 20, 0.2
    cov = toeplitz_covariance(p, r)
    truth = 1.0 / np.diag(np.linalg.inv(cov))
    # closed form for an interior coordinate of AR(1)
    assert truth[p // 2] == pytest.approx((1 - r**2) / (1 + r**2), rel=1e-12)
    v = conditional_variances(_gaussian(5000, cov, 2))
    assert abs(v[p // 2] - truth[p // 2]) < 0.05


def test_nodewise_matches_least_squares_residuals():
    X = np.random.default_rng(3).standard_normal((40, 6))
    n, p = X.shape
    v = conditional_variances(X, "nodewise")
    for j in range(p):
        others = np.delete(X, j, axis=1)
        coef = np.linalg.lstsq(others, X[:, j], rcond=None)[0]
        rss = float(np.sum((X[:, j] - others @ coef) ** 2))
        assert v[j] == pytest.approx(rss / (n - p + 1), rel=1e-10)


def test_methods_agree_at_ten_p():
    cov = toeplitz_covariance(30, 0.3)
    X = _gaussian(300, cov, 4)
    a = conditional_variances(X, "nodewise")
    b = conditional_variances(X, "precision_diag")
    assert np.max(np.abs(a - b)) < 0.05


def test_conditional_variance_errors():
    with pytest.raises(ValueError):
        conditional_variances(np.ones((5, 5)))
    X = np.random.default_rng(0).standard_normal((20, 3))
    X[:, 2] = X[:, 0]
    with pytest.raises(ValueError):
        conditional_variances(X)
    with pytest.raises(ValueError):
        conditional_variances(np.ones((4, 3)), "precision_diag")
    with pytest.raises(ValueError):
        conditional_variances(np.ones((40, 3)), "ridge")


# ------------------------------------------------------------------ general-covariance norm

@pytest.fixture(scope="module")
def identity_fit():
    p, n = 50, 200
    beta = gen_coefficients(CoefficientSpec(p, 1.0, "gaussian", exact_norm=True), 21)
    obs = gen_logistic_data(DesignSpec(n, p), beta, 22)
    syn = gen_synthetic(AuxiliarySpec(20 * p), DesignSpec(n, p), seed=23)
    tau = 0.25 * n
    return obs, syn, tau, fit_map(obs, syn, tau)


def test_eta_general_identity_consistency(identity_fit):
    obs, syn, tau, fit = identity_fit
    eta = estimate_eta_general(obs, fit, tau, syn)
    assert eta**2 == pytest.approx(float(fit.beta_hat @ fit.beta_hat), rel=0.1)


def test_eta_general_vanishes_with_huge_tau():
    p, n = 10, 80
    obs = gen_logistic_data(DesignSpec(n, p), np.zeros(p), 31)
    # every synthetic row appears with both labels, so the synthetic likelihood peaks at zero
    Z = np.random.default_rng(32).standard_normal((5 * p, p))
    syn = Dataset(np.vstack([Z, Z]), np.r_[np.ones(5 * p), np.zeros(5 * p)], role="synthetic")
    fit = fit_map(obs, syn, 1e9)
    assert np.max(np.abs(fit.beta_hat)) < 1e-6
    assert estimate_eta_general(obs, fit, 1e9, syn) < 1e-6


@given(seed=st.integers(0, 10_000), tau=st.floats(1.0, 200.0))
def test_eta_general_nonnegative(seed, tau):
    p, n = 4, 30
    obs = gen_logistic_data(DesignSpec(n, p), np.full(p, 0.5), (seed, 1))
    syn = gen_synthetic(AuxiliarySpec(40), DesignSpec(n, p), seed=(seed, 2))
    fit = fit_map(obs, syn, tau)
    eta = estimate_eta_general(obs, fit, tau, syn)
    assert eta >= 0 and math.isfinite(eta)


# ------------------------------------------------------------------ similarity

def test_xi_shape_checks():
    a = gen_logistic_data(DesignSpec(40, 5), np.zeros(5), 1)
    b = gen_logistic_data(DesignSpec(40, 6), np.zeros(6), 2)
    with pytest.raises(ValueError):
        estimate_xi(a, b)


def test_xi_with_known_kappas_is_clamped_and_deterministic():
    p = 40
    b0 = gen_coefficients(CoefficientSpec(p, 1.0, "gaussian", exact_norm=True), 5)
    bs = gen_beta_s(b0, 1.0, 0.7, 6)
    tgt = gen_logistic_data(DesignSpec(4 * p, p), b0, 7)
    src = gen_logistic_data(DesignSpec(10 * p, p), bs, 8)
    est = estimate_xi_details(tgt, src, known_kappas=(1.0, 1.0), seed=3)
    assert -1.0 <= est.xi <= 1.0
    assert est.kappa_target == 1.0 and est.kappa_source == 1.0
    assert estimate_xi(tgt, src, known_kappas=(1.0, 1.0), seed=3) == est.xi
    naive = float(est.beta_target @ est.beta_source) / (
        np.linalg.norm(est.beta_target) * np.linalg.norm(est.beta_source))
    assert est.naive == pytest.approx(naive)


def _xi_pair(p, xi, seed):
    b0 = gen_coefficients(CoefficientSpec(p, 1.0, exact_norm=False), (seed, 1))
    bs = gen_beta_s(b0, 1.0, xi, (seed, 2), kappa1=1.0)
    return (gen_logistic_data(DesignSpec(4 * p, p), b0, (seed, 3)),
            gen_logistic_data(DesignSpec(10 * p, p), bs, (seed, 4)))


@pytest.mark.slow
def test_xi_symmetric_in_its_arguments():
    tgt, src = _xi_pair(1600, 0.9, 41)
    assert abs(estimate_xi(tgt, src, seed=5) - estimate_xi(src, tgt, seed=5)) <= 0.1


@pytest.mark.slow
def test_xi_identical_datasets():
    p = 1600
    beta = gen_coefficients(CoefficientSpec(p, 1.0), 51)
    data = gen_logistic_data(DesignSpec(4 * p, p), beta, 52)
    assert estimate_xi(data, data, seed=6) >= 0.8
