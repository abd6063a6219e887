import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from catmap.glm import (GAUSSIAN, LOGISTIC, POISSON, Dataset, rho, rho1, rho2, rho_family,
                        weighted_objective)

finite = st.floats(-50, 50, allow_nan=False)


def test_rho_family_at_zero():
    v, d1, d2 = rho_family(0.0)
    assert v == pytest.approx(math.log(2), abs=1e-15)
    assert d1 == 0.5 and d2 == 0.25


def test_rho_asymptote():
    v, d1, _ = rho_family(40.0)
    assert abs(v - 40.0) <= 1e-15
    assert abs(d1 - 1.0) <= 1e-15


@pytest.mark.parametrize("t", [-1.0, -30.0, -3.5, 0.2, 7.0, 33.0])
def test_rho_against_arbitrary_precision(t):
    mpmath.mp.dps = 40
    exact = mpmath.log(1 + mpmath.exp(t))
    sig = 1 / (1 + mpmath.exp(-t))
    assert abs(float(rho(t)) - float(exact)) <= 1e-12 * max(1.0, abs(float(exact)))
    assert abs(float(rho1(t)) - float(sig)) <= 1e-15
    assert abs(float(rho2(t)) - float(sig * (1 - sig))) <= 1e-15


def test_rho_minus_one_reference_digits():
    assert abs(float(rho(-1.0)) - 0.313261687518223) <= 1e-12


def test_rho_symmetries_on_grid():
    t = np.linspace(-50, 50, 2001)
    assert np.max(np.abs(rho1(-t) - (1 - rho1(t)))) <= 1e-14
    assert np.max(np.abs(rho2(-t) - rho2(t))) <= 1e-14
    assert np.all(rho2(t) > 0)


def test_rho_rejects_non_finite():
    with pytest.raises(ValueError):
        rho_family(float("inf"))


def test_objective_at_zero_is_log2_times_total_weight(small_problem):
    obs, syn = small_problem
    tau = 13.0
    val, _, _ = weighted_objective(LOGISTIC, obs, syn, np.zeros(obs.p), tau)
    assert val == pytest.approx((obs.n + tau) * math.log(2), rel=1e-14)


def test_zero_tau_is_plain_negative_log_likelihood(small_problem):
    obs, syn = small_problem
    b = np.full(obs.p, 0.3)
    eta = obs.X @ b
    nll = float(np.sum(np.log1p(np.exp(eta)) - obs.y * eta))
    assert weighted_objective(LOGISTIC, obs, syn, b, 0.0)[0] == pytest.approx(nll, rel=1e-13)
    assert weighted_objective(LOGISTIC, obs, None, b, 5.0)[0] == pytest.approx(nll, rel=1e-13)


@given(seed=st.integers(0, 10_000))
def test_gradient_matches_central_differences(seed, small_problem):
    obs, syn = small_problem
    b = 0.6 * np.random.default_rng(seed).standard_normal(obs.p)
    _, g, _ = weighted_objective(LOGISTIC, obs, syn, b, 9.0, hessian=False)
    h = 1e-6
    fd = np.array([(weighted_objective(LOGISTIC, obs, syn, b + h * e, 9.0, hessian=False)[0]
                    - weighted_objective(LOGISTIC, obs, syn, b - h * e, 9.0, hessian=False)[0]) / (2 * h)
                   for e in np.eye(obs.p)])
    assert np.max(np.abs(fd - g)) <= 1e-6 * max(1.0, np.max(np.abs(g)))


@given(seed=st.integers(0, 10_000))
def test_hessian_symmetric_psd(seed, small_problem):
    obs, syn = small_problem
    b = 2.0 * np.random.default_rng(seed).standard_normal(obs.p)
    _, _, H = weighted_objective(LOGISTIC, obs, syn, b, 4.0)
    assert np.allclose(H, H.T, atol=1e-12)
    assert np.min(np.linalg.eigvalsh(H)) >= -1e-10


@given(seed=st.integers(0, 10_000), s=st.floats(0.0, 1.0))
def test_objective_convex_along_segments(seed, s, small_problem):
    obs, syn = small_problem
    rng = np.random.default_rng(seed)
    a, b = 2 * rng.standard_normal(obs.p), 2 * rng.standard_normal(obs.p)
    f = lambda x: weighted_objective(LOGISTIC, obs, syn, x, 6.0, hessian=False)[0]
    mid = f(s * a + (1 - s) * b)
    assert mid <= s * f(a) + (1 - s) * f(b) + 1e-9 * (1 + abs(mid))


@pytest.mark.parametrize("family,y", [(GAUSSIAN, [0.3, -1.2, 2.0]), (POISSON, [0.0, 2.0, 5.0])])
def test_other_families_gradient(family, y):
    X = np.array([[1.0, 0.5], [0.2, -1.0], [-0.7, 0.3]])
    obs = Dataset(X, y, family=family)
    b = np.array([0.2, -0.1])
    _, g, H = weighted_objective(family, obs, None, b, 0.0)
    h = 1e-6
    fd = np.array([(weighted_objective(family, obs, None, b + h * e, 0.0)[0]
                    - weighted_objective(family, obs, None, b - h * e, 0.0)[0]) / (2 * h) for e in np.eye(2)])
    assert np.allclose(fd, g, rtol=1e-6, atol=1e-8)
    assert np.all(np.linalg.eigvalsh(H) > 0)


def test_dataset_validation_and_immutability():
    with pytest.raises(ValueError):
        Dataset(np.ones((3, 2)), [0, 1])
    with pytest.raises(ValueError):
        Dataset(np.ones((2, 2)), [0, 2])
    d = Dataset(np.ones((2, 2)), [0, 1])
    with pytest.raises(AttributeError):
        d.y = np.zeros(2)
    with pytest.raises(ValueError):
        d.X[0, 0] = 5.0


def test_dimension_mismatch_rejected(small_problem):
    obs, syn = small_problem
    with pytest.raises(ValueError):
        weighted_objective(LOGISTIC, obs, syn, np.zeros(obs.p + 1), 1.0)
