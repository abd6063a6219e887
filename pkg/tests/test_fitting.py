import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from catmap.datagen import (AuxiliarySpec, CoefficientSpec, DesignSpec, gen_coefficients, gen_logistic_data,
                            gen_synthetic)
from catmap.fitting import (ExistenceError, MapFit, NewtonOptions, NonConvergenceError, check_separable, fit_map,
                            fit_map_population, population_penalty, split_fit, split_rows)
from catmap.glm import LOGISTIC, Dataset, weighted_objective

from _oracles import normal_rule


def _obj(obs, syn, tau):
    return lambda b: weighted_objective(LOGISTIC, obs, syn, b, tau, hessian=False)[0]


def pattern_search(f, x0, step=1.0, tol=1e-7):
    """Compass search: try +/- step on each axis, halve the step when nothing improves."""
    x = np.array(x0, dtype=float)
    fx = f(x)
    while step > tol:
        moved = False
        for j, s in itertools.product(range(x.size), (step, -step)):
            y = x.copy()
            y[j] += s
            fy = f(y)
            if fy < fx:
                x, fx, moved = y, fy, True
        if not moved:
            step /= 2
    return x


def _with_intercept(x):
    return np.column_stack([np.ones(len(x)), x])


def test_separability_examples():
    # with a constant column a threshold splits [1, 2] and also [1, 1.5 | 2]
    assert check_separable(Dataset(_with_intercept([1.0, 2.0]), [0, 1])) == "separable"
    assert check_separable(Dataset(_with_intercept([1.0, 2.0, 1.5]), [1, 0, 1])) == "separable"
    assert check_separable(Dataset(_with_intercept([1.0, 2.0, 3.0]), [1, 0, 1])) == "nonseparable"
    # through the origin, positive covariates with mixed labels cannot be split
    assert check_separable(Dataset([[1.0], [2.0]], [0, 1])) == "nonseparable"
    assert check_separable(Dataset([[1.0], [2.0], [1.5]], [1, 0, 1])) == "nonseparable"
    beta = gen_coefficients(CoefficientSpec(100, 0.5), 0)
    assert check_separable(gen_logistic_data(DesignSpec(2000, 100), beta, 1)) == "nonseparable"


def test_separability_empty_rejected():
    with pytest.raises(ValueError):
        check_separable(Dataset(np.zeros((0, 2)), []))


def test_separable_observed_rescued_by_synthetic():
    obs = Dataset([[1.0, 0.2], [2.0, -0.1], [-1.0, 0.3], [-2.0, 0.0]], [1, 1, 0, 0])
    assert check_separable(obs) == "separable"
    syn = gen_synthetic(AuxiliarySpec(50), DesignSpec(4, 2), seed=3)
    assert check_separable(syn) == "nonseparable"
    fit = fit_map(obs, syn, 2.0)
    assert fit.converged and np.all(np.isfinite(fit.beta_hat))
    other = fit_map(obs, syn, 2.0, start=np.array([5.0, -5.0]))
    assert np.max(np.abs(other.beta_hat - fit.beta_hat)) <= 1e-6
    with pytest.raises(ExistenceError):
        fit_map(obs, None, 0.0)


def test_mle_needs_p_at_most_n():
    obs = Dataset(np.eye(3)[:2], [0, 1])
    with pytest.raises(ExistenceError):
        fit_map(obs, None, 0.0)


def test_first_order_optimality(small_problem):
    obs, syn = small_problem
    fit = fit_map(obs, syn, 10.0)
    _, g, _ = weighted_objective(LOGISTIC, obs, syn, fit.beta_hat, 10.0, hessian=False)
    assert np.max(np.abs(g)) <= 1e-10
    assert fit.gradient_norm <= NewtonOptions().grad_tol


def test_tiny_instance_matches_pattern_search():
    rng = np.random.default_rng(0)
    obs = Dataset(rng.standard_normal((6, 2)), [1, 0, 0, 1, 1, 0])
    syn = Dataset(rng.standard_normal((12, 2)), (rng.random(12) < 0.5).astype(float), "synthetic")
    fit = fit_map(obs, syn, 3.0)
    ref = pattern_search(_obj(obs, syn, 3.0), np.zeros(2))
    assert np.max(np.abs(fit.beta_hat - ref)) <= 1e-4


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_random_starts_agree(seed):
    rng = np.random.default_rng(seed)
    obs = gen_logistic_data(DesignSpec(40, 5), rng.standard_normal(5), (seed, 1))
    syn = gen_synthetic(AuxiliarySpec(100), DesignSpec(40, 5), seed=(seed, 2))
    a = fit_map(obs, syn, 8.0).beta_hat
    b = fit_map(obs, syn, 8.0, start=3 * rng.standard_normal(5)).beta_hat
    assert np.max(np.abs(a - b)) <= 1e-6


def test_iteration_limit_reported(small_problem):
    obs, syn = small_problem
    with pytest.raises(NonConvergenceError):
        fit_map(obs, syn, 10.0, opts=NewtonOptions(max_iter=1))


def test_options_validated():
    with pytest.raises(ValueError):
        NewtonOptions(grad_tol=0.0)
    with pytest.raises(ValueError):
        NewtonOptions(max_iter=0)


def test_fit_json_round_trip(small_problem):
    obs, syn = small_problem
    fit = fit_map(obs, syn, 10.0)
    d = json.loads(fit.to_json())
    assert set(d) == {"beta_hat", "tau", "converged", "iterations", "objective", "gradient_norm"}
    back = MapFit.from_json(fit.to_json())
    assert np.array_equal(back.beta_hat, fit.beta_hat)


def test_population_penalty_at_zero():
    assert population_penalty(np.zeros(4)) == math.log(2)


def test_population_fit_shrinks_to_zero():
    obs = gen_logistic_data(DesignSpec(100, 5), np.ones(5), 2)
    fit = fit_map_population(obs, 1e6 * obs.n)
    assert np.linalg.norm(fit.beta_hat) <= 1e-3


def test_population_fit_stationarity():
    obs = gen_logistic_data(DesignSpec(80, 4), np.array([1.0, -0.5, 0.0, 0.3]), 5)
    tau = 20.0
    fit = fit_map_population(obs, tau)
    z, w = normal_rule(201)
    b = fit.beta_hat
    r = np.linalg.norm(b)
    grad = obs.X.T @ (expit(obs.X @ b) - obs.y) + tau * np.sum(w * expit(r * z) * z) * b / r
    assert np.max(np.abs(grad)) <= 1e-8


def test_finite_synthetic_sample_approaches_population_fit():
    n, p = 100, 20
    beta = gen_coefficients(CoefficientSpec(p, 1.0), 0)
    obs = gen_logistic_data(DesignSpec(n, p), beta, 1)
    tau = 0.25 * n
    M = 200 * p
    pop = fit_map_population(obs, tau).beta_hat
    z, w = normal_rule(201)
    for seed in range(5):
        syn = gen_synthetic(AuxiliarySpec(M), DesignSpec(n, p), seed=(seed, 9))
        fin = fit_map(obs, syn, tau).beta_hat
        L = max(np.linalg.norm(fin), np.linalg.norm(pop))
        d2 = expit(L * z) * expit(-L * z)
        gamma = min(np.sum(w * d2), np.sum(w * d2 * z * z))
        assert np.sum((fin - pop) ** 2) <= 5 * p / (M * gamma**2)


def test_split_rows_partition():
    a, b = split_rows(11, 3)
    assert len(a) == 6 and len(b) == 5
    assert sorted(np.concatenate([a, b]).tolist()) == list(range(11))


def _gaussian_builder(half, seed):
    return gen_synthetic(AuxiliarySpec(4 * half.n), DesignSpec(half.n, half.p), seed=seed)


def test_split_fit_deterministic():
    obs = gen_logistic_data(DesignSpec(60, 4), np.array([1.0, 0.0, -1.0, 0.5]), 0)
    one = split_fit(obs, lambda m: 0.25 * m, _gaussian_builder, 7)
    two = split_fit(obs, lambda m: 0.25 * m, _gaussian_builder, 7)
    assert np.array_equal(one.first.beta_hat, two.first.beta_hat)
    assert np.array_equal(one.second.beta_hat, two.second.beta_hat)
    assert one.first.tau == 0.25 * 30


@pytest.mark.slow
def test_null_product_statistic_is_centered():
    beta = np.array([1.0, -1.0, 0.0, 0.5])
    stats = []
    for s in range(200):
        obs = gen_logistic_data(DesignSpec(80, 4), beta, (s, 0))
        f1, f2 = split_fit(obs, lambda m: 0.25 * m, _gaussian_builder, (s, 1))
        stats.append(f1.beta_hat[2] * f2.beta_hat[2])
    q1, med, q3 = np.percentile(stats, [25, 50, 75])
    assert abs(med) <= 0.1 * (q3 - q1)


@pytest.mark.slow
def test_estimate_stays_bounded_under_regularization():
    p = 250
    n = 2 * p
    norms = []
    for s in range(50):
        beta = gen_coefficients(CoefficientSpec(p, 1.0), (s, 0))
        obs = gen_logistic_data(DesignSpec(n, p), beta, (s, 1))
        syn = gen_synthetic(AuxiliarySpec(20 * p), DesignSpec(n, p), seed=(s, 2))
        norms.append(np.linalg.norm(fit_map(obs, syn, float(p)).beta_hat))
    # the limiting norm at these settings is about 2; a blow-up would show orders of magnitude more
    assert max(norms) <= 10.0
