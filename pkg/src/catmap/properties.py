"""Fast numerical self-checks: prox, Moreau envelope, quadrature, objective, Newton, cutoff, rank-one update."""

from __future__ import annotations

import numpy as np

from .asymptotics import FixedPointOptions, ScalingParams, index_nodes, solve_3eq
from .datagen import AuxiliarySpec, DesignSpec, gen_logistic_data, gen_synthetic, rng_for
from .fitting import fit_map
from .glm import LOGISTIC, rho1, rho2, weighted_objective
from .prox import moreau_grad, moreau_rho, prox_rho_array
from .quadrature import DEFAULT_NODES, QuadratureGrid, expect
from .selection import fdr_cutoff
from .tuning import full_hessian, loo_inverse


def prox_grid_residual():
    z = np.linspace(-50, 50, 100)
    lam = np.geomspace(1e-3, 1e3, 100)
    Z, L = np.meshgrid(z, lam)
    _, worst, _ = prox_rho_array(Z, L)
    return worst <= 1e-12, f"max residual {worst:.2e} on 10^4 points"


def moreau_derivatives():
    worst = 0.0
    h = 1e-5
    for z in (-6.0, -1.3, 0.0, 0.7, 4.2):
        for lam in (0.05, 0.8, 3.0):
            dz, dlam = moreau_grad(z, lam)
            fz = (moreau_rho(z + h, lam) - moreau_rho(z - h, lam)) / (2 * h)
            fl = (moreau_rho(z, lam + h) - moreau_rho(z, lam - h)) / (2 * h)
            worst = max(worst, abs(dz - fz), abs(dlam - fl))
    return worst <= 1e-6, f"max |analytic - central difference| {worst:.2e}"


def quadrature_identities():
    worst = 0.0
    for k in (0.3, 1.0, 2.5, 4.0):
        # same node rule the scalar systems use along the Z1 axis
        grid = QuadratureGrid(1, index_nodes(DEFAULT_NODES, k))
        worst = max(worst, abs(expect(grid, lambda z: rho1(k * z)) - 0.5))
        # Stein: E[Z f(kZ)] = k E[f'(kZ)] with f = rho'
        worst = max(worst, abs(expect(grid, lambda z: z * rho1(k * z)) - k * expect(grid, lambda z: rho2(k * z))))
    return worst <= 1e-9, f"max identity error {worst:.2e}"


def _small_problem(seed=11, n=60, p=6, M=120):
    beta = np.linspace(-0.8, 0.8, p)
    obs = gen_logistic_data(DesignSpec(n, p), beta, (seed, 1))
    syn = gen_synthetic(AuxiliarySpec(M), DesignSpec(n, p), seed=(seed, 2))
    return obs, syn


def objective_gradient():
    obs, syn = _small_problem()
    rng = rng_for(3)
    worst = 0.0
    for _ in range(3):
        b = 0.5 * rng.standard_normal(obs.p)
        _, g, _ = weighted_objective(LOGISTIC, obs, syn, b, 7.0, hessian=False)
        fd = np.empty_like(g)
        for j in range(obs.p):
            e = np.zeros(obs.p)
            e[j] = h = 1e-6 * max(1.0, abs(b[j]))
            fd[j] = (weighted_objective(LOGISTIC, obs, syn, b + e, 7.0, hessian=False)[0]
                     - weighted_objective(LOGISTIC, obs, syn, b - e, 7.0, hessian=False)[0]) / (2 * h)
        worst = max(worst, float(np.max(np.abs(fd - g)) / max(np.max(np.abs(g)), 1.0)))
    return worst <= 1e-6, f"max relative gradient error {worst:.2e}"


def newton_uniqueness():
    obs, syn = _small_problem()
    base = fit_map(obs, syn, 10.0).beta_hat
    rng = rng_for(5)
    worst = 0.0
    for _ in range(2):
        other = fit_map(obs, syn, 10.0, start=2.0 * rng.standard_normal(obs.p)).beta_hat
        worst = max(worst, float(np.max(np.abs(other - base))))
    sol_gap = 0.0
    params = ScalingParams(2.0, 0.25, 10.0, 1.0)
    ref = solve_3eq(params)
    for init in ((0.5, 2.0, 0.5), (1.5, 0.5, 2.0)):
        s = solve_3eq(params, FixedPointOptions(init=init))
        sol_gap = max(sol_gap, abs(s.alpha1 - ref.alpha1), abs(s.sigma - ref.sigma), abs(s.gamma - ref.gamma))
    ok = worst <= 1e-6 and sol_gap <= 1e-6
    return ok, f"MAP restarts {worst:.1e}, scalar-system restarts {sol_gap:.1e}"


def cutoff_oracle():
    mirror = np.array([3.0, 2.0, -1.0, -2.0, 0.5])
    cut = fdr_cutoff(mirror, 0.5)
    sel = np.flatnonzero(mirror > cut).tolist()
    return cut == 1.0 and sel == [0, 1], f"cutoff {cut:g}, selected {sel}"


def sherman_morrison():
    obs, syn = _small_problem(seed=21, n=80, p=10, M=200)
    fit = fit_map(obs, syn, 15.0)
    H = full_hessian(fit, obs, syn, 15.0)
    H_inv = np.linalg.inv(H)
    w = rho2(obs.X @ fit.beta_hat)
    worst = 0.0
    for i in range(obs.n):
        x = obs.X[i]
        direct = np.linalg.inv(H - w[i] * np.outer(x, x))
        worst = max(worst, float(np.max(np.abs(loo_inverse(H_inv, x, w[i]) - direct)) / np.max(np.abs(direct))))
    return worst <= 1e-8, f"max relative difference {worst:.2e}"


SUITE = (
    ("prox", prox_grid_residual),
    ("moreau", moreau_derivatives),
    ("quadrature", quadrature_identities),
    ("gradient", objective_gradient),
    ("uniqueness", newton_uniqueness),
    ("cutoff", cutoff_oracle),
    ("sherman_morrison", sherman_morrison),
)


def run_property_suite():
    out = []
    for name, check in SUITE:
        ok, info = check()
        out.append((name, bool(ok), info))
    return out
