"""Choosing tau: approximate leave-one-out deviance and limit-MSE minimization."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, solve_triangular

from .asymptotics import ScalingParams, SolverError, limit_metrics, solve
from .fitting import FitError, MapFit, NewtonOptions, fit_map
from .glm import LOGISTIC, Dataset, rho, rho1, rho2, weighted_gram

DEFAULT_TAU0_GRID = np.geomspace(0.02, 2.0, 12)


@dataclass(frozen=True)
class TauGrid:
    values: np.ndarray
    scores: np.ndarray
    chosen: int
    n: int | None = None

    @property
    def best(self) -> float:
        return float(self.values[self.chosen])

    def write_csv(self, path_or_buf) -> None:
        close = False
        fh = path_or_buf
        if isinstance(path_or_buf, str) or hasattr(path_or_buf, "__fspath__"):
            fh = open(path_or_buf, "w", newline="")
            close = True
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tau", "tau0", "score", "chosen"])
            for i, (t, s) in enumerate(zip(self.values, self.scores)):
                t0 = t / self.n if self.n else t
                w.writerow([repr(float(t)), repr(float(t0)), repr(float(s)), int(i == self.chosen)])
        finally:
            if close:
                fh.close()


def _argmin_small(scores) -> int:
    """Index of the minimum; ties go to the earliest (smallest tau)."""
    scores = np.asarray(scores, dtype=float)
    finite = np.where(np.isfinite(scores), scores, np.inf)
    return int(np.argmin(finite))


def full_hessian(fit: MapFit, observed: Dataset, synthetic: Dataset | None, tau: float) -> np.ndarray:
    """Positive definite Hessian of the minimized objective at the fit."""
    H = weighted_gram(observed.X, rho2(observed.X @ fit.beta_hat))
    if synthetic is not None and tau > 0:
        H += weighted_gram(synthetic.X, (tau / synthetic.n) * rho2(synthetic.X @ fit.beta_hat))
    return H


def loo_inverse(H_inv: np.ndarray, x: np.ndarray, w: float) -> np.ndarray:
    """(H - w x x')^-1 from H^-1 by the Sherman-Morrison formula."""
    u = H_inv @ x
    return H_inv + w * np.outer(u, u) / (1.0 - w * float(x @ u))


def approx_loo(fit: MapFit, observed: Dataset, synthetic: Dataset | None, tau: float) -> np.ndarray:
    """Approximate leave-one-out linear predictors.

    With H the full Hessian and w_i = rho''(x_i'beta), dropping row i leaves
    H - w_i x_i x_i' and one Newton step from beta gives

        l_i = x_i'beta + x_i'(H - w_i x_i x_i')^-1 x_i (rho'(x_i'beta) - y_i).

    By Sherman-Morrison x'(H - w x x')^-1 x = h / (1 - w h) with h = x'H^-1 x,
    so H is factored once. Synthetic rows are never removed.
    """
    X, y = observed.X, observed.y
    eta = X @ fit.beta_hat
    w = rho2(eta)
    H = full_hessian(fit, observed, synthetic, tau)
    try:
        L, _ = cho_factor(H, lower=True, check_finite=False)
    except LinAlgError:
        raise LinAlgError("Hessian is singular; leave-one-out correction undefined") from None
    B = solve_triangular(L, X.T, lower=True, check_finite=False)
    h = np.einsum("ij,ij->j", B, B)
    lev = h / (1.0 - w * h)
    return eta + lev * (rho1(eta) - y)


def loocv_score(l_tilde, responses) -> float:
    """Deviance -sum(y l - rho(l)) at the leave-one-out predictors."""
    l_tilde = np.asarray(l_tilde, dtype=float)
    responses = np.asarray(responses, dtype=float)
    if l_tilde.shape != responses.shape:
        raise ValueError("length mismatch")
    return float(np.sum(rho(l_tilde) - responses * l_tilde))


def select_tau_mlcv(observed: Dataset, synthetic: Dataset, grid, opts: NewtonOptions = NewtonOptions()) -> TauGrid:
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty tau grid")
    scores = np.full(grid.size, np.inf)
    for i, tau in enumerate(grid):
        try:
            fit = fit_map(observed, synthetic, float(tau), LOGISTIC, opts)
        except FitError as err:
            warnings.warn(f"fit failed at tau = {tau:g}: {err}")
            continue
        scores[i] = loocv_score(approx_loo(fit, observed, synthetic, float(tau)), observed.y)
    if not np.any(np.isfinite(scores)):
        raise FitError("every fit on the tau grid failed")
    return TauGrid(grid, scores, _argmin_small(scores), observed.n)


def select_tau_ese(params_base: ScalingParams, kappa: float, grid_tau0=DEFAULT_TAU0_GRID,
                   informative: bool = False, kappa2: float | None = None,
                   xi: float | None = None) -> TauGrid:
    """Minimize the limiting squared error over tau0.

    Pass the true kappa1 for the oracle benchmark or an estimate for the
    data-driven version; the informative variant also uses (kappa2, xi).
    """
    grid = np.asarray(grid_tau0, dtype=float)
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    k2 = params_base.kappa2 if kappa2 is None else kappa2
    x = params_base.xi if xi is None else xi
    scores = np.full(grid.size, np.inf)
    for i, t0 in enumerate(grid):
        if informative:
            params = ScalingParams(params_base.delta, float(t0), params_base.m, kappa, k2, x)
        else:
            params = ScalingParams(params_base.delta, float(t0), params_base.m, kappa)
        try:
            scores[i] = limit_metrics(solve(params), params)["mse"]
        except (SolverError, ValueError) as err:
            warnings.warn(f"solver failed at tau0 = {t0:g}: {err}")
    if not np.any(np.isfinite(scores)):
        raise SolverError("solver failed at every tau0")
    return TauGrid(grid, scores, _argmin_small(scores))
