"""MAP estimation under a catalytic prior.

``fit_map`` minimizes the finite-M objective of :func:`catmap.glm.weighted_objective`.
``fit_map_population`` replaces the synthetic average by its expectation under
Gaussian covariates and Bern(1/2) responses, which reduces to tau * E[rho(|beta| Z)].
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import linprog

from .glm import LOGISTIC, Dataset, GlmFamily, rho, rho2, weighted_gram
from .quadrature import QuadratureGrid, hermite_rule, logistic_scale_rule


class FitError(RuntimeError):
    pass


class NonConvergenceError(FitError):
    def __init__(self, message, beta=None, gradient_norm=None):
        super().__init__(message)
        self.beta = beta
        self.gradient_norm = gradient_norm


class ExistenceError(FitError):
    """No finite minimizer: the (combined) data are separable."""


class IllConditionedWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class NewtonOptions:
    grad_tol: float = 1e-10
    max_iter: int = 200
    armijo: float = 1e-4
    shrink: float = 0.5
    ridge_floor: float = 1e-12
    ridge_max: float = 1e-4
    divergence_norm: float = 1e6
    cond_warn: float = 1e12

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass(frozen=True)
class MapFit:
    beta_hat: np.ndarray
    tau: float
    converged: bool
    iterations: int
    objective: float
    gradient_norm: float

    def to_json(self) -> str:
        d = asdict(self)
        d["beta_hat"] = [float(v) for v in self.beta_hat]
        return json.dumps(d)

    @classmethod
    def from_json(cls, text: str) -> "MapFit":
        d = json.loads(text)
        d["beta_hat"] = np.asarray(d["beta_hat"], dtype=float)
        return cls(**d)


# ---------------------------------------------------------------- separability

PERCEPTRON_CUTOFF = 10**6


def check_separable(data: Dataset) -> str:
    """'separable' iff some beta has (2y_i - 1) x_i'beta >= 1 for every row."""
    if data.n == 0:
        raise ValueError("empty data")
    s = 2.0 * data.y - 1.0
    A = -(s[:, None] * data.X)
    if data.n * data.p > PERCEPTRON_CUTOFF:
        return "separable" if _perceptron(s[:, None] * data.X) else "nonseparable"
    res = linprog(np.zeros(data.p), A_ub=A, b_ub=-np.ones(data.n),
                  bounds=[(None, None)] * data.p, method="highs")
    if res.status == 0:
        return "separable"
    if res.status == 2:
        return "nonseparable"
    raise FitError(f"separability LP failed: {res.message}")


def _perceptron(signed, epochs: int = 50) -> bool:
    """Margin perceptron; True if a separating direction is found."""
    beta = np.zeros(signed.shape[1])
    for _ in range(epochs):
        margins = signed @ beta
        bad = margins < 1.0
        if not bad.any():
            return True
        beta += signed[bad].sum(axis=0) / max(bad.sum(), 1)
    return False


# ---------------------------------------------------------------- Newton core

class _Objective:
    """Objective pieces evaluated from cached linear predictors."""

    def __init__(self, family, observed, synthetic, tau):
        self.family = family
        self.X, self.y = observed.X, observed.y
        self.Xs = self.ys = None
        self.c = 0.0
        if synthetic is not None and tau > 0:
            self.Xs, self.ys = synthetic.X, synthetic.y
            self.c = tau / synthetic.n

    def linear(self, d):
        return self.X @ d, (self.Xs @ d if self.Xs is not None else None)

    def value(self, eta):
        f = self.family
        e, es = eta
        v = float(np.sum(f.b(e) - self.y * e))
        if es is not None:
            v += self.c * float(np.sum(f.b(es) - self.ys * es))
        return v

    def gradient(self, eta):
        f = self.family
        e, es = eta
        g = self.X.T @ (f.b1(e) - self.y)
        if es is not None:
            g += self.c * (self.Xs.T @ (f.b1(es) - self.ys))
        return g

    def hessian(self, eta):
        f = self.family
        e, es = eta
        H = weighted_gram(self.X, f.b2(e))
        if es is not None:
            H += weighted_gram(self.Xs, self.c * f.b2(es))
        return H


class _Population:
    """Observed likelihood plus tau * E[rho(|beta| Z)]."""

    def __init__(self, family, observed, tau, rule=None):
        self.family = family
        self.X, self.y = observed.X, observed.y
        self.tau = tau
        # rule(r) -> (nodes, weights) for expectations over Z at radius r
        self.rule = rule or logistic_scale_rule

    def linear(self, d):
        return self.X @ d, d

    def _norm(self, eta):
        return float(np.linalg.norm(eta[1]))

    def value(self, eta):
        e, beta = eta
        f = self.family
        r = self._norm(eta)
        z, w = self.rule(r)
        pen = float(np.sum(w * rho(r * z)))
        return float(np.sum(f.b(e) - self.y * e)) + self.tau * pen

    def gradient(self, eta):
        e, beta = eta
        # d/dbeta E[rho(|b| Z)] = E[rho'(|b| Z) Z] b/|b| = E[rho''(|b| Z)] b (Gaussian integration by parts)
        r = self._norm(eta)
        z, w = self.rule(r)
        s = float(np.sum(w * rho2(r * z)))
        return self.X.T @ (self.family.b1(e) - self.y) + self.tau * s * beta

    def hessian(self, eta):
        e, beta = eta
        r = self._norm(eta)
        z, w = self.rule(r)
        d2 = rho2(r * z)
        s = float(np.sum(w * d2))
        H = weighted_gram(self.X, self.family.b2(e))
        H += self.tau * s * np.eye(len(beta))
        if r > 0:
            # curvature along beta is E[Z^2 rho''(rZ)]; adding it through the projector
            # avoids the cancellation in s + r^2 E[rho^(4)(rZ)] at large r
            u = beta / r
            along = float(np.sum(w * z * z * d2))
            H += self.tau * (along - s) * np.outer(u, u)
        return H


def _factor(H, opts: NewtonOptions):
    ridge = 0.0
    scale = max(1.0, float(np.max(np.abs(np.diag(H)))))
    while True:
        try:
            Hr = H if ridge == 0 else H + ridge * scale * np.eye(H.shape[0])
            return cho_factor(Hr, lower=True, check_finite=False), ridge
        except LinAlgError:
            ridge = opts.ridge_floor if ridge == 0 else ridge * 10
            if ridge > opts.ridge_max:
                raise


def _newton(obj, p: int, opts: NewtonOptions, tau: float, start=None) -> MapFit:
    beta = np.zeros(p) if start is None else np.array(start, dtype=float)
    if beta.shape != (p,):
        raise ValueError("start must have length p")
    eta = obj.linear(beta)
    f = obj.value(eta)
    g = obj.gradient(eta)
    gnorm = float(np.max(np.abs(g))) if p else 0.0
    eps = np.finfo(float).eps
    # the gradient sums n + tau weighted terms; below this its rounding dominates
    tol = max(opts.grad_tol, 4 * eps * (obj.X.shape[0] + tau))
    it = 0
    cho = None
    while gnorm > tol:
        if it >= opts.max_iter:
            raise NonConvergenceError(
                f"Newton did not converge in {opts.max_iter} iterations (|grad| = {gnorm:.3g})",
                beta=beta, gradient_norm=gnorm)
        it += 1
        H = obj.hessian(eta)
        try:
            cho, _ = _factor(H, opts)
        except LinAlgError:
            raise ExistenceError("Hessian is numerically singular; the data may be separable") from None
        d = -cho_solve(cho, g, check_finite=False)
        slope = float(g @ d)
        dl = obj.linear(d)
        t = 1.0
        accepted = False
        for _ in range(60):
            eta_new = tuple(None if a is None else a + t * b for a, b in zip(eta, dl))
            f_new = obj.value(eta_new)
            if f_new <= f + opts.armijo * t * slope:
                accepted = True
            elif f_new <= f + 16 * eps * max(abs(f), 1.0):
                # inside the rounding noise of f: accept if the gradient improves
                g_try = obj.gradient(eta_new)
                if np.max(np.abs(g_try)) < gnorm:
                    accepted = True
            if accepted:
                break
            t *= opts.shrink
        if not accepted:
            raise NonConvergenceError(
                f"line search failed at iteration {it} (|grad| = {gnorm:.3g})",
                beta=beta, gradient_norm=gnorm)
        beta = beta + t * d
        eta, f = eta_new, f_new
        g = obj.gradient(eta)
        gnorm = float(np.max(np.abs(g)))
        if np.max(np.abs(beta)) > opts.divergence_norm:
            raise ExistenceError(
                "coefficients diverge along a ray: the combined data appear separable, "
                "so no finite MAP estimate exists (add non-separable synthetic data)")
    if cho is not None:
        diag = np.abs(np.diag(cho[0]))
        cond = (diag.max() / diag.min()) ** 2 if diag.min() > 0 else math.inf
        if cond > opts.cond_warn:
            warnings.warn(f"Hessian condition number about {cond:.2g} at the optimum",
                          IllConditionedWarning, stacklevel=3)
    return MapFit(beta, float(tau), True, it, f, gnorm)


def fit_map(observed: Dataset, synthetic: Dataset | None, tau: float,
            family: GlmFamily = LOGISTIC, opts: NewtonOptions = NewtonOptions(), start=None) -> MapFit:
    """Damped Newton from ``start`` (zero by default)."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if synthetic is not None and synthetic.p != observed.p:
        raise ValueError("observed and synthetic data must have the same columns")
    if tau == 0 or synthetic is None:
        if observed.p > observed.n:
            raise ExistenceError("p > n with tau = 0: the maximum likelihood estimate does not exist")
        if family is LOGISTIC and check_separable(observed) == "separable":
            raise ExistenceError("observed data are separable; with tau = 0 there is no finite optimum")
    obj = _Objective(family, observed, synthetic, tau)
    return _newton(obj, observed.p, opts, tau, start)


def fit_map_population(observed: Dataset, tau: float, opts: NewtonOptions = NewtonOptions(),
                       quad: QuadratureGrid | None = None, family: GlmFamily = LOGISTIC) -> MapFit:
    """MAP estimate with the synthetic average replaced by its Gaussian expectation.

    The penalty expectation uses a trapezoid rule matched to |beta| unless
    ``quad`` asks for a fixed Gauss-Hermite rule.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if tau == 0:
        return fit_map(observed, None, 0.0, family, opts)
    rule = None
    if quad is not None:
        fixed = hermite_rule(quad.nodes_per_axis)
        rule = lambda r: fixed
    obj = _Population(family, observed, tau, rule)
    return _newton(obj, observed.p, opts, tau)


def population_penalty(beta) -> float:
    """E[rho(|beta| Z)] for Z standard normal."""
    r = float(np.linalg.norm(beta))
    if r == 0:
        return math.log(2.0)
    z, w = logistic_scale_rule(r)
    return float(np.sum(w * rho(r * z)))


# ---------------------------------------------------------------- data splitting

@dataclass(frozen=True)
class SplitFits:
    first: MapFit
    second: MapFit
    rows: tuple

    def __iter__(self):
        return iter((self.first, self.second))


def split_rows(n: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Random halves; the first gets the extra row when n is odd."""
    from .datagen import rng_for

    perm = rng_for(seed).permutation(n)
    k = (n + 1) // 2
    return np.sort(perm[:k]), np.sort(perm[k:])


def split_fit(observed: Dataset, tau_rule, aux_builder, seed,
              family: GlmFamily = LOGISTIC, opts: NewtonOptions = NewtonOptions()) -> SplitFits:
    """Fit each half with its own synthetic data from ``aux_builder(half, seed)``."""
    from .datagen import substream

    rows = split_rows(observed.n, substream(seed, 0))
    fits = []
    for k, idx in enumerate(rows, start=1):
        half = observed.subset(idx)
        synthetic = aux_builder(half, substream(seed, k))
        fits.append(fit_map(half, synthetic, tau_rule(half.n), family, opts))
    return SplitFits(fits[0], fits[1], rows)
