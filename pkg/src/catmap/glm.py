"""Logistic primitives, canonical GLM families and the weighted MAP objective.

The objective is written in minimization form,

    sum_i [b(x_i'beta) - y_i x_i'beta] + (tau / M) sum_j [b(x*_j'beta) - y*_j x*_j'beta],

i.e. the negative log posterior under a catalytic prior built from M synthetic rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit


def rho(t):
    """log(1 + exp(t)), overflow safe."""
    t = np.asarray(t, dtype=float)
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def rho1(t):
    return expit(t)


def rho2(t):
    # product of both tails stays positive where s * (1 - s) would round to 0
    return expit(t) * expit(-np.asarray(t, dtype=float))


def rho3(t):
    return -rho2(t) * np.tanh(0.5 * np.asarray(t, dtype=float))


def rho4(t):
    v = rho2(t)
    return v * np.tanh(0.5 * np.asarray(t, dtype=float)) ** 2 - 2.0 * v * v


def rho_family(t: float) -> tuple[float, float, float]:
    """Return (rho(t), rho'(t), rho''(t))."""
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    return float(rho(t)), float(rho1(t)), float(rho2(t))


def _bernoulli(y):
    return np.all((y == 0) | (y == 1))


def _nonnegative_integer(y):
    return np.all((y >= 0) & (np.floor(y) == y))


@dataclass(frozen=True)
class GlmFamily:
    name: str
    b: Callable
    b1: Callable
    b2: Callable
    y_domain: str
    valid_response: Callable = field(repr=False, default=lambda y: True)


LOGISTIC = GlmFamily("logistic", rho, rho1, rho2, "{0, 1}", _bernoulli)
GAUSSIAN = GlmFamily(
    "gaussian",
    lambda t: 0.5 * np.asarray(t, dtype=float) ** 2,
    lambda t: np.asarray(t, dtype=float),
    lambda t: np.ones_like(np.asarray(t, dtype=float)),
    "real",
)
POISSON = GlmFamily("poisson", np.exp, np.exp, np.exp, "{0, 1, 2, ...}", _nonnegative_integer)

FAMILIES = {f.name: f for f in (LOGISTIC, GAUSSIAN, POISSON)}


ROLES = ("observed", "synthetic", "auxiliary")


class Dataset:
    """Covariates X (n x p) with responses y; arrays are frozen on construction."""

    __slots__ = ("X", "y", "role")

    def __init__(self, X, y, role: str = "observed", family: GlmFamily | None = LOGISTIC):
        X = np.array(X, dtype=float, copy=True)
        y = np.array(y, dtype=float, copy=True).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise ValueError("covariates must be a matrix")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} covariate rows but {y.shape[0]} responses")
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        if family is not None and not family.valid_response(y):
            raise ValueError(f"responses outside the {family.name} domain {family.y_domain}")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "role", role)

    def __setattr__(self, name, value):
        raise AttributeError("Dataset is immutable")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        return Dataset(self.X[rows], self.y[rows], self.role, family=None)

    def __repr__(self):
        return f"Dataset(n={self.n}, p={self.p}, role={self.role!r})"


def _check_dims(beta, *datasets):
    for d in datasets:
        if d is not None and d.p != beta.shape[0]:
            raise ValueError(f"beta has length {beta.shape[0]} but data has {d.p} columns")


def weighted_gram(X, w):
    """X' diag(w) X using a symmetric rank-k product."""
    A = X * np.sqrt(w)[:, None]
    return A.T @ A


def weighted_objective(family: GlmFamily, observed: Dataset, synthetic: Dataset | None,
                       beta, tau: float, hessian: bool = True):
    """Value, gradient and (optionally) Hessian of the negative log posterior."""
    beta = np.asarray(beta, dtype=float)
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    _check_dims(beta, observed, synthetic)

    eta = observed.X @ beta
    value = float(np.sum(family.b(eta) - observed.y * eta))
    grad = observed.X.T @ (family.b1(eta) - observed.y)
    H = weighted_gram(observed.X, family.b2(eta)) if hessian else None

    if synthetic is not None and tau > 0:
        c = tau / synthetic.n
        eta_s = synthetic.X @ beta
        value += c * float(np.sum(family.b(eta_s) - synthetic.y * eta_s))
        grad = grad + c * (synthetic.X.T @ (family.b1(eta_s) - synthetic.y))
        if hessian:
            H += c * weighted_gram(synthetic.X, family.b2(eta_s))
    return value, grad, H
