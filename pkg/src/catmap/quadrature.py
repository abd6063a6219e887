"""Gauss-Hermite expectations against the standard normal (probabilists' weight).

Nodes and weights come from the Golub-Welsch eigenproblem of the Jacobi matrix
of the monic Hermite polynomials He_k, whose off-diagonal is sqrt(k). The squared
first components of the eigenvectors are the weights and already sum to one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal

DEFAULT_NODES = 48


@lru_cache(maxsize=16)
def _rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n < 1:
        raise ValueError("need at least one node")
    off = np.sqrt(np.arange(1, n, dtype=float))
    nodes, vecs = eigh_tridiagonal(np.zeros(n), off)
    weights = vecs[0] ** 2
    # symmetrize to remove eigen-solver noise: the rule is exactly even
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    weights /= math.fsum(weights)
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return nodes, weights


def hermite_rule(n: int = DEFAULT_NODES) -> tuple[np.ndarray, np.ndarray]:
    return _rule(int(n))


SMOOTH_STEP = 0.01
SMOOTH_HALF_WIDTH = 10.0


@lru_cache(maxsize=64)
def _trapezoid(h: float) -> tuple[np.ndarray, np.ndarray]:
    half = int(math.ceil(SMOOTH_HALF_WIDTH / h))
    z = h * np.arange(-half, half + 1, dtype=float)
    w = h * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    z.flags.writeable = False
    w.flags.writeable = False
    return z, w


def logistic_scale_rule(scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Uniform trapezoid rule for E[f(Z)] when f involves rho(scale * Z) or its derivatives.

    Those integrands are analytic in a strip of half-width pi / scale, where the
    trapezoid error decays like exp(-2 pi^2 / (scale h)); Gauss-Hermite with a
    fixed node count degrades much faster as the strip narrows. The step is
    quantized so that nearby scales share one cached rule.
    """
    h = SMOOTH_STEP
    if scale * h > 0.5:
        h = 0.5 / 2.0 ** math.ceil(math.log2(scale))
    return _trapezoid(h)


class QuadratureError(ArithmeticError):
    pass


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensor-product Gauss-Hermite grid.

    ``nodes`` has shape (dimension, N) with N = nodes_per_axis ** dimension and
    ``weights`` has shape (N,).
    """

    dimension: int = 1
    nodes_per_axis: int = DEFAULT_NODES

    def __post_init__(self):
        if self.dimension not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2 or 3")

    @property
    def axis(self):
        return hermite_rule(self.nodes_per_axis)

    @property
    def nodes(self) -> np.ndarray:
        return _tensor(self.dimension, self.nodes_per_axis)[0]

    @property
    def weights(self) -> np.ndarray:
        return _tensor(self.dimension, self.nodes_per_axis)[1]


@lru_cache(maxsize=16)
def _tensor(dim, n):
    z, w = hermite_rule(n)
    mesh = np.meshgrid(*([z] * dim), indexing="ij")
    nodes = np.stack([m.reshape(-1) for m in mesh])
    wmesh = np.meshgrid(*([w] * dim), indexing="ij")
    weights = np.prod(np.stack([m.reshape(-1) for m in wmesh]), axis=0)
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return nodes, weights


def weighted_sum(weights, values) -> float:
    """Sum of weights * values in numpy's fixed pairwise order."""
    return float(np.sum(weights * values))


def expect(grid: QuadratureGrid, f) -> float:
    """E[f(Z_1, ..., Z_d)] for independent standard normals.

    ``f`` is called once with the coordinate arrays and must be vectorized.
    """
    nodes, weights = grid.nodes, grid.weights
    vals = np.asarray(f(*nodes), dtype=float)
    vals = np.broadcast_to(vals, weights.shape)
    bad = ~np.isfinite(vals)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise QuadratureError(f"non-finite integrand at node {tuple(nodes[:, k])}")
    return weighted_sum(weights, vals)


@dataclass(frozen=True)
class ProxKernel:
    """Integrand weight(u) * form(W) with u, W linear in the grid coordinates.

    W = w_coef . Z and u = weight_coef . Z. ``weight`` is one of "one",
    "rho1" (rho'(u)) or "rho2" (rho''(u)). ``form`` is one of
    "sq_resid" (W - P)^2, "inv_curv" 1 / (1 + lam rho''(P)),
    "curv_ratio" lam rho''(P) / (1 + lam rho''(P)), "prox" P, or "rho2_w" rho''(W),
    where P = prox(W, lam).
    """

    w_coef: tuple
    lam: float
    form: str
    weight: str = "one"
    weight_coef: tuple = ()


def expect_with_prox(grid: QuadratureGrid, kernel: ProxKernel) -> float:
    from .glm import rho1, rho2
    from .prox import prox_rho_array

    nodes = grid.nodes
    coef = np.zeros(grid.dimension)
    coef[: len(kernel.w_coef)] = kernel.w_coef
    W = coef @ nodes

    if kernel.form == "rho2_w":
        core = rho2(W)
    else:
        P = prox_rho_array(W, kernel.lam)[0] if kernel.lam > 0 else W
        if kernel.form == "sq_resid":
            core = (W - P) ** 2
        elif kernel.form == "inv_curv":
            core = 1.0 / (1.0 + kernel.lam * rho2(P))
        elif kernel.form == "curv_ratio":
            c = kernel.lam * rho2(P)
            core = c / (1.0 + c)
        elif kernel.form == "prox":
            core = P
        else:
            raise ValueError(f"unknown kernel form {kernel.form!r}")

    if kernel.weight == "one":
        wt = 1.0
    else:
        ucoef = np.zeros(grid.dimension)
        ucoef[: len(kernel.weight_coef)] = kernel.weight_coef
        u = ucoef @ nodes
        if kernel.weight == "rho1":
            wt = rho1(u)
        elif kernel.weight == "rho2":
            wt = rho2(u)
        else:
            raise ValueError(f"unknown kernel weight {kernel.weight!r}")
    return expect(grid, lambda *z: wt * core)
