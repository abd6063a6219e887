"""Reference implementations that share no code with the package.

Prox by plain bisection, Gauss-Hermite nodes from numpy's physicists' rule,
and the scalar systems written out term by term on full tensor grids.
"""

import math

import numpy as np
from scipy.special import expit


def bisect_prox(z, lam, iters: int = 64):
    """Root of t + lam * expit(t) = z, bracketed by [z - lam, z]."""
    z = np.asarray(z, dtype=float)
    lo, hi = z - lam, z.copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        above = mid + lam * expit(mid) > z
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    return 0.5 * (lo + hi)


def d2(t):
    return expit(t) * expit(-t)


def normal_rule(n):
    x, w = np.polynomial.hermite.hermgauss(n)
    return math.sqrt(2.0) * x, w / math.sqrt(math.pi)


def tensor(n, dim):
    z, w = normal_rule(n)
    mesh = np.meshgrid(*([z] * dim), indexing="ij")
    wm = np.meshgrid(*([w] * dim), indexing="ij")
    return [m.ravel() for m in mesh], np.prod([m.ravel() for m in wm], axis=0)


def literal_3eq(state, delta, tau0, m, k, n=160):
    """LHS - RHS of the three-variable system on an n x n grid."""
    a, s, g = state
    (z1, z2), w = tensor(n, 2)
    g0 = tau0 * g / m
    W = k * a * z1 + s * z2
    P, P0 = bisect_prox(W, g), bisect_prox(W, g0)
    E = lambda f: float(np.sum(w * f))
    r1 = s * s / (2 * delta) - (E(expit(-k * z1) * (W - P) ** 2) + m * E(0.5 * (W - P0) ** 2))
    r2 = 1 - 1 / delta - (E(2 * expit(-k * z1) / (1 + g * d2(P))) - E(g * tau0 * d2(P0) / (1 + g0 * d2(P0))))
    r3 = -a / (2 * delta) - E(d2(-k * z1) * P)
    return np.array([r1, r2, r3])


def literal_4eq(state, delta, tau0, m, k1, k2, xi, n=60):
    """LHS - RHS of the four-variable system on a full n^3 grid."""
    a1, a2, s, g = state
    (z1, z2, z3), w = tensor(n, 3)
    g0 = tau0 * g / m
    W = k1 * a1 * z1 + k2 * a2 * z2 + s * z3
    P, P0 = bisect_prox(W, g), bisect_prox(W, g0)
    u = -k2 * xi * z1 - k2 * math.sqrt(1 - xi * xi) * z2
    E = lambda f: float(np.sum(w * f))
    r1 = s * s / (2 * delta) - (E(expit(-k1 * z1) * (W - P) ** 2) + m * E(expit(u) * (W - P0) ** 2))
    r2 = 1 - 1 / delta + m - (E(2 * expit(-k1 * z1) / (1 + g * d2(P))) + m * E(2 * expit(u) / (1 + g0 * d2(P0))))
    r3 = -a1 / (2 * delta) - (E(d2(-k1 * z1) * P) + m * xi * (k2 / k1) * E(d2(u) * P0))
    r4 = -a2 / (2 * delta) - m * math.sqrt(1 - xi * xi) * E(d2(u) * P0)
    return np.array([r1, r2, r3, r4])
