"""Proximal map and Moreau envelope of lam * rho, with rho(t) = log(1 + e^t).

prox(z, lam) is the unique root of t + lam * rho'(t) = z, which always lies in
[z - lam, z] because rho' takes values in (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .glm import rho

PROX_TOL = 1e-12


@dataclass(frozen=True)
class ProxResult:
    t: float
    residual: float
    iterations: int


def prox_rho_array(z, lam, tol: float = PROX_TOL, max_iter: int = 200):
    """Vectorized safeguarded Newton solve; returns (t, max_residual, iterations).

    ``z`` and ``lam`` broadcast against each other.
    """
    z, lam = np.broadcast_arrays(np.asarray(z, dtype=float), np.asarray(lam, dtype=float))
    if np.any(lam < 0):
        raise ValueError("lambda must be nonnegative")
    # widen by a few ulps so the root is strictly inside even when it rounds to z - lam
    pad = 4 * np.spacing(np.abs(z) + lam + 1.0)
    lo = z - lam - pad
    hi = z + pad
    # g(t) = t + lam rho'(t) - z is concave for t > 0 and convex for t < 0, so
    # Newton started on the near side of the root moves monotonically towards it
    t = np.where(z > 0.5 * lam, np.maximum(z - lam, 0.0), np.minimum(z, 0.0))
    for it in range(1, max_iter + 1):
        s = expit(t)
        g = t + lam * s - z
        res = np.abs(g)
        worst = float(res.max()) if res.size else 0.0
        if worst <= tol:
            return t, worst, it - 1
        pos = g > 0
        hi = np.where(pos, t, hi)
        lo = np.where(pos, lo, t)
        step = t - g / (1.0 + lam * s * (1.0 - s))
        outside = (step <= lo) | (step >= hi)
        t = np.where(res <= tol, t, np.where(outside, 0.5 * (lo + hi), step))
        # once the bracket has collapsed to adjacent floats keep the better end
        tiny = (hi - lo) <= pad
        if np.any(tiny):
            t = np.where(tiny, np.where(pos, hi, lo), t)
    s = expit(t)
    res = np.abs(t + lam * s - z)
    return t, float(res.max()) if res.size else 0.0, max_iter


def prox_rho(z: float, lam: float) -> ProxResult:
    if not np.isfinite(z):
        raise ValueError("z must be finite")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if lam == 0:
        return ProxResult(float(z), 0.0, 0)
    t, res, it = prox_rho_array(np.array([z]), np.array([lam]))
    return ProxResult(float(t[0]), res, it)


def moreau_rho(z: float, lam: float) -> float:
    """min_t rho(t) + (t - z)^2 / (2 lam)."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    t = prox_rho(z, lam).t
    return float(rho(t)) + (t - z) ** 2 / (2.0 * lam)


def moreau_grad(z: float, lam: float) -> tuple[float, float]:
    """Partial derivatives of the envelope in z and in lam."""
    t = prox_rho(z, lam).t
    return (z - t) / lam, -((z - t) ** 2) / (2.0 * lam * lam)
