"""Scalar fixed-point systems describing the MAP estimator in the proportional regime.

Three systems are supported, all for logistic regression with isotropic Gaussian
covariates and Gaussian synthetic covariates:

* ``three_eq``   non-informative synthetic data (Bern(1/2) responses), unknowns
                 (alpha, sigma, gamma);
* ``four_eq``    informative auxiliary data generated from beta_s with
                 |beta_s| -> kappa2 and cosine xi to beta0, unknowns
                 (alpha1, alpha2, sigma, gamma);
* ``m_infinity`` the M/n -> infinity limit of either of the above.

Every expectation is a two dimensional Gaussian integral. Terms weighted by a
function of Z1 use (Z1, U) with W = kappa1 alpha1 Z1 + sqrt(kappa2^2 alpha2^2 + sigma^2) U.
Terms weighted by a function of the auxiliary index V = xi Z1 + sqrt(1 - xi^2) Z2 use
(V, U) with W = c V + s U, where c = Cov(V, W). This is an exact rewrite of the
three dimensional integrals (W given Z1 or V is Gaussian), so 3-D tensor grids
are only needed as a cross-check.

Differences W - Prox(W) are evaluated as lam * rho'(Prox(W)), and the auxiliary
terms that carry a factor m are rewritten with gamma0 = tau0 gamma / m so that
nothing cancels catastrophically when m is large.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq, root
from scipy.special import ndtr

from .glm import rho, rho1, rho2
from .prox import prox_rho_array
from .quadrature import DEFAULT_NODES, QuadratureGrid, hermite_rule, logistic_scale_rule

SYSTEMS = ("three_eq", "four_eq", "m_infinity")


class SolverError(RuntimeError):
    """The fixed-point iteration failed to converge."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory or []


class RegimeError(ValueError):
    """Parameters outside the region where the system has a solution."""


class NonUniquenessError(SolverError):
    pass


@dataclass(frozen=True)
class ScalingParams:
    delta: float
    tau0: float
    m: float
    kappa1: float
    kappa2: float = 0.0
    xi: float = 0.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not self.tau0 > 0:
            raise ValueError("tau0 must be positive")
        if not self.m > 0:
            raise ValueError("m must be positive")
        if not self.kappa1 > 0:
            raise ValueError("kappa1 must be positive")
        if self.kappa2 < 0:
            raise ValueError("kappa2 must be nonnegative")
        if not 0.0 <= self.xi <= 1.0:
            raise ValueError("xi must lie in [0, 1]")

    @property
    def infinite_m(self) -> bool:
        return math.isinf(self.m)

    def gamma0(self, gamma: float) -> float:
        return 0.0 if self.infinite_m else self.tau0 * gamma / self.m


@dataclass(frozen=True)
class FixedPointOptions:
    max_iter: int = 500
    step_tol: float = 1e-9
    residual_tol: float = 1e-8
    patience: int = 3
    damping: float = 0.5
    min_damping: float = 0.05
    nodes: int = DEFAULT_NODES
    init: tuple | None = None
    check_uniqueness: bool = False
    uniqueness_tol: float = 1e-4
    polish: bool = True


RESTARTS = ((1.0, 1.0, 1.0), (0.5, 2.0, 0.5), (1.5, 0.5, 2.0))
SIGMA_BOUNDS = (1e-6, 50.0)
GAMMA_BOUNDS = (1e-6, 1e4)
MAX_INDEX_NODES = 2048


@dataclass(frozen=True)
class ScalarSolution:
    alpha1: float
    alpha2: float
    sigma: float
    gamma: float
    residual_norm: float
    system: str
    iterations: int = 0

    @property
    def alpha(self) -> float:
        return self.alpha1


def index_nodes(nodes: int, kappa: float) -> int:
    """Nodes along the Z1 / V axis.

    The weights rho'(-kappa Z) have poles at distance pi / kappa from the real
    axis, so the Gauss-Hermite error for a fixed node count grows quickly with
    kappa; about 25 kappa^2 nodes keep it below 1e-10.
    """
    return max(nodes, min(MAX_INDEX_NODES, math.ceil(25.0 * kappa * kappa)))


class _Integrals:
    """Quadrature nodes shared by every expectation of one system."""

    def __init__(self, nodes: int, nodes_index: int | None = None):
        nodes_index = nodes if nodes_index is None else nodes_index
        za, wa = hermite_rule(nodes_index)
        zu, wu = hermite_rule(nodes)
        self.a = np.repeat(za, nodes)  # Z1 or V
        self.u = np.tile(zu, nodes_index)  # independent residual direction
        self.w = np.repeat(wa, nodes) * np.tile(wu, nodes_index)
        self.z1d, self.w1d = za, wa

    def mean(self, values) -> float:
        return float(np.sum(self.w * values))


class _System:
    """Right-hand sides of one scalar system at fixed parameters.

    State is always carried as (alpha1, alpha2, sigma, gamma); for the
    non-informative systems kappa2 = 0 and alpha2 stays at zero.
    """

    def __init__(self, params: ScalingParams, nodes: int, informative: bool):
        self.p = params
        self.informative = informative
        k1, k2 = params.kappa1, params.kappa2
        self.q = _Integrals(nodes, index_nodes(nodes, max(k1, k2)))
        xi = params.xi if informative else 1.0
        self.xi = xi
        self.root = math.sqrt(max(1.0 - xi * xi, 0.0))
        q = self.q
        # weights on the target grid (Z1, U)
        self.wt_target = rho1(-k1 * q.a)
        self.curv_target = rho2(k1 * q.a)
        # weights on the auxiliary grid (V, U)
        self.wt_aux = rho1(-k2 * q.a)
        self.curv_aux = rho2(k2 * q.a)
        self.e_curv_k2 = float(np.sum(q.w1d * rho2(k2 * q.z1d)))

    def _w_target(self, a1, a2, s):
        k1, k2 = self.p.kappa1, self.p.kappa2
        return k1 * a1 * self.q.a + math.sqrt(k2 * k2 * a2 * a2 + s * s) * self.q.u

    def _w_aux(self, a1, a2, s):
        k1, k2 = self.p.kappa1, self.p.kappa2
        c = k1 * a1 * self.xi + k2 * a2 * self.root
        total = k1 * k1 * a1 * a1 + k2 * k2 * a2 * a2 + s * s
        return c * self.q.a + math.sqrt(max(total - c * c, 0.0)) * self.q.u

    def _aux_prox(self, a1, a2, s, g):
        """(W_aux, Prox at gamma0) on the auxiliary grid; None when m is infinite."""
        if self.p.infinite_m:
            return None, None
        Wb = self._w_aux(a1, a2, s)
        return Wb, prox_rho_array(Wb, self.p.gamma0(g))[0]

    def eq2_residual(self, a1, a2, s, g, cache=None):
        p = self.p
        W = self._w_target(a1, a2, s)
        P = prox_rho_array(W, g)[0]
        lhs = 1.0 - 1.0 / p.delta
        val = lhs - self.q.mean(2.0 * self.wt_target / (1.0 + g * rho2(P)))
        if p.infinite_m:
            val += p.tau0 * g * self.q.mean(rho2(W))
        else:
            g0 = p.gamma0(g)
            _, P0 = self._aux_prox(a1, a2, s, g)
            c0 = rho2(P0)
            val += p.tau0 * g * self.q.mean(2.0 * self.wt_aux * c0 / (1.0 + g0 * c0))
        if cache is not None:
            cache["P"] = P
        return val

    def rhs(self, a1, a2, s, g):
        """Right-hand sides of the sigma, alpha1 and alpha2 equations."""
        p, q = self.p, self.q
        W = self._w_target(a1, a2, s)
        P = prox_rho_array(W, g)[0]
        r1 = q.mean(self.wt_target * (g * rho1(P)) ** 2)
        r3 = q.mean(self.curv_target * P)
        if p.infinite_m:
            r3 -= 0.5 * p.tau0 * g * (p.kappa2 / p.kappa1) * self.xi * self.e_curv_k2 if self.informative else 0.0
            r4 = -0.5 * p.tau0 * g * self.root * self.e_curv_k2 if self.informative else 0.0
        else:
            g0 = p.gamma0(g)
            _, P0 = self._aux_prox(a1, a2, s, g)
            r1 += p.m * q.mean(self.wt_aux * (g0 * rho1(P0)) ** 2)
            # m * E[rho''(k2 V) Prox_g0(W)] = -tau0 g E[rho''(k2 V) rho'(Prox_g0(W))]
            aux = -p.tau0 * g * q.mean(self.curv_aux * rho1(P0))
            if self.informative:
                r3 += self.xi * (p.kappa2 / p.kappa1) * aux
            r4 = self.root * aux
        return r1, r3, r4

    def residuals(self, state):
        a1, a2, s, g = state
        d = self.p.delta
        r1, r3, r4 = self.rhs(a1, a2, s, g)
        return np.array([
            s * s / (2 * d) - r1,
            self.eq2_residual(a1, a2, s, g),
            -a1 / (2 * d) - r3,
            -a2 / (2 * d) - r4,
        ])

    def solve_gamma(self, a1, a2, s, g_start):
        lo_b, hi_b = GAMMA_BOUNDS
        f = lambda g: self.eq2_residual(a1, a2, s, g)
        g_start = min(max(g_start, lo_b), hi_b)
        f0 = f(g_start)
        if f0 == 0.0:
            return g_start
        # the residual is increasing in gamma (it tends to -1/delta at 0)
        lo, hi, flo, fhi = None, None, None, None
        g, fg = g_start, f0
        factor = 1.25
        for _ in range(200):
            if fg < 0:
                lo, flo = g, fg
                if hi is not None:
                    break
                g_next = min(g * factor, hi_b)
            else:
                hi, fhi = g, fg
                if lo is not None:
                    break
                g_next = max(g / factor, lo_b)
            if g_next == g:
                break
            g = g_next
            fg = f(g)
            factor *= 2.0
        if lo is None or hi is None:
            return lo if hi is None else hi
        return brentq(f, min(lo, hi), max(lo, hi), xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


def _check_regime(params: ScalingParams):
    if not params.infinite_m and params.m * params.delta <= 2:
        raise RegimeError(
            f"m*delta = {params.m * params.delta:.6g} violates the existence condition m*delta > 2"
        )


def _iterate(system: _System, init, opts: FixedPointOptions, n_free: int):
    """Damped fixed-point iteration; returns (state, iterations)."""
    d = system.p.delta
    x = np.array(init, dtype=float)
    omega = opts.damping
    calm = 0
    last_sign = np.zeros(4)
    alternations = np.zeros(4, dtype=int)
    tail = []
    for it in range(1, opts.max_iter + 1):
        a1, a2, s, g = x
        r1, r3, r4 = system.rhs(a1, a2, s, g)
        s_new = math.sqrt(max(2 * d * r1, 0.0))
        a1_new = -2 * d * r3
        a2_new = -2 * d * r4 if n_free == 4 else 0.0
        s_new = min(max(s_new, SIGMA_BOUNDS[0]), SIGMA_BOUNDS[1])
        g_new = system.solve_gamma(a1_new * omega + a1 * (1 - omega),
                                   a2_new * omega + a2 * (1 - omega),
                                   s_new * omega + s * (1 - omega), g)
        target = np.array([a1_new, a2_new, s_new, g_new])
        step = omega * (target - x)
        step[3] = g_new - g  # gamma is re-solved exactly, not damped
        x = x + step
        x[2] = min(max(x[2], SIGMA_BOUNDS[0]), SIGMA_BOUNDS[1])
        x[3] = min(max(x[3], GAMMA_BOUNDS[0]), GAMMA_BOUNDS[1])
        size = float(np.max(np.abs(step)))
        tail.append((it, *x.tolist(), size))
        tail = tail[-10:]

        sign = np.sign(step)
        flipped = (sign * last_sign) < 0
        alternations = np.where(flipped, alternations + 1, 0)
        last_sign = sign
        if np.any(alternations >= 4) and omega > opts.min_damping:
            omega = max(0.5 * omega, opts.min_damping)
            alternations[:] = 0

        calm = calm + 1 if size <= opts.step_tol else 0
        if calm >= opts.patience:
            return x, it, tail
    raise SolverError(f"fixed-point iteration did not converge in {opts.max_iter} steps", tail)


def _polish(system: _System, x, n_free: int, err: SolverError):
    """Hybrid Newton finish for slowly contracting iterations."""
    free = [0, 1, 2, 3] if n_free == 4 else [0, 2, 3]

    def f(v):
        y = x.copy()
        y[free] = v
        if y[2] <= 0 or y[3] <= 0:
            return np.full(len(free), 1e3)
        r = system.residuals(y)
        return r[[0, 1, 2, 3]] if n_free == 4 else r[:3]

    sol = root(f, x[free], method="hybr", options={"xtol": 1e-13})
    y = x.copy()
    y[free] = sol.x
    if not np.all(np.isfinite(y)) or y[2] <= 0 or y[3] <= 0:
        raise err
    return y, sol.nfev, err.trajectory


def _solve(params: ScalingParams, opts: FixedPointOptions, informative: bool, system_name: str):
    n_free = 4 if informative else 3
    system = _System(params, opts.nodes, informative)
    starts = [opts.init] if opts.init is not None else [RESTARTS[0]]
    if opts.check_uniqueness:
        starts = list(starts) + [r for r in RESTARTS if r not in starts]
    found = []
    for start in starts:
        start = tuple(start)
        if len(start) == 3:
            a1, s, g = start
            a2 = 1.0 if n_free == 4 else 0.0
        else:
            a1, a2, s, g = start
            if n_free == 3:
                a2 = 0.0
        try:
            x, its, tail = _iterate(system, (a1, a2, s, g), opts, n_free)
        except SolverError as err:
            if not opts.polish or not err.trajectory:
                raise
            x, its, tail = _polish(system, np.array(err.trajectory[-1][1:5]), n_free, err)
        res = system.residuals(x)
        if n_free == 3:
            res = res[:3]
        norm = float(np.max(np.abs(res)))
        if norm > opts.residual_tol:
            raise SolverError(f"converged point has residual {norm:.3g} > {opts.residual_tol:g}", tail)
        found.append((x, its, norm))
    base = found[0][0]
    for other, _, _ in found[1:]:
        if np.max(np.abs(other - base)) > opts.uniqueness_tol:
            raise NonUniquenessError(
                f"restarts converged to different solutions {base.tolist()} and {other.tolist()}"
            )
    x, its, norm = found[0]
    return ScalarSolution(float(x[0]), float(x[1]), float(x[2]), float(x[3]), norm, system_name, its)


def residuals_3eq(state, params: ScalingParams, grid: QuadratureGrid | None = None) -> np.ndarray:
    """Residuals (LHS - RHS) of the non-informative system at (alpha, sigma, gamma)."""
    alpha, sigma, gamma = state
    nodes = grid.nodes_per_axis if grid is not None else DEFAULT_NODES
    sysm = _System(replace(params, kappa2=0.0), nodes, informative=False)
    return sysm.residuals((alpha, 0.0, sigma, gamma))[:3]


def residuals_4eq(state, params: ScalingParams, grid: QuadratureGrid | None = None) -> np.ndarray:
    """Residuals of the informative system at (alpha1, alpha2, sigma, gamma)."""
    nodes = grid.nodes_per_axis if grid is not None else DEFAULT_NODES
    return _System(params, nodes, informative=True).residuals(tuple(state))


def residuals_minfty(state, params: ScalingParams, grid: QuadratureGrid | None = None) -> np.ndarray:
    nodes = grid.nodes_per_axis if grid is not None else DEFAULT_NODES
    informative = params.kappa2 > 0
    if len(state) == 3:
        a1, s, g = state
        state = (a1, 0.0, s, g)
    res = _System(params, nodes, informative).residuals(tuple(state))
    return res if informative else res[:3]


def solve_3eq(params: ScalingParams, opts: FixedPointOptions = FixedPointOptions()) -> ScalarSolution:
    if params.kappa2 != 0:
        raise ValueError("the non-informative system needs kappa2 = 0")
    if params.infinite_m:
        raise ValueError("use solve_minfty for m = inf")
    _check_regime(params)
    return _solve(params, opts, informative=False, system_name="three_eq")


def solve_4eq(params: ScalingParams, opts: FixedPointOptions = FixedPointOptions()) -> ScalarSolution:
    if params.infinite_m:
        raise ValueError("use solve_minfty for m = inf")
    _check_regime(params)
    return _solve(params, opts, informative=True, system_name="four_eq")


def solve_minfty(params: ScalingParams, opts: FixedPointOptions = FixedPointOptions()) -> ScalarSolution:
    """Solve the m -> infinity system (a conjectured limit, not a theorem).

    With kappa2 = 0 this is the non-informative limit; with kappa2 > 0 the
    informative one.
    """
    if not params.infinite_m:
        raise ValueError("solve_minfty needs m = inf")
    return _solve(params, opts, informative=params.kappa2 > 0, system_name="m_infinity")


def solve(params: ScalingParams, opts: FixedPointOptions = FixedPointOptions()) -> ScalarSolution:
    """Dispatch on (m, kappa2)."""
    if params.infinite_m:
        return solve_minfty(params, opts)
    if params.kappa2 > 0:
        return solve_4eq(params, opts)
    return solve_3eq(params, opts)


def limit_metrics(sol: ScalarSolution, params: ScalingParams, nodes: int | None = None) -> dict:
    """Limits of squared error, cosine similarity, generalization error and predictive deviance.

    ``nodes`` forces a Gauss-Hermite rule of that size for the 1-D expectations.
    """
    k1, k2 = params.kappa1, params.kappa2
    a1, a2, s = sol.alpha1, sol.alpha2, sol.sigma
    noise_sq = a2 * a2 * k2 * k2 + s * s
    norm_sq = a1 * a1 * k1 * k1 + noise_sq
    mse = (a1 - 1.0) ** 2 * k1 * k1 + noise_sq
    cosine = a1 * k1 / math.sqrt(norm_sq)
    if noise_sq <= 0:
        raise ValueError("sigma = 0 makes the generalization error degenerate")
    z, w = logistic_scale_rule(max(k1, math.sqrt(norm_sq))) if nodes is None else hermite_rule(nodes)
    a = a1 * k1 / math.sqrt(noise_sq)
    pz = rho1(k1 * z)
    gen = float(np.sum(w * (pz * ndtr(-a * z) + (1.0 - pz) * ndtr(a * z))))
    dev = float(np.sum(w * rho(math.sqrt(norm_sq) * z))) - a1 * k1 * float(np.sum(w * pz * z))
    return {"mse": mse, "cosine": cosine, "gen_error": gen, "pred_deviance": dev}


def solution_record(sol: ScalarSolution, params: ScalingParams) -> dict:
    rec = {
        "system": sol.system,
        "delta": params.delta,
        "tau0": params.tau0,
        "m": params.m if not params.infinite_m else "inf",
        "kappa1": params.kappa1,
        "kappa2": params.kappa2,
        "xi": params.xi,
        "alpha1": sol.alpha1,
        "alpha2": sol.alpha2,
        "sigma": sol.sigma,
        "gamma": sol.gamma,
        "residual_norm": sol.residual_norm,
    }
    lim = limit_metrics(sol, params)
    rec["mse"] = lim["mse"]
    rec["cosine"] = lim["cosine"]
    return rec
