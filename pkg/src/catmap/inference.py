"""Signal strength and similarity estimation, adjusted intervals, conditional variances."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .asymptotics import FixedPointOptions, ScalingParams, SolverError, solve_3eq
from .datagen import AuxiliarySpec, DesignSpec, gen_synthetic, substream
from .fitting import MapFit, NewtonOptions, fit_map
from .glm import Dataset

DEFAULT_TAU0 = 0.25
DEFAULT_KAPPA_RANGE = (0.05, 4.0)
DEFAULT_KAPPA_POINTS = 60
CACHE_ENV = "CATMAP_CACHE_DIR"


class CurveError(RuntimeError):
    pass


class OutOfDictionaryError(ValueError):
    def __init__(self, eta, lo, hi):
        super().__init__(f"estimated norm {eta:.6g} is outside the curve range [{lo:.6g}, {hi:.6g}]")
        self.eta, self.lo, self.hi = eta, lo, hi


def default_m(delta: float) -> float:
    """M = 20 p, i.e. m = 20 / delta."""
    return 20.0 / delta


@dataclass(frozen=True)
class GDeltaCurve:
    delta: float
    tau0: float
    m: float
    kappa_grid: np.ndarray
    eta_sq: np.ndarray
    alpha: np.ndarray | None = None
    sigma: np.ndarray | None = None

    def __post_init__(self):
        if np.any(np.diff(self.kappa_grid) <= 0):
            raise CurveError("kappa grid must be increasing")
        if np.any(np.diff(self.eta_sq) <= 0):
            raise CurveError("eta^2 is not strictly increasing along the kappa grid")

    @property
    def eta(self) -> np.ndarray:
        return np.sqrt(self.eta_sq)

    def invert(self, eta_hat: float, clip: bool = False) -> float:
        eta = self.eta
        if not eta[0] <= eta_hat <= eta[-1]:
            if not clip:
                raise OutOfDictionaryError(eta_hat, eta[0], eta[-1])
            eta_hat = min(max(eta_hat, eta[0]), eta[-1])
        return float(np.interp(eta_hat, eta, self.kappa_grid))

    def to_dict(self) -> dict:
        return {
            "delta": self.delta, "tau0": self.tau0, "m": self.m,
            "kappa_grid": self.kappa_grid.tolist(), "eta_sq": self.eta_sq.tolist(),
            "alpha": None if self.alpha is None else self.alpha.tolist(),
            "sigma": None if self.sigma is None else self.sigma.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GDeltaCurve":
        arr = lambda k: None if d.get(k) is None else np.asarray(d[k], dtype=float)
        return cls(float(d["delta"]), float(d["tau0"]), float(d["m"]),
                   arr("kappa_grid"), arr("eta_sq"), arr("alpha"), arr("sigma"))


def _cache_path(delta, tau0, m, grid) -> Path | None:
    root = os.environ.get(CACHE_ENV)
    if not root:
        return None
    h = hashlib.sha256(np.asarray(grid, dtype=float).tobytes()).hexdigest()[:16]
    return Path(root) / f"gdelta_{delta!r}_{tau0!r}_{m!r}_{h}.json"


_memory_cache: dict = {}


def build_gdelta(delta: float, tau0: float = DEFAULT_TAU0, m: float | None = None,
                 kappa_range=DEFAULT_KAPPA_RANGE, n_points: int = DEFAULT_KAPPA_POINTS,
                 opts: FixedPointOptions = FixedPointOptions()) -> GDeltaCurve:
    """eta^2 = alpha*^2 kappa^2 + sigma*^2 over a linear kappa grid."""
    m = default_m(delta) if m is None else float(m)
    lo, hi = kappa_range
    if not 0 < lo < hi:
        raise ValueError("kappa range must satisfy 0 < lo < hi")
    grid = np.linspace(lo, hi, n_points)
    key = (float(delta), float(tau0), float(m), grid.tobytes())
    if key in _memory_cache:
        return _memory_cache[key]
    path = _cache_path(delta, tau0, m, grid)
    if path is not None and path.exists():
        curve = GDeltaCurve.from_dict(json.loads(path.read_text()))
        _memory_cache[key] = curve
        return curve

    alphas, sigmas = [], []
    point_opts = opts
    for k in grid:
        try:
            sol = solve_3eq(ScalingParams(delta, tau0, m, float(k)), point_opts)
        except (SolverError, ValueError) as err:
            raise CurveError(f"solver failed at kappa = {k:.6g}: {err}") from err
        alphas.append(sol.alpha1)
        sigmas.append(sol.sigma)
        if opts.init is None:
            # neighbouring grid points have nearby solutions
            point_opts = replace(opts, init=(sol.alpha1, sol.sigma, sol.gamma))
    alphas, sigmas = np.array(alphas), np.array(sigmas)
    curve = GDeltaCurve(float(delta), float(tau0), float(m), grid,
                        alphas**2 * grid**2 + sigmas**2, alphas, sigmas)
    _memory_cache[key] = curve
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(curve.to_dict()))
    return curve


def _check_curve(curve: GDeltaCurve, delta: float, tau0: float, m: float):
    for name, a, b in (("delta", curve.delta, delta), ("tau0", curve.tau0, tau0), ("m", curve.m, m)):
        if not math.isclose(a, b, rel_tol=1e-9):
            raise ValueError(f"curve was built for {name} = {a:g}, data need {b:g}")


def noninformative_fit(observed: Dataset, tau0: float, m: float, seed,
                       fit_opts: NewtonOptions = NewtonOptions()) -> MapFit:
    """Fit with M = m n fresh Gaussian non-informative synthetic rows and tau = tau0 n."""
    n, p = observed.n, observed.p
    M = int(round(m * n))
    syn = gen_synthetic(AuxiliarySpec(M), DesignSpec(n, p), seed=seed)
    return fit_map(observed, syn, tau0 * n, opts=fit_opts)


def estimate_kappa1(observed: Dataset, tau0: float, m: float, curve: GDeltaCurve,
                    fit_opts: NewtonOptions = NewtonOptions(), seed=0,
                    clip: bool = False) -> float:
    """Invert the curve at the norm of the MAP estimate.

    With ``clip`` an estimated norm outside the curve maps to the nearest end
    of the kappa grid instead of raising.
    """
    delta = observed.n / observed.p
    _check_curve(curve, delta, tau0, m)
    fit = noninformative_fit(observed, tau0, m, seed, fit_opts)
    return curve.invert(float(np.linalg.norm(fit.beta_hat)), clip=clip)


@dataclass(frozen=True)
class XiEstimate:
    xi: float
    naive: float
    kappa_target: float
    kappa_source: float
    alpha_target: float
    alpha_source: float
    beta_target: np.ndarray
    beta_source: np.ndarray


def estimate_xi_details(target: Dataset, source: Dataset, tau0: float = DEFAULT_TAU0,
                        M: int | None = None, seed=0, known_kappas=None,
                        curves=None, fit_opts: NewtonOptions = NewtonOptions(),
                        clip: bool = True) -> XiEstimate:
    if target.p != source.p:
        raise ValueError("target and source must share the covariate dimension")
    p = target.p
    M = 20 * p if M is None else int(M)
    fits, kappas, alphas = [], [], []
    for k, data in enumerate((target, source)):
        m = M / data.n
        fit = noninformative_fit(data, tau0, m, substream(seed, k + 1), fit_opts)
        delta = data.n / p
        if known_kappas is not None:
            kappa = float(known_kappas[k])
        else:
            curve = curves[k] if curves is not None else build_gdelta(delta, tau0, m)
            _check_curve(curve, delta, tau0, m)
            kappa = curve.invert(float(np.linalg.norm(fit.beta_hat)), clip=clip)
        sol = solve_3eq(ScalingParams(delta, tau0, m, kappa))
        fits.append(fit.beta_hat)
        kappas.append(kappa)
        alphas.append(sol.alpha1)
    b0, bs = fits
    raw = float(b0 @ bs) / (alphas[0] * alphas[1] * kappas[0] * kappas[1])
    naive = float(b0 @ bs) / float(np.linalg.norm(b0) * np.linalg.norm(bs))
    return XiEstimate(min(max(raw, -1.0), 1.0), naive, kappas[0], kappas[1],
                      alphas[0], alphas[1], b0, bs)


def estimate_xi(target: Dataset, source: Dataset, tau0: float = DEFAULT_TAU0,
                M: int | None = None, seed=0, known_kappas=None, **kwargs) -> float:
    """Similarity between target and source coefficients, corrected for shrinkage."""
    return estimate_xi_details(target, source, tau0, M, seed, known_kappas, **kwargs).xi


@dataclass(frozen=True)
class AdjustedCI:
    lower: np.ndarray
    upper: np.ndarray
    level: float
    alpha_star_hat: float
    sigma_star_hat: float

    def covers(self, beta) -> np.ndarray:
        beta = np.asarray(beta)
        return (self.lower <= beta) & (beta <= self.upper)


def adjusted_cis(fit: MapFit, p: int, alpha_star: float, sigma_star: float,
                 level: float = 0.95) -> AdjustedCI:
    if alpha_star == 0:
        raise ValueError("alpha* = 0 gives degenerate intervals")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    z = float(ndtri(0.5 * (1 + level)))
    half = z * sigma_star / math.sqrt(p)
    a = (fit.beta_hat - half) / alpha_star
    b = (fit.beta_hat + half) / alpha_star
    return AdjustedCI(np.minimum(a, b), np.maximum(a, b), level, alpha_star, sigma_star)


def conditional_variances(X, method: str = "nodewise") -> np.ndarray:
    """Estimates of Var(X_j | X_-j) for every column.

    ``nodewise``: residual sum of squares of X_j regressed on the other columns,
    divided by n - p + 1. ``precision_diag``: 1 / Omega_jj with Omega the
    unbiased precision estimate (n - p - 2) / (n - 1) * S^-1 of the sample
    covariance S.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if method == "nodewise":
        if n <= p:
            raise ValueError("nodewise regression needs more rows than columns")
        G = X.T @ X
        try:
            inv_diag = np.diag(np.linalg.inv(G))
        except np.linalg.LinAlgError:
            raise ValueError("singular design") from None
        # RSS_j of the no-intercept regression equals 1 / (X'X)^-1_jj
        return 1.0 / inv_diag / (n - p + 1)
    if method == "precision_diag":
        if n <= p + 2:
            raise ValueError("need n > p + 2 for the precision estimate")
        S = np.cov(X, rowvar=False)
        try:
            omega = np.linalg.inv(S) * (n - p - 2) / (n - 1)
        except np.linalg.LinAlgError:
            raise ValueError("singular sample covariance") from None
        return 1.0 / np.diag(omega)
    raise ValueError(f"unknown method {method!r}")


def estimate_eta_general(observed: Dataset, fit: MapFit, tau: float,
                         synthetic: Dataset | None = None) -> float:
    """Signal norm estimate for general covariance, from leave-one-out predictors."""
    from .tuning import approx_loo

    lt = approx_loo(fit, observed, synthetic, tau)
    var = float(np.mean(lt**2) - np.mean(lt) ** 2)
    return math.sqrt(max(var, 0.0))
