"""FDR-controlled variable selection from MAP fits.

Mirror statistics come from two independent half-sample fits; DS thresholds
them once, MDS aggregates many random splits through inclusion rates, and ABH /
ABY run Benjamini-Hochberg / Benjamini-Yekutieli on p-values that account for
the shrinkage and inflation of the MAP estimator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .asymptotics import ScalingParams, solve_3eq
from .datagen import AuxiliarySpec, DesignSpec, gen_design, gen_synthetic, rng_for, spawn_seeds, substream
from .fitting import MapFit, NewtonOptions, fit_map, split_fit
from .glm import Dataset
from .inference import build_gdelta, conditional_variances, estimate_eta_general

METHODS = ("DS", "MDS", "ABH", "ABY")


@dataclass(frozen=True)
class SelectionResult:
    selected: np.ndarray
    mirror: np.ndarray | None
    cutoff: float
    q: float
    method: str
    rates: np.ndarray | None = None

    def to_json(self, include_mirror: bool = True) -> str:
        d = {
            "method": self.method,
            "q": self.q,
            "cutoff": self.cutoff if math.isfinite(self.cutoff) else None,
            "selected": sorted(int(j) for j in self.selected),
        }
        if include_mirror and self.mirror is not None:
            d["mirror"] = [float(v) for v in self.mirror]
        return json.dumps(d)


def mirror_statistics(fit1: MapFit, fit2: MapFit, v_sq) -> np.ndarray:
    b1, b2 = fit1.beta_hat, fit2.beta_hat
    v_sq = np.asarray(v_sq, dtype=float)
    if not (b1.shape == b2.shape == v_sq.shape):
        raise ValueError("length mismatch")
    return v_sq * b1 * b2


def _ratio(neg: int, pos: int) -> float:
    if pos == 0:
        return 0.0 if neg == 0 else math.inf
    return neg / pos


def fdr_cutoff(mirror, q: float) -> float:
    """Smallest t in {|M_j|} with #{M < -t} / #{M > t} <= q, or +inf.

    A threshold that leaves nothing above it selects the empty set, so it is
    reported as +inf rather than as max |M_j| (where the 0/0 ratio is 0).
    """
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    M = np.asarray(mirror, dtype=float)
    cands = np.unique(np.abs(M[M != 0]))
    if cands.size == 0:
        return math.inf
    neg_sorted = np.sort(-M[M < 0])  # magnitudes of negatives
    pos_sorted = np.sort(M[M > 0])
    # counts strictly beyond each candidate
    neg = neg_sorted.size - np.searchsorted(neg_sorted, cands, side="right")
    pos = pos_sorted.size - np.searchsorted(pos_sorted, cands, side="right")
    for t, a, b in zip(cands, neg, pos):
        if b == 0:
            break
        if _ratio(int(a), int(b)) <= q:
            return float(t)
    return math.inf


def _select_above(M, cutoff):
    return np.flatnonzero(M > cutoff) if math.isfinite(cutoff) else np.array([], dtype=int)


def gaussian_synthetic(covariance=None):
    """Builder of non-informative synthetic data with N(0, I) or N(0, covariance) rows."""
    def build(half: Dataset, M: int, seed) -> Dataset:
        law = "standard_gaussian" if covariance is None else "gaussian_with_covariance"
        return gen_synthetic(AuxiliarySpec(M), DesignSpec(half.n, half.p, law, covariance), seed=seed)
    return build


def select_ds(observed: Dataset, q: float = 0.1, tau0: float = 0.25, m: float | None = None,
              v_method: str = "nodewise", seed=0, synthetic=None,
              fit_opts: NewtonOptions = NewtonOptions()) -> SelectionResult:
    """Single data split: fit both halves, form M_j = T1_j T2_j with T = v_hat * beta_hat, threshold.

    ``m`` is the synthetic-to-observed ratio inside each half (default M = 20 p
    in total, split evenly between halves). ``synthetic`` is a builder
    (half, M, seed) -> Dataset; the default draws N(0, I) rows.
    """
    n, p = observed.n, observed.p
    if m is None:
        m = 20.0 * p / n
    build = synthetic or gaussian_synthetic()
    fits = split_fit(observed, lambda nh: tau0 * nh,
                     lambda half, s: build(half, int(round(m * half.n)), s), seed, opts=fit_opts)
    halves = [observed.X[r] for r in fits.rows]
    v1 = np.sqrt(conditional_variances(halves[0], v_method))
    v2 = np.sqrt(conditional_variances(halves[1], v_method))
    M = (v1 * fits.first.beta_hat) * (v2 * fits.second.beta_hat)
    cut = fdr_cutoff(M, q)
    return SelectionResult(_select_above(M, cut), M, cut, q, "DS")


def inclusion_rates(selections, p: int) -> np.ndarray:
    """Average over splits of 1{j selected} / |S|, rescaled to sum to one."""
    rates = np.zeros(p)
    for sel in selections:
        if len(sel):
            rates[np.asarray(sel, dtype=int)] += 1.0 / len(sel)
    rates /= max(len(selections), 1)
    total = rates.sum()
    return rates / total if total > 0 else rates


def mds_from_rates(rates, q: float) -> np.ndarray:
    """Drop the largest low-rate prefix whose cumulative rate stays <= q; keep the rest.

    The prefix may only end between distinct rate values, so tied features are
    kept or dropped together.
    """
    rates = np.asarray(rates, dtype=float)
    order = np.argsort(rates, kind="stable")
    srt = rates[order]
    csum = np.cumsum(srt)
    threshold = 0.0
    for ell in range(srt.size):
        if csum[ell] > q:
            break
        if ell + 1 == srt.size or srt[ell + 1] > srt[ell]:
            threshold = srt[ell]
    return np.flatnonzero(rates > threshold)


def select_mds(observed: Dataset, q: float = 0.1, reps: int = 30, tau0: float = 0.25,
               m: float | None = None, v_method: str = "nodewise", seed=0, synthetic=None,
               fit_opts: NewtonOptions = NewtonOptions()) -> SelectionResult:
    if reps < 1:
        raise ValueError("reps must be positive")
    base = seed if isinstance(seed, (tuple, list)) else (int(seed),)
    runs = [select_ds(observed, q, tau0, m, v_method, substream(base, 100 + r), synthetic, fit_opts)
            for r in range(reps)]
    rates = inclusion_rates([r.selected for r in runs], observed.p)
    return SelectionResult(mds_from_rates(rates, q), None, math.nan, q, "MDS", rates)


def adjusted_pvalues(fit: MapFit, p: int, sigma_star_hat: float, v_hat) -> np.ndarray:
    """Two-sided p-values 2 Phi(-|v_j sqrt(p) beta_j / sigma*|)."""
    if not sigma_star_hat > 0:
        raise ValueError("sigma* estimate must be positive")
    stat = np.asarray(v_hat) * math.sqrt(p) * fit.beta_hat / sigma_star_hat
    return 2.0 * ndtr(-np.abs(stat))


def step_up(pvalues, q: float, dependence_correction: bool = False) -> np.ndarray:
    """Benjamini-Hochberg step-up; Benjamini-Yekutieli when the correction is on."""
    pv = np.asarray(pvalues, dtype=float)
    k = pv.size
    level = q / (np.sum(1.0 / np.arange(1, k + 1)) if dependence_correction else 1.0)
    order = np.argsort(pv, kind="stable")
    passed = pv[order] <= level * np.arange(1, k + 1) / k
    if not passed.any():
        return np.array([], dtype=int)
    last = int(np.flatnonzero(passed)[-1])
    return np.sort(order[: last + 1])


EXTENDED_KAPPA_HI = 16.0
EXTENDED_KAPPA_POINTS = 25


def estimate_sigma_star(observed: Dataset, fit: MapFit, synthetic: Dataset, tau0: float, m: float,
                        clip: bool = True) -> tuple[float, float, float]:
    """(kappa_hat, alpha*_hat, sigma*_hat) from the leave-one-out norm estimate."""
    delta = observed.n / observed.p
    eta = estimate_eta_general(observed, fit, tau0 * observed.n, synthetic)
    curve = build_gdelta(delta, tau0, m)
    if eta > curve.eta[-1]:
        # dense signals outrun the default dictionary; a clipped kappa overstates sigma*.
        # Solves out here are slow, so read alpha* and sigma* off the extension grid.
        curve = build_gdelta(delta, tau0, m, kappa_range=(curve.kappa_grid[-1], EXTENDED_KAPPA_HI),
                             n_points=EXTENDED_KAPPA_POINTS)
        kappa = curve.invert(eta, clip=clip)
        return (kappa, float(np.interp(kappa, curve.kappa_grid, curve.alpha)),
                float(np.interp(kappa, curve.kappa_grid, curve.sigma)))
    kappa = curve.invert(eta, clip=clip)
    sol = solve_3eq(ScalingParams(delta, tau0, m, kappa))
    return kappa, sol.alpha1, sol.sigma


def select_adjusted(observed: Dataset, q: float = 0.1, tau0: float = 0.25, m: float | None = None,
                    v_method: str = "nodewise", seed=0, synthetic=None, yekutieli: bool = False,
                    fit_opts: NewtonOptions = NewtonOptions()) -> SelectionResult:
    """ABH (default) or ABY selection from a full-data MAP fit."""
    n, p = observed.n, observed.p
    if m is None:
        m = 20.0 * p / n
    build = synthetic or gaussian_synthetic()
    syn = build(observed, int(round(m * n)), substream(seed, 7))
    fit = fit_map(observed, syn, tau0 * n, opts=fit_opts)
    _, _, sigma = estimate_sigma_star(observed, fit, syn, tau0, m)
    v = np.sqrt(conditional_variances(observed.X, v_method))
    pv = adjusted_pvalues(fit, p, sigma, v)
    sel = step_up(pv, q, dependence_correction=yekutieli)
    return SelectionResult(sel, None, math.nan, q, "ABY" if yekutieli else "ABH")
