"""Replicated simulation scenarios and their reports.

Every scenario draws one seed per replication from ``spawn_seeds(seed, reps)``
so results do not depend on the number of worker processes. A replication that
raises a numerical error is recorded as failed; more than 20% failures abort
the run.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import partial
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError

from . import __version__
from .asymptotics import ScalingParams, SolverError, limit_metrics, solution_record, solve
from .datagen import (AuxiliarySpec, CoefficientSpec, DesignSpec, gen_beta_s, gen_coefficients,
                      gen_logistic_data, gen_synthetic, rng_for, spawn_seeds, substream,
                      toeplitz_covariance)
from .fitting import FitError, fit_map, fit_map_population
from .inference import (CurveError, adjusted_cis, build_gdelta, default_m, estimate_kappa1,
                        estimate_xi_details, noninformative_fit)
from .selection import gaussian_synthetic, select_adjusted, select_ds, select_mds
from .tuning import DEFAULT_TAU0_GRID, _argmin_small, approx_loo, loocv_score, select_tau_ese

SCHEMA_VERSION = 1
MAX_FAILURE_RATE = 0.2
REFERENCE_KAPPAS = (0.5, 1.0, 1.5, 2.0)
NUMERICAL_ERRORS = (FitError, SolverError, CurveError, LinAlgError, ValueError, FloatingPointError)

_GRID = [float(t) for t in DEFAULT_TAU0_GRID]

# scenario -> parameter defaults; None means "derived" (e.g. m = 20 / delta)
SCENARIOS: dict[str, dict] = {
    "stability_vs_M": dict(n=1000, p=250, tau=500.0, kappa1=1.0, k_max=7, reps=1, seed=0),
    "mse_curve_noninformative": dict(p=250, delta=2.0, kappa1=0.5, m=None, tau0_grid=_GRID,
                                     reps=50, seed=0, design="standard_gaussian", df=None),
    "mse_curve_informative": dict(p=250, delta=2.0, kappa1=1.5, kappa2=1.0, xi=0.9, m=None,
                                  tau0_grid=_GRID, reps=50, seed=0, design="standard_gaussian", df=None),
    "minfty_conjecture": dict(p=250, delta=2.0, kappa1=0.5, tau0_grid=_GRID, reps=50, seed=0),
    "kappa1_table": dict(p=100, delta=2.0, kappa1=0.5, tau0=0.25, m=None, reps=50, seed=0, clip=True),
    "xi_table": dict(p=1600, delta0=4.0, delta_s=10.0, xi=0.9, tau0=0.25, reps=50, seed=0, clip=True),
    "ci_coverage": dict(p=100, delta=2.0, kappa1=0.5, tau0=0.25, m=None, level=0.95, reps=50, seed=0,
                        clip=True),
    "tau_selection": dict(p=400, delta=2.0, kappa1=1.0, m=None, tau0_grid=_GRID, reps=50, seed=0),
    "fdr_grid": dict(p=200, n=500, r_grid=[0.2], signal_grid=[1.0], n_signal=40, q=0.1, reps=100,
                     mds_reps=30, tau0=0.25, m=None, methods=["MDS", "DS", "ABH", "ABY"],
                     v_method="nodewise", synthetic_covariance="true", seed=0),
    "gdelta_curve": dict(delta=4.0, tau0=0.25, m=None, kappa_lo=0.05, kappa_hi=4.0, n_points=60),
    "solve_only": dict(cases=None),
}

CSV_COLUMNS = {
    "stability_vs_M": "rep, M, err (squared distance between the finite-M and population MAP fits)",
    "mse_curve_noninformative": "rep, tau0, mse, cosine; summary adds theory columns",
    "mse_curve_informative": "rep, tau0, mse, cosine; summary adds theory columns",
    "minfty_conjecture": "rep, tau0, mse, cosine of the population MAP fit; summary adds theory",
    "kappa1_table": "rep, eta_hat, kappa_hat, abs_err",
    "xi_table": "rep, xi_hat, naive, abs_err, naive_err, adjusted_better",
    "ci_coverage": "rep, kappa_hat, alpha_hat, sigma_hat, coverage",
    "tau_selection": "rep, method, tau0, mse",
    "fdr_grid": "rep, r, signal, method, fdp, power, n_selected",
    "gdelta_curve": "kappa, eta_sq, alpha, sigma",
    "solve_only": "system, delta, tau0, m, kappa1, kappa2, xi, alpha1, alpha2, sigma, gamma, residual_norm, mse, cosine",
}


class ConfigError(ValueError):
    pass


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    scenario: str
    parameters: dict
    output_dir: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        allowed = {"schema_version", "name", "scenario", "parameters", "output_dir"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION}")
        for key in ("name", "scenario"):
            if not isinstance(d.get(key), str) or not d[key]:
                raise ConfigError(f"{key!r} must be a non-empty string")
        return cls(d["name"], d["scenario"], resolve_parameters(d["scenario"], d.get("parameters", {})),
                   d.get("output_dir"))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"invalid JSON in {path}: {err}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)


def resolve_parameters(scenario: str, given: dict) -> dict:
    """Merge ``given`` into the scenario defaults, rejecting unknown keys."""
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}")
    if not isinstance(given, dict):
        raise ConfigError("parameters must be an object")
    defaults = SCENARIOS[scenario]
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown parameters for {scenario}: {sorted(unknown)}")
    params = {**defaults, **given}
    if "reps" in params and (not isinstance(params["reps"], int) or params["reps"] < 1):
        raise ConfigError("reps must be a positive integer")
    for key in ("p", "n"):
        if key in params and (not isinstance(params[key], int) or params[key] < 1):
            raise ConfigError(f"{key} must be a positive integer")
    for key in ("delta", "kappa1", "tau", "tau0"):
        if key in params and params[key] is not None and not (
                isinstance(params[key], (int, float)) and params[key] > 0):
            raise ConfigError(f"{key} must be a positive number")
    if "tau0_grid" in params:
        grid = params["tau0_grid"]
        if not grid or any(not isinstance(t, (int, float)) or t <= 0 for t in grid):
            raise ConfigError("tau0_grid must be a nonempty list of positive numbers")
    return params


@dataclass
class ExperimentReport:
    name: str
    scenario: str
    columns: list
    rows: list
    summary_columns: list
    summary: list
    seed: object
    wall_clock: float = 0.0
    version: str = __version__
    failures: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def rows_csv(self) -> str:
        return _csv(self.columns, self.rows)

    def summary_csv(self) -> str:
        return _csv(self.summary_columns, self.summary)

    def to_dict(self) -> dict:
        return {
            "name": self.name, "scenario": self.scenario, "seed": self.seed,
            "version": self.version, "wall_clock_seconds": self.wall_clock,
            "failures": self.failures, "meta": _jsonable(self.meta),
            "summary": [_jsonable(r) for r in self.summary],
            "rows": [_jsonable(r) for r in self.rows],
        }

    def write(self, out_dir, fmt: str = "csv") -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stamp = f"# generated {datetime.now(timezone.utc).isoformat(timespec='seconds')} by catmap {self.version}\n"
        written = []
        if fmt == "csv":
            for suffix, text in (("rows", self.rows_csv()), ("summary", self.summary_csv())):
                path = out / f"{self.name}_{suffix}.csv"
                path.write_text(stamp + text)
                written.append(path)
        elif fmt != "json":
            raise ValueError(f"unknown format {fmt!r}")
        path = out / f"{self.name}_report.json"
        path.write_text(json.dumps(self.to_dict(), indent=1))
        written.append(path)
        return written

    def table(self) -> str:
        """Fixed-width rendering of the summary."""
        cols = self.summary_columns
        body = [[_cell(r.get(c)) for c in cols] for r in self.summary]
        widths = [max([len(c)] + [len(b[i]) for b in body]) for i, c in enumerate(cols)]
        lines = ["  ".join(c.rjust(w) for c, w in zip(cols, widths))]
        lines += ["  ".join(v.rjust(w) for v, w in zip(b, widths)) for b in body]
        for k, v in self.meta.items():
            lines.append(f"{k}: {_cell(v)}")
        return "\n".join(lines)


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.4g}"
    return "" if v is None else str(v)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---------------------------------------------------------------- replication plumbing

def _guarded(worker, seed):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return worker(seed)
    except NUMERICAL_ERRORS as err:
        return {"failed": f"{type(err).__name__}: {err}"}


def run_replications(worker, seed, reps: int, threads: int = 1) -> tuple[list, list]:
    """Run ``worker(rep_seed) -> list of rows`` for every replication.

    Returns (rows, failures). Rows carry a ``rep`` column.
    """
    seeds = spawn_seeds(seed, reps)
    job = partial(_guarded, worker)
    if threads > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, seeds))
    else:
        results = [job(s) for s in seeds]
    rows, failures = [], []
    for i, res in enumerate(results):
        if isinstance(res, dict) and "failed" in res:
            failures.append({"rep": i, "error": res["failed"]})
            continue
        for r in res:
            rows.append({"rep": i, **r})
    if len(failures) > MAX_FAILURE_RATE * reps:
        raise ExperimentError(f"{len(failures)} of {reps} replications failed; first: {failures[0]['error']}")
    return rows, failures


def _stats(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def _m(params, delta):
    return default_m(delta) if params.get("m") is None else float(params["m"])


def _observed(p, delta, kappa1, seed, design="standard_gaussian", df=None, coef_law="scaled_t3"):
    n = int(round(delta * p))
    beta0 = gen_coefficients(CoefficientSpec(p, kappa1, coef_law), substream(seed, 0))
    spec = DesignSpec(n, p, design, df=df)
    return beta0, gen_logistic_data(spec, beta0, substream(seed, 1)), spec


def _cosine(a, b) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return float(a @ b / (na * nb)) if na > 0 and nb > 0 else 0.0


def _theory(params_list):
    out = []
    for params in params_list:
        try:
            out.append(limit_metrics(solve(params), params))
        except (SolverError, ValueError) as err:
            warnings.warn(f"no theory value at {params}: {err}")
            out.append({"mse": math.nan, "cosine": math.nan})
    return out


# ---------------------------------------------------------------- scenarios

def _rep_stability(params, seed):
    n, p, tau = params["n"], params["p"], float(params["tau"])
    beta0 = gen_coefficients(CoefficientSpec(p, params["kappa1"], "gaussian"), substream(seed, 0))
    obs = gen_logistic_data(DesignSpec(n, p), beta0, substream(seed, 1))
    limit = fit_map_population(obs, tau).beta_hat
    rows = []
    for k in range(params["k_max"]):
        M = p * 2**k
        syn = gen_synthetic(AuxiliarySpec(M), DesignSpec(n, p), seed=substream(seed, 2, k))
        b = fit_map(obs, syn, tau).beta_hat
        rows.append({"M": M, "err": float(np.sum((b - limit) ** 2))})
    return rows


def _slope(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = len(x) - 2
    se = math.sqrt(resid @ resid / dof / np.sum((x - x.mean()) ** 2)) if dof > 0 else math.nan
    return float(coef[1]), se


def _run_stability(params, threads):
    rows, failures = run_replications(partial(_rep_stability, params), params["seed"], params["reps"], threads)
    Ms = sorted({r["M"] for r in rows})
    summary = []
    for M in Ms:
        mean, sd = _stats([r["err"] for r in rows if r["M"] == M])
        summary.append({"M": M, "err_mean": mean, "err_sd": sd})
    slope, se = _slope(np.log([r["M"] for r in rows]), np.log([r["err"] for r in rows]))
    return (["rep", "M", "err"], rows, ["M", "err_mean", "err_sd"], summary, failures,
            {"slope": slope, "slope_se": se})


def _rep_mse_curve(params, informative, seed):
    p, delta = params["p"], float(params["delta"])
    beta0, obs, spec = _observed(p, delta, params["kappa1"], seed, params["design"], params["df"])
    M = int(round(_m(params, delta) * obs.n))
    if informative:
        beta_s = gen_beta_s(beta0, params["kappa2"], params["xi"], substream(seed, 3))
        syn = gen_synthetic(AuxiliarySpec(M, "informative", params["kappa2"], params["xi"]), spec,
                            beta_s, seed=substream(seed, 2))
    else:
        syn = gen_synthetic(AuxiliarySpec(M), spec, seed=substream(seed, 2))
    rows = []
    for t0 in params["tau0_grid"]:
        b = fit_map(obs, syn, t0 * obs.n).beta_hat
        rows.append({"tau0": float(t0), "mse": float(np.sum((b - beta0) ** 2)), "cosine": _cosine(b, beta0)})
    return rows


def _rep_minfty(params, seed):
    beta0, obs, _ = _observed(params["p"], float(params["delta"]), params["kappa1"], seed)
    rows = []
    for t0 in params["tau0_grid"]:
        b = fit_map_population(obs, t0 * obs.n).beta_hat
        rows.append({"tau0": float(t0), "mse": float(np.sum((b - beta0) ** 2)), "cosine": _cosine(b, beta0)})
    return rows


def _curve_summary(rows, grid, theory):
    summary = []
    for t0, th in zip(grid, theory):
        sel = [r for r in rows if r["tau0"] == float(t0)]
        mse, mse_sd = _stats([r["mse"] for r in sel])
        cos, cos_sd = _stats([r["cosine"] for r in sel])
        summary.append({
            "tau0": float(t0), "mse_mean": mse, "mse_sd": mse_sd, "mse_theory": th["mse"],
            "mse_rel_err": abs(mse - th["mse"]) / th["mse"],
            "cosine_mean": cos, "cosine_sd": cos_sd, "cosine_theory": th["cosine"],
            "cosine_rel_err": abs(cos - th["cosine"]) / abs(th["cosine"]),
        })
    return summary


CURVE_SUMMARY = ["tau0", "mse_mean", "mse_sd", "mse_theory", "mse_rel_err",
                 "cosine_mean", "cosine_sd", "cosine_theory", "cosine_rel_err"]


def _run_mse_curve(params, threads, informative):
    delta, grid = float(params["delta"]), params["tau0_grid"]
    m = _m(params, delta)
    if informative:
        plist = [ScalingParams(delta, t0, m, params["kappa1"], params["kappa2"], params["xi"]) for t0 in grid]
    else:
        plist = [ScalingParams(delta, t0, m, params["kappa1"]) for t0 in grid]
    theory = _theory(plist)
    rows, failures = run_replications(partial(_rep_mse_curve, params, informative), params["seed"],
                                      params["reps"], threads)
    summary = _curve_summary(rows, grid, theory)
    best = min(summary, key=lambda r: r["mse_mean"])
    return (["rep", "tau0", "mse", "cosine"], rows, CURVE_SUMMARY, summary, failures,
            {"min_mse": best["mse_mean"], "argmin_tau0": best["tau0"],
             "max_mse_rel_err": max(r["mse_rel_err"] for r in summary),
             "max_cosine_rel_err": max(r["cosine_rel_err"] for r in summary)})


def _run_minfty(params, threads):
    delta, grid = float(params["delta"]), params["tau0_grid"]
    theory = _theory([ScalingParams(delta, t0, math.inf, params["kappa1"]) for t0 in grid])
    rows, failures = run_replications(partial(_rep_minfty, params), params["seed"], params["reps"], threads)
    summary = _curve_summary(rows, grid, theory)
    return (["rep", "tau0", "mse", "cosine"], rows, CURVE_SUMMARY, summary, failures,
            {"max_mse_rel_err": max(r["mse_rel_err"] for r in summary),
             "max_cosine_rel_err": max(r["cosine_rel_err"] for r in summary)})


def _rep_kappa1(params, curve, seed):
    delta = float(params["delta"])
    _, obs, _ = _observed(params["p"], delta, params["kappa1"], seed)
    m = _m(params, delta)
    fit = noninformative_fit(obs, params["tau0"], m, substream(seed, 2))
    eta = float(np.linalg.norm(fit.beta_hat))
    kappa = curve.invert(eta, clip=params["clip"])
    return [{"eta_hat": eta, "kappa_hat": kappa, "abs_err": abs(kappa - params["kappa1"]),
             "clipped": not curve.eta[0] <= eta <= curve.eta[-1]}]


def _run_kappa1(params, threads):
    delta = float(params["delta"])
    curve = build_gdelta(delta, params["tau0"], _m(params, delta))
    rows, failures = run_replications(partial(_rep_kappa1, params, curve), params["seed"], params["reps"], threads)
    mean, sd = _stats([r["abs_err"] for r in rows])
    summary = [{"p": params["p"], "delta": delta, "kappa1": params["kappa1"], "abs_err_mean": mean,
                "abs_err_sd": sd, "clipped": sum(r["clipped"] for r in rows)}]
    return (["rep", "eta_hat", "kappa_hat", "abs_err", "clipped"], rows,
            ["p", "delta", "kappa1", "abs_err_mean", "abs_err_sd", "clipped"], summary, failures, {})


def _rep_ci(params, curve, seed):
    delta = float(params["delta"])
    beta0, obs, _ = _observed(params["p"], delta, params["kappa1"], seed)
    m = _m(params, delta)
    fit = noninformative_fit(obs, params["tau0"], m, substream(seed, 2))
    kappa = curve.invert(float(np.linalg.norm(fit.beta_hat)), clip=params["clip"])
    sol = solve(ScalingParams(delta, params["tau0"], m, kappa))
    ci = adjusted_cis(fit, obs.p, sol.alpha1, sol.sigma, params["level"])
    return [{"kappa_hat": kappa, "alpha_hat": sol.alpha1, "sigma_hat": sol.sigma,
             "coverage": float(np.mean(ci.covers(beta0)))}]


def _run_ci(params, threads):
    delta = float(params["delta"])
    curve = build_gdelta(delta, params["tau0"], _m(params, delta))
    rows, failures = run_replications(partial(_rep_ci, params, curve), params["seed"], params["reps"], threads)
    mean, sd = _stats([r["coverage"] for r in rows])
    summary = [{"p": params["p"], "delta": delta, "kappa1": params["kappa1"],
                "coverage_mean": mean, "coverage_sd": sd}]
    return (["rep", "kappa_hat", "alpha_hat", "sigma_hat", "coverage"], rows,
            ["p", "delta", "kappa1", "coverage_mean", "coverage_sd"], summary, failures, {})


def _rep_xi(params, curves, seed):
    p = params["p"]
    beta0 = gen_coefficients(CoefficientSpec(p, 1.0), substream(seed, 0))
    beta_s = gen_beta_s(beta0, 1.0, params["xi"], substream(seed, 3), kappa1=1.0)
    target = gen_logistic_data(DesignSpec(int(round(params["delta0"] * p)), p), beta0, substream(seed, 1))
    source = gen_logistic_data(DesignSpec(int(round(params["delta_s"] * p)), p), beta_s, substream(seed, 4))
    est = estimate_xi_details(target, source, params["tau0"], 20 * p, substream(seed, 2),
                              curves=curves, clip=params["clip"])
    err, naive_err = abs(est.xi - params["xi"]), abs(est.naive - params["xi"])
    return [{"xi_hat": est.xi, "naive": est.naive, "abs_err": err, "naive_err": naive_err,
             "adjusted_better": err < naive_err}]


def _run_xi(params, threads):
    p, M = params["p"], 20 * params["p"]
    curves = [build_gdelta(float(d), params["tau0"], M / (d * p)) for d in (params["delta0"], params["delta_s"])]
    rows, failures = run_replications(partial(_rep_xi, params, curves), params["seed"], params["reps"], threads)
    mean, sd = _stats([r["abs_err"] for r in rows])
    nmean, nsd = _stats([r["naive_err"] for r in rows])
    summary = [{"p": p, "delta0": params["delta0"], "delta_s": params["delta_s"], "abs_err_mean": mean,
                "abs_err_sd": sd, "naive_err_mean": nmean, "naive_err_sd": nsd,
                "adjusted_better": sum(r["adjusted_better"] for r in rows)}]
    return (["rep", "xi_hat", "naive", "abs_err", "naive_err", "adjusted_better"], rows,
            list(summary[0]), summary, failures, {})


def _rep_tau(params, curve, mtse_index, seed):
    delta, grid = float(params["delta"]), params["tau0_grid"]
    beta0, obs, spec = _observed(params["p"], delta, params["kappa1"], seed)
    m = _m(params, delta)
    syn = gen_synthetic(AuxiliarySpec(int(round(m * obs.n))), spec, seed=substream(seed, 2))
    mses, scores = [], []
    for t0 in grid:
        tau = t0 * obs.n
        fit = fit_map(obs, syn, tau)
        mses.append(float(np.sum((fit.beta_hat - beta0) ** 2)))
        scores.append(loocv_score(approx_loo(fit, obs, syn, tau), obs.y))
    cv = _argmin_small(scores)
    kappa = estimate_kappa1(obs, 0.25, m, curve, seed=substream(seed, 5), clip=True)
    ese = select_tau_ese(ScalingParams(delta, 0.25, m, kappa), kappa, grid).chosen
    return [{"method": name, "tau0": float(grid[i]), "mse": mses[i]}
            for name, i in (("MLCV", cv), ("MESE", ese), ("MTSE", mtse_index))]


def _run_tau(params, threads):
    delta, grid = float(params["delta"]), params["tau0_grid"]
    m = _m(params, delta)
    curve = build_gdelta(delta, 0.25, m)
    mtse = select_tau_ese(ScalingParams(delta, 0.25, m, params["kappa1"]), params["kappa1"], grid).chosen
    rows, failures = run_replications(partial(_rep_tau, params, curve, mtse), params["seed"],
                                      params["reps"], threads)
    summary = []
    for method in ("MLCV", "MESE", "MTSE"):
        mean, sd = _stats([r["mse"] for r in rows if r["method"] == method])
        summary.append({"method": method, "mse_mean": mean, "mse_sd": sd})
    return (["rep", "method", "tau0", "mse"], rows, ["method", "mse_mean", "mse_sd"], summary, failures, {})


def _rep_fdr(params, seed):
    p, n, k = params["p"], params["n"], params["n_signal"]
    rows = []
    for ci, r in enumerate(params["r_grid"]):
        cov = toeplitz_covariance(p, float(r))
        builder = gaussian_synthetic(cov if params["synthetic_covariance"] == "true" else None)
        for si, signal in enumerate(params["signal_grid"]):
            cfg = substream(seed, ci, si)
            rng = rng_for(substream(cfg, 0))
            support = rng.choice(p, k, replace=False)
            beta = np.zeros(p)
            beta[support] = float(signal) * rng.choice([-1.0, 1.0], k)
            obs = gen_logistic_data(DesignSpec(n, p, "gaussian_with_covariance", cov), beta, substream(cfg, 1))
            truth = set(support.tolist())
            common = dict(q=params["q"], tau0=params["tau0"], m=params["m"], v_method=params["v_method"],
                          synthetic=builder)
            for method in params["methods"]:
                if method == "MDS":
                    res = select_mds(obs, reps=params["mds_reps"], seed=substream(cfg, 2), **common)
                elif method == "DS":
                    res = select_ds(obs, seed=substream(cfg, 2, 100), **common)
                elif method in ("ABH", "ABY"):
                    res = select_adjusted(obs, seed=substream(cfg, 3), yekutieli=method == "ABY", **common)
                else:
                    raise ValueError(f"unknown selection method {method!r}")
                sel = set(int(j) for j in res.selected)
                rows.append({"r": float(r), "signal": float(signal), "method": method,
                             "fdp": len(sel - truth) / max(len(sel), 1),
                             "power": len(sel & truth) / k, "n_selected": len(sel)})
    return rows


def _run_fdr(params, threads):
    rows, failures = run_replications(partial(_rep_fdr, params), params["seed"], params["reps"], threads)
    summary = []
    for r in params["r_grid"]:
        for s in params["signal_grid"]:
            for method in params["methods"]:
                sel = [x for x in rows if x["r"] == float(r) and x["signal"] == float(s) and x["method"] == method]
                fdr, fdr_sd = _stats([x["fdp"] for x in sel])
                power, power_sd = _stats([x["power"] for x in sel])
                summary.append({"r": float(r), "signal": float(s), "method": method, "fdr": fdr,
                                "fdr_se": fdr_sd / math.sqrt(max(len(sel), 1)), "power": power})
    return (["rep", "r", "signal", "method", "fdp", "power", "n_selected"], rows,
            ["r", "signal", "method", "fdr", "fdr_se", "power"], summary, failures, {})


def _run_gdelta(params, threads):
    delta = float(params["delta"])
    curve = build_gdelta(delta, params["tau0"], _m(params, delta),
                         (params["kappa_lo"], params["kappa_hi"]), params["n_points"])
    rows = [{"kappa": float(k), "eta_sq": float(e), "alpha": float(a), "sigma": float(s)}
            for k, e, a, s in zip(curve.kappa_grid, curve.eta_sq, curve.alpha, curve.sigma)]
    cols = ["kappa", "eta_sq", "alpha", "sigma"]
    return cols, rows, cols, rows, [], {"delta": delta, "tau0": params["tau0"], "m": curve.m}


def reference_grid_cases() -> list[dict]:
    return [dict(delta=d, tau0=0.25, m=20.0 / d, kappa1=k) for d in (2.0, 4.0) for k in REFERENCE_KAPPAS]


def _run_solve(params, threads):
    cases = params["cases"] or reference_grid_cases()
    rows, failures = [], []
    for i, c in enumerate(cases):
        c = dict(c)
        m = c.pop("m", None)
        try:
            c["m"] = default_m(c["delta"]) if m is None else float(m)  # float("inf") parses "inf"
            sp = ScalingParams(**c)
            rows.append(solution_record(solve(sp), sp))
        except (SolverError, ValueError, TypeError) as err:
            failures.append({"rep": i, "error": f"{type(err).__name__}: {err}"})
    cols = ["system", "delta", "tau0", "m", "kappa1", "kappa2", "xi", "alpha1", "alpha2",
            "sigma", "gamma", "residual_norm", "mse", "cosine"]
    if failures and len(failures) > MAX_FAILURE_RATE * len(cases):
        raise ExperimentError(f"{len(failures)} of {len(cases)} solves failed; first: {failures[0]['error']}")
    return cols, rows, cols, rows, failures, {}


_RUNNERS = {
    "stability_vs_M": _run_stability,
    "mse_curve_noninformative": partial(_run_mse_curve, informative=False),
    "mse_curve_informative": partial(_run_mse_curve, informative=True),
    "minfty_conjecture": _run_minfty,
    "kappa1_table": _run_kappa1,
    "xi_table": _run_xi,
    "ci_coverage": _run_ci,
    "tau_selection": _run_tau,
    "fdr_grid": _run_fdr,
    "gdelta_curve": _run_gdelta,
    "solve_only": _run_solve,
}


def run(config: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    params = resolve_parameters(config.scenario, config.parameters)
    start = time.perf_counter()
    cols, rows, scols, summary, failures, meta = _RUNNERS[config.scenario](params, threads)
    return ExperimentReport(config.name, config.scenario, cols, rows, scols, summary,
                            params.get("seed"), time.perf_counter() - start, __version__, failures, meta)


def run_scenario(scenario: str, threads: int = 1, name: str | None = None, **parameters) -> ExperimentReport:
    return run(ExperimentConfig(name or scenario, scenario, resolve_parameters(scenario, parameters)), threads)
