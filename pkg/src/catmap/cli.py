"""Command-line interface.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure (including
a failed acceptance criterion under ``verify``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError

from . import __version__
from .asymptotics import RegimeError, ScalingParams, SolverError, solution_record, solve_3eq, solve_4eq, solve_minfty
from .datagen import AuxiliarySpec, DesignSpec, gen_synthetic, read_dataset_csv
from .experiments import CSV_COLUMNS, SCENARIOS, ConfigError, ExperimentConfig, ExperimentError, run
from .fitting import FitError, fit_map, fit_map_population
from .inference import (DEFAULT_TAU0, CurveError, adjusted_cis, build_gdelta, default_m, estimate_kappa1,
                        OutOfDictionaryError, estimate_xi_details, noninformative_fit)
from .selection import select_adjusted, select_ds, select_mds
from .tuning import DEFAULT_TAU0_GRID, select_tau_ese, select_tau_mlcv

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2
NUMERICAL = (FitError, SolverError, CurveError, OutOfDictionaryError, RegimeError, ExperimentError, LinAlgError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _global_options(parser, suppress: bool):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=default(None), help="master random seed (default 0)")
    parser.add_argument("--threads", type=int, default=default(1), help="worker processes for replications")
    parser.add_argument("--out", default=default(None), help="output file (directory for simulate)")
    parser.add_argument("--format", choices=("csv", "json"), default=default("csv"), help="output format")


def _scenario_help() -> str:
    lines = ["scenarios and their row CSV columns:"]
    lines += [f"  {name}: {cols}" for name, cols in CSV_COLUMNS.items()]
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="catmap", description="MAP estimation under catalytic priors.",
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"catmap {__version__}")
    _global_options(parser, suppress=False)
    common = _Parser(add_help=False)
    _global_options(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", parents=[common], help="fit the MAP estimator to CSV data")
    p.add_argument("--data", required=True, help="observed CSV with header y,x1,...,xp")
    p.add_argument("--synthetic", help="synthetic CSV (same header)")
    p.add_argument("--tau", type=float, required=True, help="total prior weight")
    p.add_argument("--population", action="store_true",
                   help="use the Gaussian-expectation penalty instead of synthetic rows")

    p = sub.add_parser("solve", parents=[common], help="solve a scalar system")
    p.add_argument("--system", choices=("3eq", "4eq", "minfty"), default="3eq")
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--kappa1", type=float, default=1.0)
    p.add_argument("--kappa2", type=float, default=0.0)
    p.add_argument("--xi", type=float, default=0.0)
    p.add_argument("--tau0", type=float, default=DEFAULT_TAU0)
    p.add_argument("--m", type=float, help="synthetic-to-observed ratio (default 20/delta; ignored for minfty)")

    p = sub.add_parser("gdelta", parents=[common], help="tabulate the signal-to-norm curve")
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--tau0", type=float, default=DEFAULT_TAU0)
    p.add_argument("--m", type=float)
    p.add_argument("--kappa-lo", type=float, default=0.05)
    p.add_argument("--kappa-hi", type=float, default=4.0)
    p.add_argument("--points", type=int, default=60)

    p = sub.add_parser("estimate-kappa", parents=[common], help="estimate the signal strength")
    p.add_argument("--data", required=True)
    p.add_argument("--tau0", type=float, default=DEFAULT_TAU0)
    p.add_argument("--m", type=float)
    p.add_argument("--clip", action="store_true", help="clamp out-of-range norms to the curve ends")

    p = sub.add_parser("estimate-xi", parents=[common], help="estimate target/source similarity")
    p.add_argument("--target", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--tau0", type=float, default=DEFAULT_TAU0)
    p.add_argument("--M", type=int, help="synthetic sample size per dataset (default 20p)")
    p.add_argument("--kappas", type=float, nargs=2, metavar=("K_TARGET", "K_SOURCE"),
                   help="known signal strengths instead of estimates")

    p = sub.add_parser("ci", parents=[common], help="adjusted confidence intervals")
    p.add_argument("--data", required=True)
    p.add_argument("--tau0", type=float, default=DEFAULT_TAU0)
    p.add_argument("--m", type=float)
    p.add_argument("--level", type=float, default=0.95)

    p = sub.add_parser("tune-tau", parents=[common], help="choose tau by approximate LOO-CV or limit MSE")
    p.add_argument("--data", required=True)
    p.add_argument("--synthetic", help="synthetic CSV (default: fresh Gaussian rows, M = 20p)")
    p.add_argument("--method", choices=("mlcv", "mese"), default="mlcv")
    p.add_argument("--tau0-grid", type=float, nargs="+", help="tau0 values (default 12 log-spaced in [0.02, 2])")

    p = sub.add_parser("select", parents=[common], help="FDR-controlled variable selection")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=("DS", "MDS", "ABH", "ABY"), default="MDS")
    p.add_argument("--q", type=float, default=0.1)
    p.add_argument("--reps", type=int, default=30, help="splits for MDS")
    p.add_argument("--tau0", type=float, default=DEFAULT_TAU0)
    p.add_argument("--v-method", choices=("nodewise", "precision_diag"), default="nodewise")

    p = sub.add_parser("simulate", parents=[common], help="run an experiment config",
                       epilog=_scenario_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("config", help="JSON config with schema_version, name, scenario, parameters")

    p = sub.add_parser("verify", parents=[common], help="run the acceptance suite")
    p.add_argument("--criteria", type=int, nargs="+", help="subset of criterion numbers")
    return parser


# ---------------------------------------------------------------- output helpers

def _emit(args, text: str):
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _table(args, columns, rows) -> str:
    if args.format == "json":
        return json.dumps([dict(zip(columns, r)) for r in rows], indent=1)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _m_or_default(m, delta):
    return default_m(delta) if m is None else m


# ---------------------------------------------------------------- commands

def cmd_fit(args):
    obs = read_dataset_csv(args.data)
    if args.population:
        fit = fit_map_population(obs, args.tau)
    else:
        syn = read_dataset_csv(args.synthetic, role="synthetic") if args.synthetic else None
        fit = fit_map(obs, syn, args.tau)
    _emit(args, fit.to_json())


def cmd_solve(args):
    if args.system == "minfty":
        params = ScalingParams(args.delta, args.tau0, math.inf, args.kappa1, args.kappa2, args.xi)
        sol = solve_minfty(params)
    else:
        params = ScalingParams(args.delta, args.tau0, _m_or_default(args.m, args.delta),
                               args.kappa1, args.kappa2, args.xi)
        sol = solve_3eq(params) if args.system == "3eq" else solve_4eq(params)
    rec = solution_record(sol, params)
    if args.out or args.format == "json":
        _emit(args, json.dumps(rec) if args.format == "json" else _table(args, list(rec), [list(rec.values())]))
    else:
        extra = f" alpha2={sol.alpha2:.6f}" if args.system != "3eq" and args.kappa2 > 0 else ""
        print(f"alpha={sol.alpha1:.6f}{extra} sigma={sol.sigma:.6f} gamma={sol.gamma:.6f} "
              f"mse={rec['mse']:.6f} residual={sol.residual_norm:.2e}")


def cmd_gdelta(args):
    curve = build_gdelta(args.delta, args.tau0, args.m, (args.kappa_lo, args.kappa_hi), args.points)
    rows = list(zip(curve.kappa_grid, curve.eta_sq, curve.alpha, curve.sigma))
    _emit(args, _table(args, ["kappa", "eta_sq", "alpha", "sigma"], rows))


def cmd_estimate_kappa(args):
    obs = read_dataset_csv(args.data)
    delta = obs.n / obs.p
    m = _m_or_default(args.m, delta)
    curve = build_gdelta(delta, args.tau0, m)
    kappa = estimate_kappa1(obs, args.tau0, m, curve, seed=args.seed, clip=args.clip)
    _emit(args, json.dumps({"kappa1_hat": kappa, "delta": delta, "tau0": args.tau0, "m": m}))


def cmd_estimate_xi(args):
    target, source = read_dataset_csv(args.target), read_dataset_csv(args.source)
    est = estimate_xi_details(target, source, args.tau0, args.M, args.seed, args.kappas)
    _emit(args, json.dumps({"xi_hat": est.xi, "naive_cosine": est.naive,
                            "kappa_target": est.kappa_target, "kappa_source": est.kappa_source}))


def cmd_ci(args):
    obs = read_dataset_csv(args.data)
    delta = obs.n / obs.p
    m = _m_or_default(args.m, delta)
    fit = noninformative_fit(obs, args.tau0, m, args.seed)
    curve = build_gdelta(delta, args.tau0, m)
    kappa = curve.invert(float(np.linalg.norm(fit.beta_hat)))
    sol = solve_3eq(ScalingParams(delta, args.tau0, m, kappa))
    ci = adjusted_cis(fit, obs.p, sol.alpha1, sol.sigma, args.level)
    rows = [(j + 1, float(b), float(lo), float(hi)) for j, (b, lo, hi) in enumerate(zip(fit.beta_hat, ci.lower, ci.upper))]
    _emit(args, _table(args, ["coordinate", "beta_hat", "lower", "upper"], rows))


def cmd_tune_tau(args):
    obs = read_dataset_csv(args.data)
    grid0 = np.asarray(args.tau0_grid if args.tau0_grid else DEFAULT_TAU0_GRID, dtype=float)
    delta = obs.n / obs.p
    if args.method == "mlcv":
        if args.synthetic:
            syn = read_dataset_csv(args.synthetic, role="synthetic")
        else:
            syn = gen_synthetic(AuxiliarySpec(20 * obs.p), DesignSpec(obs.n, obs.p), seed=args.seed)
        res = select_tau_mlcv(obs, syn, grid0 * obs.n)
    else:
        m = default_m(delta)
        kappa = estimate_kappa1(obs, DEFAULT_TAU0, m, build_gdelta(delta, DEFAULT_TAU0, m), seed=args.seed, clip=True)
        res = select_tau_ese(ScalingParams(delta, DEFAULT_TAU0, m, kappa), kappa, grid0)
        res = type(res)(grid0 * obs.n, res.scores, res.chosen, obs.n)
    if args.format == "json":
        _emit(args, json.dumps({"tau": res.values.tolist(), "score": res.scores.tolist(), "chosen": res.chosen}))
    else:
        buf = io.StringIO()
        res.write_csv(buf)
        _emit(args, buf.getvalue())


def cmd_select(args):
    obs = read_dataset_csv(args.data)
    common = dict(q=args.q, tau0=args.tau0, v_method=args.v_method, seed=args.seed)
    if args.method == "DS":
        res = select_ds(obs, **common)
    elif args.method == "MDS":
        res = select_mds(obs, reps=args.reps, **common)
    else:
        res = select_adjusted(obs, yekutieli=args.method == "ABY", **common)
    _emit(args, res.to_json())


def cmd_simulate(args):
    config = ExperimentConfig.load(args.config)
    params = dict(config.parameters)
    if "seed" in SCENARIOS[config.scenario] and args.seed_given:
        params["seed"] = args.seed
    config = ExperimentConfig(config.name, config.scenario, params, config.output_dir)
    report = run(config, threads=args.threads)
    out_dir = args.out or config.output_dir or "."
    paths = report.write(out_dir, args.format)
    print(report.table())
    for f in report.failures:
        print(f"failed replication {f['rep']}: {f['error']}", file=sys.stderr)
    print("wrote " + ", ".join(str(p) for p in paths))


def cmd_verify(args):
    from .acceptance import run_criteria

    results = run_criteria(args.criteria, threads=args.threads)
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERICAL


COMMANDS = {
    "fit": cmd_fit, "solve": cmd_solve, "gdelta": cmd_gdelta, "estimate-kappa": cmd_estimate_kappa,
    "estimate-xi": cmd_estimate_xi, "ci": cmd_ci, "tune-tau": cmd_tune_tau, "select": cmd_select,
    "simulate": cmd_simulate, "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as err:  # --help / --version
        return EXIT_OK if not err.code else EXIT_USAGE
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    if args.threads < 1:
        print("catmap: error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        code = COMMANDS[args.command](args)
    except NUMERICAL as err:
        print(f"catmap: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError, OSError) as err:
        print(f"catmap: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
