"""Command line interface.

Subcommands
-----------
analyze   Estimate the treatment effect from a trial CSV.
frt       Randomization test p-value from a trial CSV.
simulate  Config-driven Monte Carlo study (estimation, ReM overlay, or FRT).
refdist   Balance probability and quantiles of the mixture reference laws.

All results are printed as JSON with a ``schema_version`` field.  Every
command that consumes randomness requires an explicit ``--seed``.

Exit codes: 0 success, 2 bad input data, 3 statistical failure
(degenerate fit, exhausted sampler), 4 bad configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import rng as rngmod
from .design import Assignment, balance_test
from .errors import ConfigError, InputError, PTBalanceError, StatisticalError
from .estimators import METHODS, ObservedTrial, estimate
from .frt import STATISTICS, FRTSpec, run
from .refdist import mixture_quantile, pi_a, pt_mixture, pt_specific_ci
from .simharness import (
    SimulationConfig,
    chi2_quantile,
    frt_type1_study,
    rem_vs_cr_overlay,
    run_simulation,
    write_plot_data,
)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_STATISTICAL = 3
EXIT_CONFIG = 4


def read_trial_csv(path: str) -> ObservedTrial:
    """Load a trial from CSV with header z,y,x1,...,xJ.

    Diagnostics name the offending row (1-based, excluding the header) and
    column so malformed files are easy to fix.
    """
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise InputError(f"{path}: file is empty") from None
            rows = list(reader)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None

    header = [h.strip() for h in header]
    j = len(header) - 2
    expected = ["z", "y"] + [f"x{k}" for k in range(1, j + 1)]
    if j < 1 or header != expected:
        raise InputError(
            f"{path}: header must be z,y,x1,...,xJ with J >= 1; got {header}")
    if not rows:
        raise InputError(f"{path}: no data rows")

    data = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise InputError(
                f"{path}: row {i} has {len(row)} fields, expected {len(header)}")
        for k, cell in enumerate(row):
            try:
                data[i - 1, k] = float(cell)
            except ValueError:
                raise InputError(
                    f"{path}: row {i}, column {header[k]!r}: "
                    f"not a number: {cell!r}") from None
    if not np.isfinite(data).all():
        i, k = map(int, np.argwhere(~np.isfinite(data))[0])
        raise InputError(
            f"{path}: row {i + 1}, column {header[k]!r}: non-finite value")
    z = data[:, 0]
    if not np.isin(z, (0.0, 1.0)).all():
        bad = int(np.flatnonzero(~np.isin(z, (0.0, 1.0)))[0]) + 1
        raise InputError(f"{path}: row {bad}, column 'z': must be 0 or 1")
    if len(rows) < j + 3:
        raise InputError(
            f"{path}: need at least J + 3 = {j + 3} rows, got {len(rows)}")
    try:
        assignment = Assignment.from_vector(z.astype(np.int8))
    except PTBalanceError as exc:
        raise InputError(f"{path}: {exc}") from None
    return ObservedTrial(z=assignment, y=data[:, 1], x=data[:, 2:])


def _resolve_a(args, j: int) -> float:
    if args.a is not None and args.a_quantile is not None:
        raise ConfigError("give --a or --a-quantile, not both")
    if args.a_quantile is not None:
        return chi2_quantile(args.a_quantile, j)
    return float("inf") if args.a is None else args.a


def _emit(payload: dict):
    payload = {"schema_version": SCHEMA_VERSION, **payload}
    json.dump(payload, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _add_threshold_args(p):
    p.add_argument("--a", type=float, default=None,
                   help="balance threshold on the Mahalanobis statistic")
    p.add_argument("--a-quantile", type=float, default=None,
                   help="threshold as a chi-square quantile level in (0,1)")


def cmd_analyze(args) -> int:
    trial = read_trial_csv(args.csv)
    j = trial.x.shape[1]
    a = _resolve_a(args, j)
    if args.ci_style == "pt_specific" and args.seed is None:
        raise ConfigError("--ci-style pt_specific draws quantiles; --seed required")
    balance = balance_test(trial.x, trial.z, a)
    methods = [args.method] if args.method else list(METHODS)
    reports = {m: estimate(trial, m, a, args.hc, args.alpha) for m in methods}
    estimates = []
    for m in methods:
        rep = reports[m]
        entry = {
            "method": rep.method,
            "tau_hat": rep.tau_hat,
            "se_hat": rep.se_hat,
            "ci": list(rep.ci),
            "alpha": rep.alpha,
        }
        if rep.adjusted_arm_used is not None:
            entry["arm_used"] = rep.adjusted_arm_used
        if args.ci_style == "pt_specific" and m in ("PT_F", "PT_L"):
            n = trial.z.n_units
            v_n = n * estimate(trial, "N", hc=args.hc).se_hat ** 2
            v_adj = n * estimate(trial, m[-1], hc=args.hc).se_hat ** 2
            v_l = n * estimate(trial, "L", hc=args.hc).se_hat ** 2
            lo, hi = pt_specific_ci(rep.tau_hat, v_n, v_adj, v_l, j, a,
                                    balance.phi, m[-1], args.alpha, n,
                                    sample_count=args.refdist_draws,
                                    seed=args.seed)
            entry["ci_pt_specific"] = [float(lo), float(hi)]
        estimates.append(entry)
    _emit({
        "balance": {
            "tau_x": [float(v) for v in balance.tau_x],
            "m": balance.m,
            "a": balance.a,
            "phi": balance.phi,
        },
        "estimates": estimates,
        "n_units": trial.z.n_units,
        "n_treated": trial.z.n1,
    })
    return EXIT_OK


def cmd_frt(args) -> int:
    trial = read_trial_csv(args.csv)
    a = _resolve_a(args, trial.x.shape[1])
    spec = FRTSpec(statistic=args.statistic, mode=args.mode, reps=args.reps,
                   enumeration_cap=args.enumeration_cap, a=a, alpha=args.alpha,
                   hc=args.hc, refdraws=args.refdraws, refdist_seed=args.seed)
    rng = rngmod.stream(args.seed, rngmod.PERMUTATION)
    result = run(trial, spec, rng)
    _emit({
        "statistic": args.statistic,
        "mode": spec.mode,
        "p_value": result.p_value,
        "observed_stat": result.observed_stat,
        "reps_used": result.reps_used,
        "exact": result.exact,
        "phi_observed": result.phi_observed,
        "seed": args.seed,
    })
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise InputError(f"{args.config}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{args.config}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if args.output is not None:
        raw["output_path"] = args.output
    if args.threads is not None:
        raw["threads"] = args.threads
    if args.seed is not None:
        raw["seed"] = args.seed
    if "seed" not in raw:
        raise ConfigError("config must set a seed (or pass --seed)")
    try:
        config = SimulationConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None

    runner = {"estimate": run_simulation,
              "rem-overlay": rem_vs_cr_overlay,
              "frt": frt_type1_study}[args.study]
    summary = runner(config)
    if args.emit_plot_data:
        write_plot_data(summary, args.emit_plot_data)
    _emit({
        "config_id": config.config_id,
        "study": args.study,
        "tau_true": summary.tau_true,
        "a_threshold": summary.a_threshold,
        "n_phi1": summary.n_phi1,
        "n_phi0": summary.n_phi0,
        "runtime_seconds": summary.runtime_seconds,
        "per_method": summary.per_method,
        "output_path": config.output_path,
    })
    return EXIT_OK


def cmd_refdist(args) -> int:
    out = {"j": args.j, "a": args.a, "pi_a": pi_a(args.j, args.a)}
    if args.p:
        ref = pt_mixture(args.v_n, args.v_adj, args.v_l, args.j, args.a,
                         arm=args.arm, sample_count=args.draws, seed=args.seed)
        q = mixture_quantile(ref, args.p)
        out["quantiles"] = dict(zip(map(str, args.p), map(float, np.atleast_1d(q))))
        out["seed"] = args.seed
        out["draws"] = args.draws
    _emit(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ptbalance",
        description="Randomization-based inference with a preliminary balance test.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="estimate the treatment effect from a CSV")
    p.add_argument("csv", help="trial data with header z,y,x1,...,xJ")
    p.add_argument("--method", choices=METHODS, default=None,
                   help="restrict output to one method (default: all five)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--hc", default="HC2", choices=("HC0", "HC1", "HC2", "HC3"))
    p.add_argument("--ci-style", choices=("normal", "pt_specific"),
                   default="normal")
    p.add_argument("--seed", type=int, default=None,
                   help="required when --ci-style pt_specific")
    p.add_argument("--refdist-draws", type=int, default=10 ** 5)
    _add_threshold_args(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("frt", help="randomization test p-value from a CSV")
    p.add_argument("csv", help="trial data with header z,y,x1,...,xJ")
    p.add_argument("--statistic", choices=STATISTICS, required=True)
    p.add_argument("--mode", choices=("unconditional", "conditional"),
                   default="unconditional")
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--enumeration-cap", type=int, default=20000)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--hc", default="HC2", choices=("HC0", "HC1", "HC2", "HC3"))
    p.add_argument("--refdraws", type=int, default=1000)
    p.add_argument("--seed", type=int, required=True)
    _add_threshold_args(p)
    p.set_defaults(func=cmd_frt)

    p = sub.add_parser("simulate", help="run a Monte Carlo study from a JSON config")
    p.add_argument("--config", required=True, help="JSON configuration file")
    p.add_argument("--study", choices=("estimate", "rem-overlay", "frt"),
                   default="estimate")
    p.add_argument("--output", default=None,
                   help="basename for <output>.csv and <output>.json")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--seed", type=int, default=None,
                   help="override the seed in the config file")
    p.add_argument("--emit-plot-data", default=None, metavar="PATH",
                   help="write p-value histogram CSV (frt study only)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("refdist", help="balance probability and mixture quantiles")
    p.add_argument("--j", type=int, required=True)
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--p", type=float, nargs="*", default=[],
                   help="quantile probabilities to evaluate")
    p.add_argument("--v-n", type=float, default=1.0)
    p.add_argument("--v-adj", type=float, default=1.0)
    p.add_argument("--v-l", type=float, default=1.0)
    p.add_argument("--arm", choices=("F", "L"), default="L")
    p.add_argument("--draws", type=int, default=10 ** 5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_refdist)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StatisticalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STATISTICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
