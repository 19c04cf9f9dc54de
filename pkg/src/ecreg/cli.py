"""Command-line front end: synthesize, fit, LOO-CV, sweep, calibrate, validate.

Every subcommand is a thin composition of library calls; outputs are CSV and
JSON files whose '#' header lines echo the resolved settings so any run can
be reproduced from its artifacts alone.  Exit codes: 0 success, 1 numerical
failure, 2 usage error.
"""

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict

from . import __version__
from .core import FitSettings, fit
from .data_io import (
    SynthConfig,
    error_summary,
    gen_synthetic,
    load_csv,
    save_dataset_csv,
    save_fit_json,
    save_loo_csv,
    save_sweep_csv,
)
from .errors import (
    AllPointsFailed,
    ConfigError,
    DimensionMismatch,
    EcregError,
    IoError,
    MissingTarget,
    ParseError,
)
from .hyper import SweepGrid, calibrate_rho, sweep
from .loocv import approx_looe, kfold_cv, literal_loocv
from .priors import BERNOULLI_GAUSS, BERNOULLI_UNIFORM, PriorSpec
from .validate import run_checks

_FAMILIES = {"bg": BERNOULLI_GAUSS, "bu": BERNOULLI_UNIFORM}

_USAGE_ERRORS = (ConfigError, ParseError, MissingTarget, DimensionMismatch, IoError)


def _float_list(text):
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError(f"empty list: {text!r}")
    return values


def _default_workers():
    raw = os.environ.get("ECREG_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _add_data_flags(p):
    p.add_argument("--data", required=True, help="input CSV (rows = samples)")
    p.add_argument("--target", default="y", help="target column name")
    p.add_argument("--center", action="store_true",
                   help="subtract feature and target means before fitting")


def _add_prior_flags(p):
    p.add_argument("--family", choices=sorted(_FAMILIES), default="bg",
                   help="prior family: bg = Bernoulli-Gauss, bu = Bernoulli-uniform")
    p.add_argument("--rho", type=float, help="prior non-zero fraction")
    p.add_argument("--sigma-w2", type=float,
                   help="slab variance (bg family only)")


def _add_tolerance_flags(p):
    p.add_argument("--grad-tol", type=float, help="gradient tolerance override")
    p.add_argument("--step-tol", type=float, help="step-size tolerance override")
    p.add_argument("--max-outer", type=int, help="outer iteration cap override")


def _settings_from_flags(args):
    overrides = {}
    for name in ("grad_tol", "step_tol", "max_outer"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    return FitSettings(**overrides) if overrides else None


def _prior_from_flags(args):
    family = _FAMILIES[args.family]
    if args.rho is None:
        raise ConfigError("--rho is required for this command")
    if family == BERNOULLI_GAUSS and args.sigma_w2 is None:
        raise ConfigError("--sigma-w2 is required with --family bg")
    if family == BERNOULLI_UNIFORM and args.sigma_w2 is not None:
        raise ConfigError("--sigma-w2 is not accepted with --family bu")
    sigma = args.sigma_w2 if family == BERNOULLI_GAUSS else None
    return PriorSpec(family=family, rho=args.rho, sigma_w2=sigma)


def _load_dataset(args):
    dataset, record = load_csv(args.data, args.target, center=args.center)
    return dataset, record


def _tolerance_lines(settings):
    cfg = settings if settings is not None else FitSettings()
    echo = asdict(cfg)
    keys = ("grad_tol", "step_tol", "max_outer", "max_inner", "tilt_tol",
            "variance_floor")
    return ["settings: " + " ".join(f"{k}={echo[k]}" for k in keys)]


def _prior_lines(prior, beta):
    parts = [f"family={prior.family}", f"rho={prior.rho!r}"]
    if prior.sigma_w2 is not None:
        parts.append(f"sigma_w2={prior.sigma_w2!r}")
    parts.append(f"beta={beta!r}")
    return ["prior: " + " ".join(parts)]


def _data_lines(args):
    return [f"data: path={args.data} target={args.target} center={args.center}"]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_synth(args):
    test_samples = args.test_samples
    if test_samples is None:
        test_samples = int(round(args.alpha * args.n))
    config = SynthConfig(N=args.n, alpha=args.alpha, rho0=args.rho0,
                         sigma_w0_sq=args.sigma_w0_sq,
                         sigma_n0_sq=args.sigma_n0_sq, seed=args.seed,
                         test_samples=test_samples)
    train, truth, heldout = gen_synthetic(config)
    header = [
        f"ecreg {__version__} synth",
        f"n={config.N} alpha={config.alpha!r} rho0={config.rho0!r} "
        f"sigma_w0_sq={config.sigma_w0_sq!r} sigma_n0_sq={config.sigma_n0_sq!r} "
        f"seed={config.seed} test_samples={config.test_samples}",
    ]
    save_dataset_csv(args.out_train, train, header_lines=header + ["split=train"])
    print(f"wrote {args.out_train}: {train.n_samples} samples x "
          f"{train.n_features} features")
    if heldout is not None:
        save_dataset_csv(args.out_test, heldout, header_lines=header + ["split=test"])
        print(f"wrote {args.out_test}: {heldout.n_samples} samples x "
              f"{heldout.n_features} features")
    if args.out_truth:
        payload = {
            "w0": [float(v) for v in truth.w0],
            "support": [int(i) for i in truth.support],
            "settings": {"N": config.N, "alpha": config.alpha,
                         "rho0": config.rho0, "sigma_w0_sq": config.sigma_w0_sq,
                         "sigma_n0_sq": config.sigma_n0_sq, "seed": config.seed,
                         "test_samples": config.test_samples},
        }
        try:
            with open(args.out_truth, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, indent=2)
                fh.write("\n")
        except OSError as exc:
            raise IoError(f"cannot write {args.out_truth}: {exc}") from exc
        print(f"wrote {args.out_truth}: {truth.support.size} non-zero coefficients")
    return 0


def _cmd_fit(args):
    prior = _prior_from_flags(args)
    settings = _settings_from_flags(args)
    dataset, record = _load_dataset(args)
    result = fit(dataset, prior, args.beta, settings=settings)
    summary = error_summary(result.state.m, dataset)
    extra = {
        "command": "fit",
        "version": __version__,
        "data": args.data,
        "target": args.target,
        "center": args.center,
        "family": prior.family,
        "rho": prior.rho,
        "sigma_w2": prior.sigma_w2,
        "beta": args.beta,
        "eps": summary.eps,
        "y_mean": record.y_mean,
    }
    save_fit_json(args.out, result, extra=extra)
    state = result.state
    print(f"wrote {args.out}: converged={state.converged} "
          f"iterations={state.iterations} free_energy={state.free_energy!r} "
          f"eps={summary.eps!r}")
    if not state.converged:
        print("fit did not converge within the iteration budget", file=sys.stderr)
        return 1
    return 0


def _cmd_loocv(args):
    prior = _prior_from_flags(args)
    settings = _settings_from_flags(args)
    dataset, _ = _load_dataset(args)
    result = fit(dataset, prior, args.beta, settings=settings)
    report = approx_looe(result, dataset, args.beta)
    print(f"approx: eps_loo={report.eps_loo!r} "
          f"flagged={len(report.flagged)} wall={report.wall_time:.3f}s")
    literal = None
    if args.literal:
        literal = literal_loocv(dataset, prior, args.beta,
                                workers=args.workers, settings=settings)
        rel = abs(report.eps_loo - literal.eps_loo) / max(literal.eps_loo, 1e-300)
        print(f"literal: eps_loo={literal.eps_loo!r} "
              f"flagged={len(literal.flagged)} wall={literal.wall_time:.3f}s "
              f"relative_gap={rel:.3e}")
    if args.kfold is not None:
        kreport = kfold_cv(dataset, prior, args.beta, args.kfold,
                           seed=args.seed, workers=args.workers,
                           settings=settings)
        print(f"kfold({args.kfold}): eps={kreport.eps_loo!r} "
              f"wall={kreport.wall_time:.3f}s")
    header = ([f"ecreg {__version__} loocv"] + _data_lines(args)
              + _prior_lines(prior, args.beta) + _tolerance_lines(settings)
              + [f"workers={args.workers} seed={args.seed}",
                 f"eps_loo_approx={report.eps_loo!r}"])
    if literal is not None:
        header.append(f"eps_loo_literal={literal.eps_loo!r}")
    save_loo_csv(args.out, report, literal_report=literal, header_lines=header)
    print(f"wrote {args.out}")
    return 0


def _cmd_sweep(args):
    family = _FAMILIES[args.family]
    if family == BERNOULLI_GAUSS and args.sigma_w2_grid is None:
        raise ConfigError("--sigma-w2-grid is required with --family bg")
    if family == BERNOULLI_UNIFORM and args.sigma_w2_grid is not None:
        raise ConfigError("--sigma-w2-grid is not accepted with --family bu")
    settings = _settings_from_flags(args)
    dataset, _ = _load_dataset(args)
    grid = SweepGrid(beta_values=args.beta_grid, rho_values=args.rho_grid,
                     sigma_w2_values=args.sigma_w2_grid)
    result = sweep(dataset, family, grid, workers=args.workers,
                   settings=settings)
    for p in result.points:
        print(f"point beta={p.beta!r} rho={p.rho!r} sigma_w2={p.sigma_w2!r} "
              f"eps={p.eps!r} eps_loo={p.eps_loo!r} converged={p.converged}"
              + (f" error={p.error}" if p.error else ""))
    best = result.best
    print(f"best: beta={best.beta!r} rho={best.rho!r} sigma_w2={best.sigma_w2!r} "
          f"eps_loo={best.eps_loo!r}")
    header = ([f"ecreg {__version__} sweep"] + _data_lines(args)
              + [f"family={family} beta_grid={args.beta_grid} "
                 f"rho_grid={args.rho_grid} sigma_w2_grid={args.sigma_w2_grid}"]
              + _tolerance_lines(settings)
              + [f"workers={args.workers}",
                 f"best: beta={best.beta!r} rho={best.rho!r} "
                 f"sigma_w2={best.sigma_w2!r} eps_loo={best.eps_loo!r}"])
    save_sweep_csv(args.out, result.points, header_lines=header)
    print(f"wrote {args.out}")
    return 0


def _cmd_calibrate(args):
    family = _FAMILIES[args.family]
    if family == BERNOULLI_GAUSS and args.sigma_w2 is None:
        raise ConfigError("--sigma-w2 is required with --family bg")
    if family == BERNOULLI_UNIFORM and args.sigma_w2 is not None:
        raise ConfigError("--sigma-w2 is not accepted with --family bu")
    settings = _settings_from_flags(args)
    dataset, _ = _load_dataset(args)
    rows = []
    any_success = False
    for K in args.k_target:
        per_beta = []
        for beta in args.beta_grid:
            try:
                cal = calibrate_rho(dataset, beta, K, family,
                                    sigma_w2=args.sigma_w2, settings=settings)
                eps = error_summary(cal.fit.state.m, dataset).eps
                eps_loo = approx_looe(cal.fit, dataset, beta).eps_loo
                row = {"K": K, "beta": beta, "rho": cal.rho,
                       "achieved_K": cal.achieved_K, "eps": eps,
                       "eps_loo": eps_loo, "selected": False}
                any_success = True
                print(f"K={K!r} beta={beta!r}: rho={cal.rho!r} "
                      f"achieved_K={cal.achieved_K!r} eps_loo={eps_loo!r}")
            except EcregError as exc:
                row = {"K": K, "beta": beta, "rho": None, "achieved_K": None,
                       "eps": None, "eps_loo": None, "selected": False}
                print(f"K={K!r} beta={beta!r}: failed "
                      f"({type(exc).__name__}: {exc})", file=sys.stderr)
            per_beta.append(row)
        ok = [r for r in per_beta if r["eps_loo"] is not None
              and math.isfinite(r["eps_loo"])]
        if ok:
            winner = min(ok, key=lambda r: (r["eps_loo"], r["beta"]))
            winner["selected"] = True
            print(f"K={K!r} selected: beta={winner['beta']!r} "
                  f"rho={winner['rho']!r} eps_loo={winner['eps_loo']!r}")
        else:
            print(f"K={K!r}: no successful grid point", file=sys.stderr)
        rows.extend(per_beta)
    if not any_success:
        raise AllPointsFailed("calibration failed at every (K, beta) point")
    header = ([f"ecreg {__version__} calibrate"] + _data_lines(args)
              + [f"family={family} sigma_w2={args.sigma_w2!r} "
                 f"k_targets={args.k_target} beta_grid={args.beta_grid}"]
              + _tolerance_lines(settings))
    try:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(["K", "beta", "rho", "achieved_K", "eps",
                             "eps_loo", "selected"])
            for r in rows:
                writer.writerow([
                    repr(float(r["K"])), repr(float(r["beta"])),
                    "" if r["rho"] is None else repr(float(r["rho"])),
                    "" if r["achieved_K"] is None else repr(float(r["achieved_K"])),
                    "" if r["eps"] is None else repr(float(r["eps"])),
                    "" if r["eps_loo"] is None else repr(float(r["eps_loo"])),
                    "true" if r["selected"] else "false",
                ])
    except OSError as exc:
        raise IoError(f"cannot write {args.out}: {exc}") from exc
    print(f"wrote {args.out}")
    return 0


def _cmd_validate(args):
    results = run_checks(seed=args.seed)
    failures = 0
    for name, ok, detail in results:
        print(f"[{'ok' if ok else 'FAIL'}] {name}: {detail}")
        failures += 0 if ok else 1
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return 0 if failures == 0 else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ecreg",
        description="Sparse Bayesian linear regression with fast approximate "
                    "leave-one-out cross-validation.")
    parser.add_argument("--version", action="version",
                        version=f"ecreg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic train/test pair")
    p.add_argument("--n", type=int, required=True, help="number of features")
    p.add_argument("--alpha", type=float, required=True,
                   help="samples per feature; M = round(alpha * n)")
    p.add_argument("--rho0", type=float, required=True,
                   help="true non-zero fraction")
    p.add_argument("--sigma-w0-sq", type=float, required=True,
                   help="true slab variance")
    p.add_argument("--sigma-n0-sq", type=float, required=True,
                   help="true noise variance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-samples", type=int, default=None,
                   help="held-out sample count (default: same as train)")
    p.add_argument("--out-train", default="train.csv")
    p.add_argument("--out-test", default="test.csv")
    p.add_argument("--out-truth", default="truth.json",
                   help="ground-truth JSON path (empty string to skip)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("fit", help="fit one model and write a fit file")
    _add_data_flags(p)
    _add_prior_flags(p)
    p.add_argument("--beta", type=float, required=True,
                   help="inverse temperature (inverse noise variance)")
    _add_tolerance_flags(p)
    p.add_argument("--out", default="fit.json")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("loocv",
                       help="fit, then approximate leave-one-out residuals")
    _add_data_flags(p)
    _add_prior_flags(p)
    p.add_argument("--beta", type=float, required=True)
    _add_tolerance_flags(p)
    p.add_argument("--literal", action="store_true",
                   help="also run literal refit-per-sample CV for comparison")
    p.add_argument("--kfold", type=int, default=None, metavar="K",
                   help="also run k-fold CV with this many folds")
    p.add_argument("--workers", type=int, default=_default_workers(),
                   help="parallel fold workers (env ECREG_WORKERS)")
    p.add_argument("--seed", type=int, default=0, help="k-fold shuffle seed")
    p.add_argument("--out", default="loo.csv")
    p.set_defaults(func=_cmd_loocv)

    p = sub.add_parser("sweep", help="grid sweep over hyper-parameters")
    _add_data_flags(p)
    p.add_argument("--family", choices=sorted(_FAMILIES), default="bg")
    p.add_argument("--beta-grid", type=_float_list, required=True,
                   help="comma-separated beta values")
    p.add_argument("--rho-grid", type=_float_list, required=True,
                   help="comma-separated rho values")
    p.add_argument("--sigma-w2-grid", type=_float_list, default=None,
                   help="comma-separated slab variances (bg family)")
    _add_tolerance_flags(p)
    p.add_argument("--workers", type=int, default=_default_workers(),
                   help="parallel grid workers (env ECREG_WORKERS)")
    p.add_argument("--out", default="sweep.csv")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser(
        "calibrate",
        help="calibrate rho from a sparsity target, then select beta")
    _add_data_flags(p)
    p.add_argument("--family", choices=sorted(_FAMILIES), default="bg")
    p.add_argument("--sigma-w2", type=float, default=None,
                   help="slab variance (bg family)")
    p.add_argument("--k-target", type=_float_list, required=True,
                   help="comma-separated expected non-zero counts")
    p.add_argument("--beta-grid", type=_float_list, required=True)
    _add_tolerance_flags(p)
    p.add_argument("--out", default="calibrate.csv")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("validate", help="run the built-in diagnostic suite")
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=_cmd_validate)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return int(code) if isinstance(code, int) else (0 if code is None else 2)
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EcregError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
