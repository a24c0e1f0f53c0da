"""Command-line interface.

Exit codes: 0 success, 1 error, 2 fit did not converge (model still written),
3 a verification band failed (report still written).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .design import MODEL_FORMAT_VERSION, AdditiveDesign, Theta
from .fitter import FitConfig, FitResult, fit, make_design, select_smoothing
from .inference import pointwise_ci_many
from .pot import CsvFormatError, EmptySampleError, ThresholdSpec, apply_threshold, read_raw_csv, read_table
from .simlab import (
    FitSettings,
    Scenario,
    generate,
    oracle_fisher,
    run_normality_experiment,
    run_rate_experiment,
    to_json,
)
from .splines import SplineDomainError

EXIT_OK, EXIT_ERROR, EXIT_NONCONVERGED, EXIT_BAND_FAILED = 0, 1, 2, 3
DEFAULT_SEED = 20240601
MODEL_FORMAT = "gpdgam-model"


class CliError(Exception):
    pass


def atomic_write(path, text: str) -> None:
    """Write via a temporary file in the target directory and rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- model file ----------------------------------------------------------------

def model_to_dict(design: AdditiveDesign, result: FitResult, training: dict) -> dict:
    spec = design.spec
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_FORMAT_VERSION,
        "package_version": __version__,
        "design": design.to_dict(),
        "columns": {
            "x": [f"x_{k}" for k in range(1, spec.p)],
            "z": [f"z_{j}" for j in range(1, spec.d + 1)],
        },
        "theta": result.theta.to_dict(),
        "penalized_hessian": result.penalized_hessian.tolist(),
        "training": training,
        "diagnostics": result.diagnostics(),
    }


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise CliError(f"{path}: not a {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise CliError(f"{path}: unsupported model version {doc.get('version')}")
    design = AdditiveDesign.from_dict(doc["design"])
    theta = Theta.from_dict(doc["theta"])
    H = np.asarray(doc["penalized_hessian"], float)
    diag = doc["diagnostics"]
    result = FitResult(theta=theta, converged=diag["converged"], iterations=diag["iterations"],
                       final_grad_norm=diag["final_grad_norm"], penalized_hessian=H, nll=diag["objective"],
                       gamma_hat=np.zeros(0), scale_hat=np.zeros(0), warnings=list(diag["warnings"]))
    return doc, design, result


# --- subcommands ---------------------------------------------------------------

def _parse_grid(text):
    pairs = []
    for item in text.split(","):
        lam, _, nu = item.partition(":")
        pairs.append((float(lam), float(nu or lam)))
    return pairs


def cmd_fit(args) -> int:
    if args.knots is not None and args.knots < 1:
        raise CliError("--knots must be a positive integer")
    if args.m < 1 or args.m >= args.xi:
        raise CliError(f"--m must satisfy 1 <= m < xi (xi={args.xi})")
    if args.lam < 0 or args.nu < 0:
        raise CliError("--lambda and --nu must be nonnegative")
    threshold = ThresholdSpec.parse(args.threshold)
    raw = read_raw_csv(args.input)
    if args.d is not None and raw.z.shape[1] != args.d:
        raise CliError(f"--d {args.d} but the input has {raw.z.shape[1]} smooth columns z_1..")
    data = apply_threshold(raw, threshold)
    config = FitConfig(max_iter=args.max_iter, grad_tol=args.grad_tol)
    design, notes = make_design(data, K=args.knots, xi=args.xi, m=args.m, lam=args.lam, nu=args.nu,
                                reparam=args.reparam, center_x=not args.no_center_x, rescale_z=args.rescale_z)
    if args.select_smoothing:
        (lam, nu), rows = select_smoothing(design, data, _parse_grid(args.select_smoothing), config,
                                           seed=args.seed)
        design = make_design(data, K=design.spec.grid.K, xi=args.xi, m=args.m, lam=lam, nu=nu,
                             reparam=args.reparam, center_x=not args.no_center_x, rescale_z=args.rescale_z)[0]
        notes.append(f"selected lambda={lam}, nu={nu} by held-out log-likelihood")
    result = fit(design, data, config)
    result.warnings[:0] = notes
    training = data.summary() | {"exceedance_fraction": data.exceedance_fraction}
    atomic_write(args.out, json.dumps(model_to_dict(design, result, training), indent=1) + "\n")

    spec = design.spec
    print(f"n={data.n} N={data.N} K={spec.grid.K} xi={spec.grid.xi} m={spec.m} "
          f"lambda={spec.lam} nu={spec.nu} family={'orthogonal' if spec.reparam else 'plain'}")
    print(f"converged={result.converged} iterations={result.iterations} "
          f"grad_norm={result.final_grad_norm:.3e} objective={result.nll:.6f}")
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK if result.converged else EXIT_NONCONVERGED


PREDICT_COLUMNS = ["gamma_hat", "se_gamma", "gamma_lo", "gamma_hi", "scale_hat", "scale_lo", "scale_hi"]


def cmd_predict(args) -> int:
    doc, design, result = load_model(args.model)
    xcols, zcols = doc["columns"]["x"], doc["columns"]["z"]
    header, cols = read_table(args.input, require_y=False)
    missing = [c for c in xcols + zcols if c not in cols]
    if missing:
        raise CliError(f"prediction input lacks columns {missing}; expected {xcols + zcols}")
    n = len(next(iter(cols.values()))) if cols else 0
    if n == 0:
        raise CliError(f"{args.input}: no rows to predict")
    x = np.column_stack([np.ones(n)] + [cols[c] for c in xcols])
    z = np.column_stack([cols[c] for c in zcols])
    zt = design.transform_z(z)
    bad = np.flatnonzero(np.any((zt < 0) | (zt > 1), axis=1))
    if bad.size:
        lines = ", ".join(str(i + 2) for i in bad[:20])
        raise CliError(f"{bad.size} row(s) have z outside [0, 1] (input lines {lines}); "
                       "refit with --rescale-z to accept other ranges")
    cis = pointwise_ci_many(result, design, x, z, args.level)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(xcols + zcols + PREDICT_COLUMNS)
    for i, ci in enumerate(cis):
        w.writerow([repr(float(v)) for v in x[i, 1:]] + [repr(float(v)) for v in z[i]] +
                   [repr(getattr(ci, c)) for c in PREDICT_COLUMNS])
    atomic_write(args.out, buf.getvalue())
    return EXIT_OK


def _load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def cmd_simulate(args) -> int:
    cfg = _load_json(args.config)
    scenario = Scenario.from_dict(cfg.get("scenario", cfg))
    seed = args.seed if args.seed is not None else cfg.get("seed", DEFAULT_SEED)
    raw, truth = generate(scenario, args.N, np.random.default_rng(seed))
    xs, zs = raw.x, raw.z
    raw.extra["gamma_true"] = truth.gamma(xs, zs)
    if truth.logsigma is not None:
        raw.extra["logsigma_true"] = truth.logsigma(xs, zs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["y"] + [f"x_{k + 1}" for k in range(xs.shape[1])] + [f"z_{j + 1}" for j in range(zs.shape[1])]
    header += list(raw.extra)
    w.writerow(header)
    data = np.column_stack([raw.y, xs, zs] + list(raw.extra.values()))
    for row in data:
        w.writerow([repr(float(v)) for v in row])
    atomic_write(args.out, buf.getvalue())
    return EXIT_OK


def _experiment_inputs(args, kind):
    cfg = _load_json(args.config)
    if cfg.get("experiment", kind) != kind:
        raise CliError(f"config describes a {cfg.get('experiment')!r} experiment, not {kind!r}")
    scenario = Scenario.from_dict(cfg["scenario"])
    seed = args.seed if args.seed is not None else cfg.get("seed", DEFAULT_SEED)
    workers = args.workers if args.workers is not None else cfg.get("workers", 1)
    settings = FitSettings(**cfg.get("fit", {}))
    bands = cfg.get("bands")
    out = cfg.get("output", {})
    csv_path = args.out_csv or out.get("csv") or f"{kind}_report.csv"
    json_path = args.out_json or out.get("json") or f"{kind}_report.json"
    return cfg, scenario, seed, workers, settings, bands, csv_path, json_path


def _write_report(report, cfg, seed, csv_path, json_path):
    atomic_write(csv_path, report.to_csv())
    atomic_write(json_path, to_json({"config": cfg, "seed": seed, "report": report.summary()}))
    for name, ok in report.checks.items():
        lo, hi = report.bands[name]
        print(f"{'PASS' if ok else 'FAIL'} {name} in [{lo}, {hi}]")
    return EXIT_OK if report.passed else EXIT_BAND_FAILED


def cmd_verify_rate(args) -> int:
    cfg, scenario, seed, workers, settings, bands, csv_path, json_path = _experiment_inputs(args, "rate")
    m = int(cfg.get("m", settings.m))
    report = run_rate_experiment(scenario, cfg["n_grid"], int(cfg["reps"]), m=m, settings=settings,
                                 seed=seed, workers=workers, bands=bands)
    print(f"slope(gamma)={report.slope:.4f} +/- {report.slope_se:.4f}  "
          f"slope(beta)={report.slope_beta:.4f}  expected={report.expected_slope:.4f}")
    return _write_report(report, cfg, seed, csv_path, json_path)


def cmd_verify_normality(args) -> int:
    cfg, scenario, seed, workers, settings, bands, csv_path, json_path = _experiment_inputs(args, "normality")
    point = cfg["point"]
    report = run_normality_experiment(scenario, int(cfg["n"]), int(cfg["reps"]), point["x"], point["z"],
                                      settings=settings, seed=seed, workers=workers, bands=bands)
    print(f"variance={report.variance:.4f} coverage95={report.coverage95:.4f} "
          f"corr_ortho={report.corr_ortho:.4f} corr_plain={report.corr_plain:.4f}")
    return _write_report(report, cfg, seed, csv_path, json_path)


def cmd_oracle(args) -> int:
    seed = DEFAULT_SEED if args.seed is None else args.seed
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["family", "gamma", "entry", "mean", "stderr"])
    for g in args.gamma:
        for ortho in ((False, True) if args.family == "both" else (args.family == "ortho",)):
            mean, se = oracle_fisher(g, args.draws, seed, ortho=ortho)
            for (i, j), name in zip(((0, 0), (0, 1), (1, 1)), ("gg", "gs", "ss")):
                w.writerow(["ortho" if ortho else "plain", repr(g), name, repr(float(mean[i, j])), repr(float(se[i, j]))])
    text = buf.getvalue()
    if args.out:
        atomic_write(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpdgam", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model to peaks over a threshold")
    p.add_argument("--input", required=True, help="CSV with y, x_1.., z_1..")
    p.add_argument("--threshold", required=True, help="constant:W | quantile:A | column:NAME")
    p.add_argument("--out", required=True, help="model JSON to write")
    p.add_argument("--d", type=int, help="expected number of smooth covariates (checked)")
    p.add_argument("--knots", type=int, help="interior knots K (default ceil(n^(1/(2m+1))))")
    p.add_argument("--xi", type=int, default=3, help="spline degree")
    p.add_argument("--m", type=int, default=2, help="penalty derivative order")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="shape smoothing parameter")
    p.add_argument("--nu", type=float, default=1.0, help="scale smoothing parameter")
    p.add_argument("--reparam", action="store_true", help="fit the orthogonal (gamma, varsigma) family")
    p.add_argument("--no-center-x", action="store_true", help="do not centre linear covariates")
    p.add_argument("--rescale-z", action="store_true", help="min-max rescale z to [0, 1]")
    p.add_argument("--select-smoothing", metavar="GRID",
                   help="comma list of lambda[:nu] pairs chosen by 20%% held-out likelihood")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--grad-tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="pointwise estimates with confidence intervals")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="CSV with the model's x_ and z_ columns")
    p.add_argument("--out", required=True)
    p.add_argument("--level", type=float, default=0.95)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="draw a raw dataset from a scenario")
    p.add_argument("--config", required=True, help="scenario JSON (or experiment config)")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    for name, func in (("verify-rate", cmd_verify_rate), ("verify-normality", cmd_verify_normality)):
        p = sub.add_parser(name, help=f"run the {name[7:]} experiment and check its bands")
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--out-csv")
        p.add_argument("--out-json")
        p.set_defaults(func=func)

    p = sub.add_parser("oracle", help="Monte Carlo Fisher information with standard errors")
    p.add_argument("--gamma", type=float, nargs="+", default=[-0.2, 0.0, 0.5, 1.0])
    p.add_argument("--draws", type=int, default=10**6)
    p.add_argument("--family", choices=("plain", "ortho", "both"), default="both")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, CsvFormatError, EmptySampleError, SplineDomainError, ValueError, KeyError,
            OSError, json.JSONDecodeError) as err:
        msg = err.args[0] if isinstance(err, KeyError) and err.args else err
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
