"""Command-line surface: ``selbias analyze`` and ``selbias simulate``.

All randomness flows from the --seed flag.  The analysis report is written
as JSON (plus a readable table on stdout) and contains no timestamps, so a
rerun with the same inputs and seed is byte-identical.  The simulation
writes a tidy metrics CSV (byte-identical under a fixed seed) and a JSON
manifest that carries the wall time and per-cell status.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, pmm, simstudy
from .bayes import PhiPrior, posterior_mubns
from .errors import (
    ConvergenceError,
    DataError,
    MomentConsistencyError,
    UnstableDrawsError,
    WeakProxyError,
)
from .fileio import (
    dump_report,
    jsonify,
    load_microdata,
    load_summary_file,
    prepare_analysis_data,
)
from .probit import fit_probit, probit_coef_cov
from .proxy import conditional_moments_nonselected, conditional_moments_selected, fit_proxy_linear
from .statcore import ols_from_micro

REPORT_SCHEMA_VERSION = 1

EXIT_CLEAN = 0
EXIT_FAILED = 1
EXIT_PARTIAL = 2


def _split_columns(text: str) -> list[str]:
    return [c.strip() for c in text.split(",") if c.strip()]


def _parse_prior(text: str) -> PhiPrior:
    if text == "uniform":
        return PhiPrior.uniform()
    if text == "discrete":
        return PhiPrior.discrete()
    if text.startswith("point="):
        return PhiPrior.point(float(text.split("=", 1)[1]))
    raise argparse.ArgumentTypeError(
        f"invalid prior {text!r}: expected uniform, discrete, or point=V"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selbias",
        description=(
            "Quantify non-ignorable selection bias in regression coefficients "
            "estimated from a non-probability sample, using selected-sample "
            "microdata plus aggregate statistics for the non-selected population."
        ),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="bias indices for one dataset")
    pa.add_argument("selected_csv", help="CSV of selected-sample microdata (header row)")
    pa.add_argument("--summary", required=True, help="aggregate-summary JSON for the non-selected units")
    pa.add_argument("--outcome", required=True, help="outcome column")
    pa.add_argument("--predictors", default="", help="comma-separated predictor columns (may be empty)")
    pa.add_argument("--aux", required=True, help="comma-separated auxiliary columns")
    pa.add_argument("--outcome-kind", choices=("continuous", "binary"), default="continuous")
    pa.add_argument("--phi", default="0,0.5,1", help="comma-separated phi grid for the point indices")
    pa.add_argument("--prior", type=_parse_prior, default=PhiPrior.uniform(),
                    help="phi prior: uniform, discrete, or point=V")
    pa.add_argument("--draws", type=int, default=1000, help="posterior draws")
    pa.add_argument("--warmup", type=int, default=100, help="latent-chain warm-up sweeps (binary outcome)")
    pa.add_argument("--seed", type=int, default=0)
    pa.add_argument("--rate", type=float, default=None, help="non-selection rate Pr(S=0) for MUB")
    pa.add_argument("--rescale-mode", choices=("sqrt", "variance"), default="sqrt")
    pa.add_argument("--aggregate-mode", choices=("fixed", "resample"), default=None)
    pa.add_argument("--out", default=".", help="output directory for report.json")

    ps = sub.add_parser("simulate", help="replicate the Monte Carlo experiment")
    ps.add_argument("--full", action="store_true", help="run the full 1,944-cell grid (CPU-hours)")
    ps.add_argument("--reps", type=int, default=100, help="replicates per cell")
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--jobs", type=int, default=1, help="worker processes")
    ps.add_argument("--bayes", dest="bayes", action="store_true", default=True,
                    help="evaluate Bayesian intervals on the thinned sub-grid (default)")
    ps.add_argument("--no-bayes", dest="bayes", action="store_false")
    ps.add_argument("--bayes-draws", type=int, default=500)
    ps.add_argument("--out", default=".", help="output directory")
    ps.add_argument("--quiet", action="store_true")
    return parser


def _coef_map(names, values) -> dict:
    return {name: float(val) for name, val in zip(names, values)}


def _posterior_block(summary, rate) -> dict:
    names = summary.coefficients
    block = {
        "n_draws": summary.n_draws,
        "n_unstable": summary.n_unstable,
        "median": _coef_map(names, summary.median),
        "ci_lower": _coef_map(names, summary.ci_lower),
        "ci_upper": _coef_map(names, summary.ci_upper),
        "conditional_correlation_median": float(np.median(summary.rho_draws)),
    }
    if rate is not None:
        scaled = summary.scaled_by_rate()
        block["mub_median"] = _coef_map(names, scaled.median)
        block["mub_ci_lower"] = _coef_map(names, scaled.ci_lower)
        block["mub_ci_upper"] = _coef_map(names, scaled.ci_upper)
    return block


def _linear_block(data, nonsel, args, warnings_out) -> dict:
    coef_names = ("intercept",) + data.z_names
    design = np.column_stack([np.ones(data.n_rows), data.z])
    fit = ols_from_micro(data.y, design)

    spec = fit_proxy_linear(data.y, data.z, data.a, z_names=data.z_names, a_names=data.a_names)
    sel_m = conditional_moments_selected(data.y, data.z, data.a, spec)
    non_m = conditional_moments_nonselected(spec, nonsel)

    phi_grid = [float(v) for v in _split_columns(args.phi)]
    indices, index_warnings = {}, []
    for phi in phi_grid:
        try:
            idx = pmm.mubns(sel_m, non_m, phi)
        except WeakProxyError as exc:
            indices[str(phi)] = None
            index_warnings.append(f"phi={phi:g}: {exc}")
            continue
        entry = {"mubns": _coef_map(coef_names, idx.mubns)}
        if args.rate is not None:
            scaled = pmm.mub(idx, args.rate)
            entry["mub"] = _coef_map(coef_names, scaled.mub)
            adj_int, adj_slopes = pmm.adjusted_coefficients(fit, scaled)
            entry["adjusted_coefficients"] = _coef_map(
                coef_names, np.concatenate(([adj_int], adj_slopes))
            )
        indices[str(phi)] = entry
    warnings_out.extend(index_warnings)

    try:
        interval = pmm.mle_interval(sel_m, non_m)
        mle = {
            name: [float(lo), float(hi)]
            for name, (lo, hi) in zip(coef_names, interval)
        }
    except WeakProxyError as exc:
        mle = None
        warnings_out.append(f"mle interval: {exc}")

    summary = posterior_mubns(
        data.y, data.z, data.a, nonsel,
        prior=args.prior,
        n_draws=args.draws,
        target="linear",
        seed=args.seed,
        aggregate_mode=args.aggregate_mode,
        z_names=data.z_names,
        a_names=data.a_names,
        nonselection_rate=args.rate,
    )
    return {
        "coefficients": coef_names,
        "selected_fit": {
            "estimate": _coef_map(coef_names, fit.coefficients),
            "std_error": _coef_map(coef_names, fit.std_errors),
            "resid_var": fit.resid_var,
            "n": data.n_rows,
        },
        "conditional_correlation": sel_m.rho_xy_z,
        "proxy_coefficients": _coef_map(data.a_names, spec.a_coeffs),
        "phi_grid": phi_grid,
        "indices": indices,
        "mle_interval": mle,
        "posterior": _posterior_block(summary, args.rate),
    }


def _probit_block(data, nonsel, args) -> dict:
    coef_names = ("intercept",) + data.z_names
    design = np.column_stack([np.ones(data.n_rows), data.z])
    coef = fit_probit(data.y, design)
    cov = probit_coef_cov(data.y, design, coef)

    summary = posterior_mubns(
        data.y, data.z, data.a, nonsel,
        prior=args.prior,
        n_draws=args.draws,
        target="probit",
        seed=args.seed,
        aggregate_mode=args.aggregate_mode,
        rescale_mode=args.rescale_mode,
        warmup=args.warmup,
        z_names=data.z_names,
        a_names=data.a_names,
        nonselection_rate=args.rate,
    )
    return {
        "coefficients": coef_names,
        "selected_fit": {
            "estimate": _coef_map(coef_names, coef),
            "std_error": _coef_map(coef_names, np.sqrt(np.diag(cov))),
            "n": data.n_rows,
        },
        "rescale_mode": args.rescale_mode,
        "posterior": _posterior_block(summary, args.rate),
    }


def _format_table(report: dict) -> str:
    lines = []
    for kind in ("linear", "probit"):
        block = report.get(kind)
        if not block:
            continue
        lines.append(f"--- {kind} model: {report['config']['outcome']} ---")
        rho = block.get("conditional_correlation")
        if rho is None:
            rho = block["posterior"]["conditional_correlation_median"]
        lines.append(f"Cor(X,Y|Z) = {rho:.3f}")
        post = block["posterior"]
        header = f"{'coefficient':<16}{'estimate':>10}{'SE':>9}{'post.med':>10}{'95% CI':>20}"
        lines.append(header)
        for name in block["coefficients"]:
            est = block["selected_fit"]["estimate"][name]
            se = block["selected_fit"]["std_error"][name]
            med = post["median"][name]
            ci = f"[{post['ci_lower'][name]:.3f}, {post['ci_upper'][name]:.3f}]"
            lines.append(f"{name:<16}{est:>10.4f}{se:>9.4f}{med:>10.4f}{ci:>20}")
        if "mub_median" in post:
            lines.append("MUB posterior medians: "
                         + ", ".join(f"{n}={post['mub_median'][n]:.4f}" for n in block["coefficients"]))
        lines.append("")
    if report["warnings"]:
        lines.append("warnings:")
        lines.extend(f"  - {w}" for w in report["warnings"])
    return "\n".join(lines)


def cmd_analyze(args) -> int:
    frame = load_microdata(args.selected_csv)
    data = prepare_analysis_data(
        frame,
        outcome=args.outcome,
        predictors=_split_columns(args.predictors),
        auxiliaries=_split_columns(args.aux),
        outcome_kind=args.outcome_kind,
    )
    nonsel = load_summary_file(args.summary)
    needed = set(data.z_names) | set(data.a_names)
    missing = needed - set(nonsel.variables)
    if missing:
        raise DataError(f"summary file lacks required variables: {sorted(missing)}")

    warnings_out: list[str] = []
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "analysis",
        "config": {
            "selected_csv": str(args.selected_csv),
            "summary": str(args.summary),
            "outcome": args.outcome,
            "outcome_kind": args.outcome_kind,
            "predictors": list(data.z_names),
            "auxiliaries": list(data.a_names),
            "encoded_columns": data.encoded,
            "phi": args.phi,
            "prior": args.prior.kind if args.prior.value is None else f"point={args.prior.value}",
            "draws": args.draws,
            "warmup": args.warmup,
            "seed": args.seed,
            "rate": args.rate,
            "rescale_mode": args.rescale_mode,
            "aggregate_mode": args.aggregate_mode,
            "version": __version__,
        },
        "nonselected": {"count": nonsel.count, "variables": list(nonsel.variables)},
        "warnings": warnings_out,
    }
    if args.rate is None:
        warnings_out.append(
            "no non-selection rate supplied: MUBNS indices only "
            "(MUB requires the rate Pr(S=0))"
        )

    report["linear"] = _linear_block(data, nonsel, args, warnings_out)
    if args.outcome_kind == "binary":
        report["probit"] = _probit_block(data, nonsel, args)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_report(report, out_dir / "report.json")
    print(_format_table(jsonify(report)))
    print(f"report written to {out_dir / 'report.json'}")
    return EXIT_CLEAN


_CSV_FIELDS = (
    "cell_id", "rho_y1", "rho_y2", "cond_cor_ya", "rho_1a",
    "gamma_y", "gamma_z1", "gamma_z2", "gamma_a",
    "coefficient", "phi", "metric", "value",
)


def cmd_simulate(args) -> int:
    cells = simstudy.full_grid() if args.full else simstudy.desk_grid()
    # Bayesian evaluation is the dominant cost: run it on a thinned sub-grid
    # (the low rho_y2 / low rho_1a populations).
    options = []
    for pop, _sel in cells:
        bayes = None
        if args.bayes and pop.rho_y2 == 0.2 and pop.rho_1a == 0.2:
            bayes = simstudy.BayesEval(n_draws=args.bayes_draws)
        options.append(simstudy.EvalOptions(bayes=bayes))

    progress = None
    if not args.quiet:
        def progress(done, total):
            print(f"\r{done}/{total} cells", end="", file=sys.stderr, flush=True)

    start = time.monotonic()
    results = simstudy.run_grid(cells, args.reps, args.seed, options, jobs=args.jobs,
                                progress=progress)
    elapsed = time.monotonic() - start
    if not args.quiet:
        print(file=sys.stderr)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "results.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        for result in results:
            for row in simstudy.iter_metric_rows(result):
                writer.writerow({k: _csv_value(row[k]) for k in _CSV_FIELDS})

    failed_cells = [r.cell_id for r in results if r.status == "failed"]
    manifest = {
        "kind": "simulation-manifest",
        "version": __version__,
        "seed": args.seed,
        "reps": args.reps,
        "grid": "full" if args.full else "desk",
        "n_cells": len(cells),
        "bayes": {"enabled": args.bayes, "draws": args.bayes_draws},
        "jobs": args.jobs,
        "wall_time_s": elapsed,
        "failed_cells": failed_cells,
        "cells": [
            {
                "cell_id": r.cell_id,
                "status": r.status,
                "n_failed": r.n_failed,
                "failures": r.failures,
            }
            for r in results
        ],
    }
    (out_dir / "manifest.json").write_text(json.dumps(jsonify(manifest), indent=2, sort_keys=True) + "\n")
    print(f"results written to {csv_path}")
    if failed_cells:
        print(f"{len(failed_cells)} cells failed (see manifest)", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_CLEAN


def _csv_value(value):
    if isinstance(value, float):
        return repr(value)
    return value


_CLI_ERRORS = (
    DataError,
    MomentConsistencyError,
    WeakProxyError,
    ConvergenceError,
    UnstableDrawsError,
    OSError,
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "analyze":
            return cmd_analyze(args)
        return cmd_simulate(args)
    except _CLI_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
