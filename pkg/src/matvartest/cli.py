"""Command-line interface.

Five subcommands: `ind-test` runs the independence test on a CSV data
matrix, `corr-mtc` runs large-scale correlation testing with BH
control, `estimate` reports the thresholded quadratic-functional
estimates, `mc-critical` computes a Monte Carlo critical value, and
`simulate` executes a JSON experiment config and writes its report,
records, and figures.

Exit codes: 0 success, 2 usage (bad flags or parameter values), 3
defective input data or config, 4 numerical failure. Every failure
prints a single diagnostic line on stderr. All JSON artifacts carry a
top-level "schema": "v1" marker.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .covmodel import read_data_csv
from .errors import DataError, MatvarError, NumericalError, ParameterError
from .quadfunc import DELTA_DEFAULT, estimate_Ap, estimate_Bn
from .indtest import mc_critical, run_test
from .corrtest import (
    MtcResult,
    _tune_details,
    bh_threshold,
    clime_precision,
    corrected_stats,
    naive_stats,
    sandwich_stats,
)
from .simharness import ExperimentConfig, run_experiment


def _jdefault(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def _emit_json(payload: dict, path: str | None) -> None:
    text = json.dumps(payload, indent=2, default=_jdefault)
    if path is None or path == "-":
        sys.stdout.write(text + "\n")
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def _cmd_ind_test(args) -> int:
    x = read_data_csv(args.input)
    res = run_test(x, alpha=args.alpha, delta=args.delta, mode=args.mode,
                   mc_reps=args.mc_reps, seed=args.seed)
    _emit_json({"schema": "v1", **res.to_dict()}, args.output)
    return 0


def _cmd_corr_mtc(args) -> int:
    x = read_data_csv(args.input)
    lam = None
    if args.method == "sandwich":
        if args.lam is not None:
            pe = clime_precision(x, args.lam)
            stats = sandwich_stats(x, pe.gamma)
            lam = args.lam
        else:
            lam, _, stats, _ = _tune_details(x)
    elif args.method == "naive":
        stats = naive_stats(x)
    else:
        bn = estimate_Bn(x)
        if bn <= 0.0:
            raise DataError(
                "estimated correlation inflation is zero; corrected "
                "statistics are undefined for this data"
            )
        stats = corrected_stats(x, bn)
    t_hat, rej = bh_threshold(stats, args.alpha)
    res = MtcResult(statistics=stats, t_hat=t_hat, rejections=rej,
                    method=args.method, alpha=args.alpha, lam=lam)
    res.write_csv(args.output_prefix + ".csv")
    res.write_json(args.output_prefix + ".json")
    _emit_json({"schema": "v1", **res.summary_dict(),
                "csv": args.output_prefix + ".csv",
                "json": args.output_prefix + ".json"}, None)
    return 0


def _cmd_estimate(args) -> int:
    x = read_data_csv(args.input)
    est = estimate_Ap(x, delta=args.delta)
    _emit_json({"schema": "v1", **est.to_dict()}, args.output)
    return 0


def _cmd_mc_critical(args) -> int:
    val = mc_critical(args.n, args.p, args.M, args.alpha, args.seed,
                      delta=args.delta)
    _emit_json({
        "schema": "v1", "n": args.n, "p": args.p, "reps": args.M,
        "alpha": args.alpha, "seed": args.seed, "delta": args.delta,
        "critical_value": val,
    }, args.output)
    return 0


_SIM_OVERRIDES = ("n", "p", "reps", "alpha", "seed", "delta", "mode",
                  "mc_reps", "iid_lambda")


def _cmd_simulate(args) -> int:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise DataError("config must be a JSON object")
    # defaults < config file < explicit flags
    for key in _SIM_OVERRIDES:
        val = getattr(args, key)
        if val is not None:
            raw[key] = val
    if args.methods is not None:
        raw["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    config = ExperimentConfig.from_dict(raw)

    report = run_experiment(config, threads=args.threads)
    os.makedirs(args.outdir, exist_ok=True)
    json_path = os.path.join(args.outdir, "report.json")
    csv_path = os.path.join(args.outdir, "records.csv")
    report.write_json(json_path)
    report.write_records_csv(csv_path)
    artifacts = [json_path, csv_path]
    if not args.no_figures:
        from .figures import render_report

        artifacts.extend(render_report(report, args.outdir))
    _emit_json({"schema": "v1", "aggregates": report.aggregates,
                "wall_time_s": report.wall_time_s,
                "artifacts": artifacts}, None)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="matvartest",
        description="Independence testing and correlation screening for "
                    "high-dimensional data with correlated samples "
                    "(p x n CSV matrices, variables in rows).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pt = sub.add_parser("ind-test", help="test mutual independence of the "
                                         "sample columns")
    pt.add_argument("--input", required=True, help="CSV data matrix, "
                                                   "variables in rows")
    pt.add_argument("--alpha", type=float, default=0.05)
    pt.add_argument("--delta", type=float, default=DELTA_DEFAULT,
                    help="adaptive threshold multiplier")
    pt.add_argument("--mode", choices=("limiting", "monte-carlo"),
                    default="limiting", help="critical value source")
    pt.add_argument("--mc-reps", type=int, default=2000,
                    help="replications for monte-carlo calibration")
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("--output", default=None,
                    help="JSON result path (default: stdout)")
    pt.set_defaults(func=_cmd_ind_test)

    pm = sub.add_parser("corr-mtc", help="BH-controlled testing of all "
                                         "pairwise correlations")
    pm.add_argument("--input", required=True)
    pm.add_argument("--method", choices=("sandwich", "naive", "corrected"),
                    default="sandwich")
    pm.add_argument("--alpha", type=float, default=0.05,
                    help="false discovery rate target")
    pm.add_argument("--lam", type=float, default=None,
                    help="fixed precision-estimation level "
                         "(default: data-driven tuning)")
    pm.add_argument("--output-prefix", default="corr_mtc",
                    help="writes <prefix>.csv and <prefix>.json")
    pm.set_defaults(func=_cmd_corr_mtc)

    pe = sub.add_parser("estimate", help="thresholded covariance functional "
                                         "estimates")
    pe.add_argument("--input", required=True)
    pe.add_argument("--delta", type=float, default=DELTA_DEFAULT)
    pe.add_argument("--output", default=None)
    pe.set_defaults(func=_cmd_estimate)

    pc = sub.add_parser("mc-critical", help="Monte Carlo critical value for "
                                            "the independence test")
    pc.add_argument("--n", type=int, required=True, help="sample count")
    pc.add_argument("--p", type=int, required=True, help="variable count")
    pc.add_argument("--M", type=int, default=2000, help="replications")
    pc.add_argument("--alpha", type=float, default=0.05)
    pc.add_argument("--seed", type=int, default=0)
    pc.add_argument("--delta", type=float, default=DELTA_DEFAULT)
    pc.add_argument("--output", default=None)
    pc.set_defaults(func=_cmd_mc_critical)

    ps = sub.add_parser("simulate", help="run a JSON experiment config")
    ps.add_argument("--config", required=True, help="experiment JSON")
    ps.add_argument("--outdir", default="simulation",
                    help="directory for report, records, figures")
    ps.add_argument("--threads", type=int, default=1,
                    help="worker process cap")
    ps.add_argument("--no-figures", action="store_true",
                    help="skip figure rendering")
    for key in _SIM_OVERRIDES:
        flag = "--" + key.replace("_", "-")
        if key in ("n", "p", "reps", "seed", "mc_reps"):
            ps.add_argument(flag, type=int, default=None)
        elif key == "mode":
            ps.add_argument(flag, choices=("limiting", "monte-carlo"),
                            default=None)
        else:
            ps.add_argument(flag, type=float, default=None)
    ps.add_argument("--methods", default=None,
                    help="comma-separated mtc method list")
    ps.set_defaults(func=_cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"matvartest: usage error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"matvartest: data error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"matvartest: data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"matvartest: numerical error: {exc}", file=sys.stderr)
        return 4
    except MatvarError as exc:  # pragma: no cover - safety net
        print(f"matvartest: error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
