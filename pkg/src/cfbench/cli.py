"""cfbench command line: ingest, stats, calibrate, backtest, compare, trace.

A thin client over the pipeline layer (the same functions the HTTP service
exposes). One command per invocation, no daemon state; flags override the
TOML config file given by --config or $CFBENCH_CONFIG. On failure a single
machine-parsable line goes to stderr and partial outputs are removed.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__, pipeline
from .config import apply_overrides, load_config
from .errors import CfbenchError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfbench",
        description="Car-following forecasting benchmark toolkit",
    )
    parser.add_argument("--version", action="version", version=f"cfbench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML config file (default: $CFBENCH_CONFIG)")
        p.add_argument("--data", nargs="+", help="dataset CSV path(s)")
        p.add_argument("--schema", help="schema preset name (canonical, ultra-av)")
        p.add_argument("--seed", type=int, help="run seed")
        p.add_argument("--out-dir", dest="out_dir", help="artifact directory")
        p.add_argument("--json", action="store_true", help="print the result as JSON")

    p = sub.add_parser("ingest", help="clean raw CSVs and emit the canonical dataset")
    common(p)
    p.add_argument("--out", help="output CSV path (default <out-dir>/cleaned.csv)")

    p = sub.add_parser("stats", help="summary statistics of the cleaned dataset")
    common(p)
    p.add_argument("--out", help="also write the table as CSV")

    p = sub.add_parser("calibrate", help="fit car-following parameters on the train split")
    common(p)
    p.add_argument("--convention", choices=["treiber2000", "paper"], help="sign convention")
    p.add_argument("--budget", type=int, help="objective evaluation budget")
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--out", help="parameter file path (default <out-dir>/idm_params.txt)")

    p = sub.add_parser("backtest", help="run the multi-window backtest for the model roster")
    common(p)
    p.add_argument("--context", type=int, help="context length in samples")
    p.add_argument("--horizon", type=int, help="horizon length in samples")
    p.add_argument("--stride", type=int, help="window stride (default horizon)")
    p.add_argument("--sliding", action="store_true", help="slide the context instead of expanding")
    p.add_argument("--n-samples", dest="n_samples", type=int, help="sample paths per forecast")
    p.add_argument("--models", help="comma-separated subset of configured models")
    p.add_argument("--ensemble", action="store_true", help="enable the covariate ensemble")
    p.add_argument("--train-fraction", dest="train_fraction", type=float)

    p = sub.add_parser("compare", help="rank backtest reports against a reference model")
    common(p)
    p.add_argument("--summary", help="backtest summary JSON (default <out-dir>/backtest_summary.json)")
    p.add_argument("--reference", help="model name to measure improvement against")
    p.add_argument("--out", help="also write the ranking as CSV")

    p = sub.add_parser("trace", help="context/truth/forecast rows for one window")
    common(p)
    p.add_argument("--model", required=True, help="model to trace")
    p.add_argument("--traj", help="trajectory id (default: first test trajectory)")
    p.add_argument("--window", type=int, default=0, help="window index within the trajectory")
    p.add_argument("--context", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--out", help="trace CSV path (default <out-dir>/trace.csv)")

    return parser


def _config_from_args(args) -> "pipeline.RunConfig":
    cfg = load_config(args.config)
    overrides = {}
    for key in (
        "data",
        "schema",
        "seed",
        "out_dir",
        "train_fraction",
        "context",
        "horizon",
        "stride",
        "n_samples",
        "models",
        "convention",
    ):
        if hasattr(args, key):
            overrides[key] = getattr(args, key)
    if getattr(args, "sliding", False):
        overrides["expanding"] = False
    if getattr(args, "ensemble", False):
        overrides["ensemble"] = True
    return apply_overrides(cfg, **overrides)


def _print_stats_table(result) -> None:
    print(f"{'variable':<10}{'mean':>12}{'std':>12}{'min':>12}{'max':>12}")
    for row in result["variables"]:
        print(
            f"{row['variable']:<10}{row['mean']:>12.4f}{row['std']:>12.4f}"
            f"{row['min']:>12.4f}{row['max']:>12.4f}"
        )
    print(f"records: {result['n_records']}  trajectories: {result['n_trajectories']}")


def _print_compare_table(result) -> None:
    header = f"{'model':<20}{'mean_rmse':>12}{'std_rmse':>12}{'windows':>10}"
    if result["reference"]:
        header += f"  {'vs ' + result['reference']:>14}"
    print(header)
    for row in result["rows"]:
        line = (
            f"{row['model']:<20}{row['mean_rmse']:>12.4f}{row['std_rmse']:>12.4f}"
            f"{row['windows']:>10}"
        )
        if row["improvement_pct"] is not None:
            line += f"  {row['improvement_pct']:>13.2f}%"
        print(line)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.command == "ingest":
            result = pipeline.run_ingest(cfg, out_path=args.out)
            if not args.json:
                print(
                    f"wrote {result['artifacts'][0]}: {result['n_trajectories']} trajectories, "
                    f"{result['n_records']} records"
                )
        elif args.command == "stats":
            result = pipeline.run_stats(cfg, out_path=args.out)
            if not args.json:
                _print_stats_table(result)
        elif args.command == "calibrate":
            result = pipeline.run_calibrate(
                cfg, out_path=args.out, budget=args.budget, convention=args.convention
            )
            if not args.json:
                print(f"wrote {result['artifacts'][0]}")
                for key, value in result["params"].items():
                    print(f"  {key} = {value:.6g}")
                print(f"train RMSE: {result['train_rmse']:.4f} ({result['convention']})")
        elif args.command == "backtest":
            result = pipeline.run_backtest(cfg)
            if not args.json:
                for entry in result["reports"]:
                    print(
                        f"{entry['model']:<20} mean RMSE {entry['mean_rmse']:.4f} "
                        f"std {entry['std_rmse']:.4f} over {entry['windows']} windows"
                    )
                print(f"artifacts in {cfg.out_dir}")
        elif args.command == "compare":
            result = pipeline.run_compare(
                cfg, summary_path=args.summary, reference=args.reference, out_path=args.out
            )
            if not args.json:
                _print_compare_table(result)
        elif args.command == "trace":
            result = pipeline.run_trace(
                cfg,
                model_name=args.model,
                traj_id=args.traj,
                window_index=args.window,
                out_path=args.out,
            )
            if not args.json:
                print(
                    f"wrote {result['artifacts'][0]} ({result['n_rows']} rows, "
                    f"model {result['model']}, trajectory {result['traj_id']})"
                )
        else:  # pragma: no cover - argparse guards this
            raise CfbenchError(f"unknown command {args.command}")
        if args.json:
            print(json.dumps(result, indent=2, sort_keys=True))
        return 0
    except CfbenchError as exc:
        message = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
