"""Command-line entry point: run, sweep and compare experiments.

Progress goes to stderr; files under --out are the only machine-readable
output.  Exit codes: 0 success, 2 invalid config/flags, 3 I/O trouble,
1 anything unexpected.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .harness import (
    ConfigError,
    ExperimentConfig,
    compare_methods,
    run_experiment,
    run_sweep,
)

__all__ = ["main"]


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_config(path: str) -> dict:
    with open(path) as f:  # missing file surfaces as OSError -> exit 3
        text = f.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top-level JSON value must be an object")
    return raw


def _out_dir(args) -> str:
    return args.out or os.environ.get("DPM_OUT_DIR") or "dpm_out"


def _build_config(args) -> ExperimentConfig:
    raw = _load_config(args.config)
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "method", None) is not None:
        method = args.method.replace("-", "_")
        if method == "sp" and "t_rate" in raw:
            _progress(
                "warning: --method sp overrides config t_rate; releases disabled"
            )
        raw["method"] = method
    return ExperimentConfig.from_dict(raw)


def cmd_run(args) -> int:
    cfg = _build_config(args)
    out = _out_dir(args)
    _progress(f"run: method={cfg.method} seed={cfg.seed} -> {out}")
    record = run_experiment(cfg, out_dir=out)
    _progress(
        f"done: acc={record.final_accuracy:.4f} "
        f"zeroed={record.final_zeroed_fraction:.3f} "
        f"releases={record.total_releases}"
    )
    return 0


def _parse_values(axis: str, text: str):
    items = [v for v in (s.strip() for s in text.split(",")) if v]
    if not items:
        raise ConfigError("--values must list at least one value")
    try:
        if axis == "N":
            return [int(v) for v in items]
        return [float(v) for v in items]
    except ValueError as e:
        raise ConfigError(f"bad --values entry: {e}") from None


def cmd_sweep(args) -> int:
    values = _parse_values(args.axis, args.values)
    cfg = _build_config(args)
    out = _out_dir(args)
    _progress(f"sweep: axis={args.axis} values={values} jobs={args.jobs} -> {out}")
    rows = run_sweep(cfg, args.axis, values, out_dir=out, jobs=args.jobs)
    for row in rows:
        if row.get("error"):
            _progress(f"  {args.axis}={row['value']}: FAILED ({row['error']})")
        else:
            _progress(f"  {args.axis}={row['value']}: acc={row['final_accuracy']:.4f}")
    return 0


def cmd_compare(args) -> int:
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError as e:
        raise ConfigError(f"bad --seeds entry: {e}") from None
    if len(seeds) < 2:
        raise ConfigError("--seeds must list at least 2 seeds")
    cfg = _build_config(args)  # validate everything before any run starts
    out = _out_dir(args)
    _progress(f"compare: seeds={seeds} jobs={args.jobs} -> {out}")
    summary = compare_methods(cfg, seeds, out_dir=out, jobs=args.jobs)
    for method, stats in summary["methods"].items():
        _progress(
            f"  {method}: acc={stats['accuracy_mean']:.4f}"
            f"±{stats['accuracy_std']:.4f} "
            f"releases={stats['total_releases']}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpm",
        description="Decay-pruning experiments: train, sweep, compare.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", default=None,
                       help="output directory (default: $DPM_OUT_DIR or ./dpm_out)")

    p_run = sub.add_parser("run", help="single experiment run")
    common(p_run)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--method", choices=["single", "sp", "sp-sr"], default=None)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="one run per hyperparameter value")
    common(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=["N", "t-rate", "t-len"])
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated list, e.g. 3,5,8,16")
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_cmp = sub.add_parser("compare", help="single vs sp vs sp_sr over seeds")
    common(p_cmp)
    p_cmp.add_argument("--seeds", required=True,
                       help="comma-separated seed list, e.g. 1,2,3")
    p_cmp.add_argument("--jobs", type=int, default=1)
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3
    except Exception as e:  # pragma: no cover - safety net
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
