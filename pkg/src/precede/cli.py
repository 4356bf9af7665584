"""Command-line interface.

Commands: synth, augment, train, eval, gradcheck, sweep.  Each takes a
JSON or TOML config (unknown keys rejected) plus a few overriding flags,
writes artifacts under the output directory, and prints JSON log lines on
stdout.  Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric
divergence, 5 acceptance-check failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .config import ConfigError, RunConfig, load_config
from .gradcheck import run_tiny_gradcheck
from .solver import DivergenceError
from .spline import DomainError, InputError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_CHECK_FAILED = 5


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    if getattr(args, "threads", None) is not None:
        overrides["threads"] = args.threads
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON or TOML run configuration")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--threads", type=int, help="internal parallelism (deterministic reductions)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="precede",
        description="anomaly and precursor-of-anomaly detection on multivariate time series",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic benchmark dataset")
    _add_common(p)

    p = sub.add_parser("augment", help="implant self-supervised anomalies into a CSV")
    _add_common(p)
    p.add_argument("--data", required=True, help="input CSV (unlabeled or all-normal)")
    p.add_argument("--output", help="augmented CSV path")

    p = sub.add_parser("train", help="train a model on a labeled or augmented CSV")
    _add_common(p)
    p.add_argument("--data", help="training CSV (overrides config data_path)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled CSV")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--drop", type=float, default=0.0, choices=[0.0, 0.3, 0.5, 0.7],
                   help="randomly remove this fraction of observations per window")
    p.add_argument("--threshold", type=float, default=0.5)

    p = sub.add_parser("gradcheck", help="verify gradients against finite differences")
    _add_common(p)

    p = sub.add_parser("sweep", help="retrain while varying the precursor output length")
    _add_common(p)
    p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--test-data", required=True, help="evaluation CSV")
    p.add_argument("--p-values", default="1,5,10,15,20",
                   help="comma-separated output lengths")

    return parser


def _run(args) -> int:
    from . import pipeline

    cfg = _resolve_config(args)
    if args.command == "synth":
        meta = pipeline.cmd_synth(cfg)
        _emit({"command": "synth", **{k: meta[k] for k in ("train_path", "test_path", "anomaly_ratio")}})
    elif args.command == "augment":
        meta = pipeline.cmd_augment(cfg, args.data, args.output)
        _emit({"command": "augment", "output": meta["output"], "implant_ratio": meta["implant_ratio"]})
    elif args.command == "train":
        out = pipeline.cmd_train(cfg, data_path=args.data, log_fn=_emit)
        _emit({"command": "train", **out})
    elif args.command == "eval":
        metrics = pipeline.cmd_eval(cfg, args.checkpoint, args.data,
                                    drop=args.drop, threshold=args.threshold)
        _emit({"command": "eval", "drop": args.drop, **metrics})
    elif args.command == "gradcheck":
        report = run_tiny_gradcheck(seed=cfg.seed if cfg.seed else 7)
        _emit({"command": "gradcheck", "max_rel_err": report.max_rel_err,
               "tolerance": report.tolerance, "passed": report.passed,
               "per_group": report.per_group})
        print(report.summary())
        if not report.passed:
            return EXIT_CHECK_FAILED
    elif args.command == "sweep":
        p_values = [int(v) for v in args.p_values.split(",") if v.strip()]
        if not p_values:
            raise ConfigError("sweep needs at least one output length")
        rows = pipeline.cmd_sweep(cfg, p_values, args.data, args.test_data)
        _emit({"command": "sweep", "rows": [[p, f1] for p, f1 in rows]})
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except ConfigError as err:
        print(f"error: config: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, DomainError, FileNotFoundError, KeyError) as err:
        print(f"error: data: {err}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, FloatingPointError) as err:
        print(f"error: numeric: {err}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
