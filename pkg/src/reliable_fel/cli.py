"""Command-line entry point: ``reliable-fel {gen-data,train,eval,ablate}``.

Every command prints one JSON object on stdout when it succeeds. On failure it
prints a single-line JSON object ``{"error": <type>, "message": <text>}`` on
stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_config
from .datagen import DatasetSpec, generate_dataset, save_dataset
from .exceptions import CheckpointError, ConfigError, DataError, NumericError, ShapeError
from .harness import CHECKPOINT_NAME, DEFAULT_SWEEPS, ablate, evaluate, train

EXIT_CODES = ((ConfigError, 2), (CheckpointError, 3), (OSError, 3), (ShapeError, 4),
              (DataError, 4), (NumericError, 5))


def _gen_data(args):
    spec = load_config(args.spec, DatasetSpec)
    dataset = generate_dataset(spec)
    save_dataset(dataset, args.out, spec)
    return {"out": str(args.out), "samples": len(dataset), "n_classes": spec.n_classes}


def _train(args):
    config = load_config(args.config)
    out = args.out or config.output_dir
    _, record = train(config, out)
    return {"checkpoint": record.checkpoint, "record": str(Path(out) / "run_record.json"),
            "accuracy": record.metrics["accuracy"], "config_hash": record.config_hash}


def _eval(args):
    config = load_config(args.config)
    out = args.out or config.output_dir
    report = evaluate(config, args.ckpt, out, split=args.split)
    return {"report": str(Path(out) / "eval_report.json"), "accuracy": report.accuracy,
            "macro_f1": report.macro_f1}


def _ablate(args):
    config = load_config(args.config)
    out = args.out or config.output_dir
    rows = ablate(config, args.sweep, out)
    failed = sum(r["status"] != "ok" for r in rows)
    return {"csv": str(Path(out) / f"ablation_{args.sweep}.csv"), "cells": len(rows),
            "failed": failed}


class _Parser(argparse.ArgumentParser):
    """Usage errors follow the same one-line JSON convention as runtime errors."""

    def error(self, message):
        print(json.dumps({"error": "UsageError", "message": message}), file=sys.stderr)
        raise SystemExit(2)


def build_parser():
    parser = _Parser(prog="reliable-fel", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    p.add_argument("--spec", required=True, help="key = value dataset spec file")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=_gen_data)

    p = sub.add_parser("train", help="train, evaluate and write a checkpoint plus RunRecord")
    p.add_argument("--config", required=True)
    p.add_argument("--out", type=Path, help="output directory (default: config output_dir)")
    p.set_defaults(func=_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint; writes EvalReport and confusion CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--ckpt", required=True, help=f"checkpoint file, e.g. runs/{CHECKPOINT_NAME}")
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=_eval)

    p = sub.add_parser("ablate", help="run an ablation sweep into a CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--sweep", required=True, choices=sorted(DEFAULT_SWEEPS))
    p.add_argument("--out", type=Path)
    p.set_defaults(func=_ablate)
    return parser


def _exit_code(exc):
    for kind, code in EXIT_CODES:
        if isinstance(exc, kind):
            return code
    return 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except Exception as exc:
        message = " ".join(str(exc).split())
        print(json.dumps({"error": type(exc).__name__, "message": message}), file=sys.stderr)
        return _exit_code(exc)
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
