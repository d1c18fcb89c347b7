"""Command line entry point: ``openset-ssl <stage> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import DependencyError, OpenSetError, ValidationError
from .pipeline import STAGE_ORDER, PipelineConfig, run_pipeline, run_stage, run_sweep


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON config file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", default="runs/default", help="working directory for artifacts")
    common.add_argument("--format", choices=("jsonl", "csv"), help="embedding store format")
    common.add_argument("--force", action="store_true", help="rerun even if artifacts are up to date")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="openset-ssl", description="Open-set semi-supervised pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGE_ORDER:
        p = sub.add_parser(name, parents=[common], help=f"run the {name} stage")
        if name == "gen-synth":
            p.add_argument("--input", help="ingest an existing store instead of generating one")
    sub.add_parser("run-all", parents=[common], help="run every stage in order")
    p = sub.add_parser("sweep", parents=[common], help="multi-seed grid")
    p.add_argument("--axis", choices=("contamination", "n_components"), default="contamination")
    return parser


def load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.format is not None:
        over["format"] = args.format
    if getattr(args, "input", None):
        over["input_store"] = args.input
    return cfg.with_overrides(**over) if over else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "run-all":
            run_pipeline(cfg, args.out, force=args.force)
        elif args.command == "sweep":
            rows = run_sweep(cfg, args.out, axis=args.axis)
            for r in rows:
                print(r)
        else:
            _, skipped = run_stage(args.command, cfg, args.out, force=args.force)
            print(f"[{args.command}] {'up to date, skipped' if skipped else 'done'}")
    except (ValidationError, DependencyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OpenSetError, RuntimeError, ArithmeticError, OSError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
