"""Command-line entry point: train / eval / baseline / plotdata / validate."""

import argparse
import json
import logging
import sys

from . import harness
from .config import load_config


def _add_config_arg(p):
    p.add_argument("--config", required=True, help="experiment config (TOML or JSON)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="leohap",
        description="Satellite-HAP-ground downlink simulator and trainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the training loop")
    _add_config_arg(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--tuner", choices=["none", "scripted", "llm"], default=None)
    p.add_argument("--tune-interval", type=int, default=None)
    p.add_argument("--tune-window", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-trace", action="store_true",
                   help="skip the per-step JSONL log")

    p = sub.add_parser("eval", help="evaluate a checkpoint deterministically")
    _add_config_arg(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("baseline", help="run a heuristic baseline policy")
    _add_config_arg(p)
    p.add_argument("--name", required=True,
                   choices=sorted(harness.BASELINE_TAGS))
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("plotdata", help="export plot-ready CSV files")
    p.add_argument("--from", dest="from_dir", required=True)
    p.add_argument("--out", default=None)

    p = sub.add_parser("validate", help="audit a step trace for violations")
    p.add_argument("--trace", required=True)

    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            cfg = load_config(args.config, seed=args.seed,
                              episodes=args.episodes, tuner_mode=args.tuner,
                              tune_interval=args.tune_interval,
                              tune_window=args.tune_window)
            result = harness.run_training(cfg, args.out,
                                          trace=not args.no_trace)
            print(json.dumps({"episodes_csv": result["episodes_csv"],
                              "checkpoint": result["checkpoint"]}))
        elif args.command == "eval":
            cfg = load_config(args.config, seed=args.seed)
            summary = harness.run_eval(cfg, args.checkpoint,
                                       episodes=args.episodes,
                                       out_dir=args.out)
            print(json.dumps(summary, sort_keys=True))
        elif args.command == "baseline":
            cfg = load_config(args.config, seed=args.seed)
            summary = harness.run_baseline(cfg, args.name,
                                           episodes=args.episodes,
                                           out_dir=args.out)
            print(json.dumps(summary, sort_keys=True))
        elif args.command == "plotdata":
            paths = harness.emit_plot_data(args.from_dir, args.out)
            print(json.dumps(paths))
        elif args.command == "validate":
            violations = harness.validate_trace(args.trace)
            for v in violations:
                print(v)
            print(f"{len(violations)} violation(s)")
            return 1 if violations else 0
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
