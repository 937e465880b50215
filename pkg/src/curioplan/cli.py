"""Command-line entry point: explore, train, eval, diagnose."""

from __future__ import annotations

import argparse
import json
import sys

from .harness import METHODS, cmd_diagnose, cmd_eval, cmd_explore, cmd_train, load_config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curioplan",
        description="Goal-conditioned offline planning from curious exploration.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override output directory")

    p = sub.add_parser("explore", help="curious exploration: buffer + dynamics model")
    common(p)

    p = sub.add_parser("train", help="offline goal-conditioned value learning")
    common(p)
    p.add_argument("--buffer", default=None, help="replay buffer path (defaults to <out>/buffer.grb)")
    p.add_argument("--resume", default=None, help="agent directory to resume from")

    p = sub.add_parser("eval", help="evaluate a method over the goal set")
    common(p)
    p.add_argument("--method", choices=METHODS, default="mbp+agg")
    p.add_argument("--artifacts", default=None, help="directory with buffer/model/agent")
    p.add_argument("--episodes", type=int, default=None, help="episodes per goal")

    p = sub.add_parser("diagnose", help="value-landscape diagnostics on eval trajectories")
    common(p)
    p.add_argument("--method", choices=METHODS, default="mbp")
    p.add_argument("--artifacts", default=None)
    p.add_argument("--horizon", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = args.out or cfg.out_dir
        if args.command == "explore":
            artifacts = cmd_explore(cfg, seed=args.seed, out_dir=out)
            print(json.dumps(artifacts, indent=2))
        elif args.command == "train":
            buffer_path = args.buffer or f"{out}/buffer.grb"
            artifacts = cmd_train(
                cfg, buffer_path, seed=args.seed, out_dir=out, resume_dir=args.resume
            )
            print(json.dumps(artifacts, indent=2))
        elif args.command == "eval":
            report = cmd_eval(
                cfg,
                args.artifacts or out,
                args.method,
                seed=args.seed,
                out_dir=out,
                episodes_per_goal=args.episodes,
            )
            print(json.dumps(report.to_dict(), indent=2))
        elif args.command == "diagnose":
            result = cmd_diagnose(
                cfg,
                args.artifacts or out,
                method=args.method,
                seed=args.seed,
                out_dir=out,
                horizon=args.horizon,
            )
            print(json.dumps({"json": result["json"], "csv": result["csv"]}, indent=2))
    except (ValueError, FileNotFoundError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
