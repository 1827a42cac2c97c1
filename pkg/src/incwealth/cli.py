"""Batch command-line interface for the pipeline stages."""

from __future__ import annotations

import argparse
import sys

from .data import RunConfig
from .pipeline import (
    Pipeline,
    StageError,
    cmd_bvar,
    cmd_dependence,
    cmd_fit_marginals,
    cmd_report,
    cmd_simulate,
    generate_synthetic,
)

COMMANDS = {
    "fit-marginals": cmd_fit_marginals,
    "dependence": cmd_dependence,
    "bvar": cmd_bvar,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="incwealth",
        description="Fit marginals, infer dependence, estimate policy shocks and run the household microsimulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    names = ["synth", *COMMANDS]
    for name in names:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--country", default=None, help="restrict to one country code")
        p.add_argument("--force", action="store_true", help="ignore cached stage artifacts")
        p.add_argument("--threads", type=int, default=1, help="parallel workers across countries")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig.from_yaml(args.config)
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        config.seed = args.seed

    try:
        if args.command == "synth":
            truth = generate_synthetic(config)
            print(f"synthetic fixture written under {config.data_dir} ({len(truth['countries'])} countries)")
            return 0
        countries = [args.country] if args.country else None
        results = COMMANDS[args.command](
            config, force=args.force, threads=args.threads, countries=countries
        )
        for r in results:
            status = "cached" if r.cached else f"{r.wall_time:.1f}s"
            print(f"{r.stage}: {status}")
        return 0
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
