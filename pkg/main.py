# drlab: Derrida–Retaux numerical lab
# Exact iteration of the recursion X_{n+1} = (X_{n,1} + ... + X_{n,m} - 1)^+,
# critical-point diagnostics, open-path coupling checks and Monte Carlo probes.
#
# Usage:
#   python main.py pc --config runs/star2.cfg
#   python main.py iterate --config runs/star2.cfg --out out/iterate
#   python main.py exponent-sweep --config runs/sweep.cfg --workers 4
#   python main.py deviation --config runs/probe.cfg --seed 7

import argparse
import logging
import sys

from cli.commands import SUPPORTED_COMMANDS, exit_code, run_command
from cli.config import load_config
from dist_core.errors import ConfigurationError

LOG_FORMAT = "[%(name)s] %(message)s"


def setup_logging(verbose: bool):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drlab", description="Derrida–Retaux numerical lab")
    parser.add_argument("command", choices=SUPPORTED_COMMANDS, help="Experiment to run")
    parser.add_argument("--config", required=True, help="Config file (section.key = value lines)")
    parser.add_argument("--seed", type=int, help="Override mc.seed")
    parser.add_argument("--workers", type=int, help="Override mc.workers")
    parser.add_argument("--out", type=str, help="Override output.directory")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)

    try:
        config = load_config(args.config).with_overrides(args.seed, args.workers, args.out)
    except ConfigurationError as e:
        result = {
            "status": "error",
            "command": args.command,
            "message": "Invalid configuration",
            "error_type": type(e).__name__,
            "error_message": str(e),
        }
    else:
        result = run_command(args.command, config)

    status = result.get("status", "error")
    if status == "error":
        print(f"[ERROR] {args.command}: {result.get('error_message')}", file=sys.stderr)
    else:
        print(result.get("message", ""))
        if status == "fail":
            print(f"[FAIL] {args.command}", file=sys.stderr)
    return exit_code(result)


if __name__ == "__main__":
    sys.exit(main())
