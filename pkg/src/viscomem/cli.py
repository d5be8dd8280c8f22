"""Command-line entry point."""
from __future__ import annotations

import argparse
import glob
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .config import ConfigError, load_scenario
from .runner import EXIT_CONFIG, run_scenario


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--strict", action="store_true", help="exit with status 4 if any monitored check fails")
    common.add_argument("--out", default="runs", help="output directory (default: runs)")
    common.add_argument("--seed", type=_seed, default=None, help="override the scenario seed")
    parser = argparse.ArgumentParser(prog="viscomem", description="Viscoelastic memory wave simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", parents=[common], help="run one scenario")
    p.add_argument("config")
    p = sub.add_parser("sweep", parents=[common], help="run every scenario matching a glob")
    p.add_argument("pattern")
    p.add_argument("--jobs", type=int, default=1)
    p = sub.add_parser("certify-kernel", parents=[common], help="certify the scenario kernel")
    p.add_argument("config")
    p = sub.add_parser("equilibria", parents=[common], help="compute stationary states")
    p.add_argument("config")
    return parser


def _run_one(path: str, out_dir: Path, args, experiment=None) -> int:
    try:
        sc = load_scenario(path)
    except ConfigError as exc:
        print(f"{path}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    result = run_scenario(sc, out_dir, strict=args.strict, seed=args.seed, experiment=experiment)
    status = "error" if "error" in result.summary else ("pass" if result.summary.get("passed") else "fail")
    print(f"{path}: {status} (exit {result.exit_code}) -> {out_dir}")
    if "error" in result.summary:
        print(f"{path}: {result.summary['error']}", file=sys.stderr)
    return result.exit_code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    if args.command == "run":
        return _run_one(args.config, out, args)
    if args.command == "certify-kernel":
        return _run_one(args.config, out, args, "kernel_certify")
    if args.command == "equilibria":
        return _run_one(args.config, out, args, "equilibria")
    paths = sorted(glob.glob(args.pattern))
    if not paths:
        print(f"no scenario matches {args.pattern!r}", file=sys.stderr)
        return EXIT_CONFIG
    if args.jobs < 1:
        print("--jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    with ThreadPoolExecutor(args.jobs) as pool:
        codes = list(pool.map(lambda p: _run_one(p, out / Path(p).stem, args), paths))
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
