"""
Command line entry point: one subcommand per experiment kind.

    hartreelab convergence --config lattice.toml --out-dir results/

Exit status is 0 on success, 2 when the config or an input is invalid and 3
when a computation cannot be certified (drift, truncation). Failures are
written to standard error as one JSON record.
"""
import argparse
import json
import sys

from hartreelab import __version__
from hartreelab.api import emit_all, run_experiment
from hartreelab.config import load_config
from hartreelab.exceptions import HartreeLabError
from hartreelab.logger import configure, get_logger
from hartreelab.utils import get_hooks

logger = get_logger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hartreelab", description="Mean-field limit experiments for finite-mode boson systems."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="kind", required=True, metavar="KIND")
    for kind in get_hooks("experiment_kinds"):
        command = commands.add_parser(kind, help=f"run the {kind} experiment")
        command.add_argument("--config", required=True, help="experiment file (TOML)")
        command.add_argument("--seed", type=int, default=None, help="override the seed of the config")
        command.add_argument("--out-dir", default=None, help="override [output] dir")
        command.add_argument("--threads", type=int, default=None, help="worker threads (results do not depend on it)")
        command.add_argument(
            "--format", choices=sorted(get_hooks("table_writers")), default=None, help="override [output] format"
        )
        command.add_argument("--dry-run", action="store_true", help="validate the config and stop")
        command.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


def _fail(record: dict, code: int) -> int:
    sys.stderr.write(json.dumps(record, sort_keys=True, default=str) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure(args.verbose)
    try:
        config = load_config(args.config).with_overrides(
            seed=args.seed, out_dir=args.out_dir, threads=args.threads, fmt=args.format
        )
        if args.dry_run:
            sys.stdout.write(json.dumps(config.summary(), sort_keys=True) + "\n")
            return 0
        tables = run_experiment(config, args.kind)
        for path in emit_all(config, tables):
            sys.stdout.write(f"{path}\n")
    except HartreeLabError as exc:
        logger.debug("experiment failed", exc_info=True)
        return _fail(exc.to_record(), exc.exit_code)
    except OSError as exc:
        return _fail({"error": type(exc).__name__, "message": str(exc)}, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
