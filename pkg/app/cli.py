"""
Command-line entry point.

Usage:
    bmc-lab clt configs/subcritical.toml --seed 7 --threads 4 --out results/
    bmc-lab regimes --config configs/sweep.toml
"""

import argparse
import sys
from typing import Optional, Sequence

from loguru import logger

from app.core.config import settings
from app.core.exceptions import BmcError, BudgetExceededError, ConfigError
from app.core.logging import setup_logging
from app.models.enums import Subcommand
from app.schemas.experiment import ExperimentConfig
from app.services.experiment_service import experiment_service


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bmc-lab",
        description="Simulate bifurcating Markov chains on the binary tree and check their limit theorems.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.APP_VERSION}")
    parser.add_argument("subcommand", choices=[s.value for s in Subcommand])
    parser.add_argument("config_path", nargs="?", help="experiment file (TOML)")
    parser.add_argument("--config", dest="config_flag", help="experiment file (TOML)")
    parser.add_argument("--seed", type=int, help="override experiment.seed")
    parser.add_argument("--threads", type=int, help="override experiment.threads")
    parser.add_argument("--out", help="output directory (default: output.dir, then OUTPUT_DIR)")
    parser.add_argument("--log-file", action="store_true", help="also write rotating log files")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    path = args.config_flag or args.config_path
    if path is None:
        raise ConfigError("No experiment file given; pass it as an argument or with --config")
    if args.config_flag and args.config_path and args.config_flag != args.config_path:
        raise ConfigError("Two different experiment files given")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        raise ConfigError("--seed must be a 64-bit unsigned integer")
    if args.threads is not None and args.threads < 1:
        raise ConfigError("--threads must be at least 1")
    config = ExperimentConfig.from_toml(path)
    return config.with_overrides(seed=args.seed, threads=args.threads, out=args.out)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(file_logging=args.log_file, level="DEBUG" if args.verbose else None)

    try:
        config = load_config(args)
        result = experiment_service.run(Subcommand(args.subcommand), config)
    except BudgetExceededError as e:
        logger.error(f"{e.message} ({e.completed} replicate(s) completed); partial output written")
        return e.exit_code
    except BmcError as e:
        logger.error(e.message if e.detail is None else f"{e.message}: {e.detail}")
        return e.exit_code
    except ValueError as e:
        logger.error(str(e))
        return ConfigError.exit_code

    for row in result.rows:
        status = {True: "ok", False: "FAIL", None: "-"}[row.get("pass")]
        print(f"{row['statistic']:<32} {row['value']!s:<24} {status}")
    print(f"summary: {result.summary_path}")
    if result.detail_path is not None:
        print(f"detail:  {result.detail_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
