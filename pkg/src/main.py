"""Command-line entry point (``sctl``)."""

import argparse
import json
import logging
import sys
from pathlib import Path

from src.config import Settings
from src.errors import ToolkitError
from src.experiments import SUBCOMMANDS, ExperimentConfig, ExperimentRunner
from src.observability import configure_logging, setup_langsmith

logger = logging.getLogger(__name__)

_HELP = {
    "solve-nn": "train the value and gradient networks for a catalog problem",
    "solve-mdp": "value iteration on a truncated queueing MDP",
    "solve-mca": "Markov-chain approximation of a two-dimensional problem",
    "solve-1d": "closed-form threshold and value of the 1-D problem",
    "simulate-queue": "discounted cost of a scheduling policy in a queueing network",
    "simulate-diffusion": "discounted cost of a control policy in the diffusion model",
    "tune-lbp": "staged search for linear boundary policies or safety stocks",
    "compare": "region agreement (and optionally cost) of two control policies",
    "export-heatmap": "control-region heatmap CSV of a policy",
}


def build_parser(settings: Settings) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sctl",
        description="Drift-control approximation, benchmarks and simulators for singular control problems.",
        epilog="Environment: SCTL_OUTPUT_ROOT (artifact root), SCTL_WORKERS, SCTL_SEED, SCTL_LOG_LEVEL.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="SUBCOMMAND")
    for name in SUBCOMMANDS:
        cmd = sub.add_parser(name, help=_HELP[name], description=_HELP[name])
        cmd.add_argument(
            "--config",
            type=str,
            required=name != "solve-1d",
            help="experiment file (JSON5 or JSON)",
        )
        cmd.add_argument(
            "--seed",
            type=int,
            default=None,
            help=f"root seed; overrides the experiment file (default: file value, else {settings.seed})",
        )
        cmd.add_argument(
            "--workers",
            type=int,
            default=settings.workers,
            help=f"worker processes for replications (default: {settings.workers})",
        )
        cmd.add_argument(
            "--out",
            type=str,
            default=None,
            help=f"run directory (default: <SCTL_OUTPUT_ROOT={settings.output_root}>/<output_dir or subcommand>)",
        )
        cmd.add_argument(
            "--log-level",
            default=settings.log_level,
            choices=["CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG"],
            help="logging level",
        )
    return parser


def resolve_out_dir(args: argparse.Namespace, config: ExperimentConfig, settings: Settings) -> Path:
    if args.out:
        return Path(args.out)
    return Path(settings.output_root) / (config.output_dir or args.subcommand)


def main(argv: list[str] | None = None) -> int:
    """Main entry point. Returns 0 on success, 2 on toolkit errors, 1 otherwise."""
    settings = Settings()
    args = build_parser(settings).parse_args(argv)
    configure_logging(args.log_level)

    for problem in settings.validate():
        logger.warning(f"Settings: {problem}")
    setup_langsmith(
        api_key=settings.langsmith_api_key or None,
        project=settings.langsmith_project,
        tracing_enabled=settings.langsmith_tracing,
    )

    try:
        if args.config:
            config = ExperimentConfig.load(args.config)
        else:
            config = ExperimentConfig(seed=settings.seed)
    except ToolkitError as e:
        print(json.dumps(e.to_record(), sort_keys=True), file=sys.stderr)
        return 2
    if args.seed is None and not args.config:
        args.seed = settings.seed

    outcome = ExperimentRunner().run(
        args.subcommand,
        config,
        resolve_out_dir(args, config, settings),
        seed=args.seed,
        workers=args.workers,
    )
    if outcome.error is not None:
        print(json.dumps(outcome.error, sort_keys=True), file=sys.stderr)
        return outcome.status
    print(f"{args.subcommand}: results in {outcome.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
