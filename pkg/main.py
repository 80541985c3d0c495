import argparse
import logging
import sys
from typing import List, Optional

import structlog
from pydantic import ValidationError

from config.settings import Settings, settings

EXIT_PASS = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def configure_logging(level: str):
    logging.basicConfig(
        format="%(message)s",
        stream=sys.stderr,
        level=getattr(logging, level.upper(), logging.INFO)
    )

    structlog.configure(
        processors=[
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.add_log_level,
            structlog.processors.JSONRenderer()
        ],
        wrapper_class=structlog.make_filtering_bound_logger(getattr(logging, level.upper(), logging.INFO)),
        context_class=dict,
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=True,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pseudotor",
        description="Pseudotoric structure and minimal Lagrangian fibration on the flag variety F3",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Key/value file with PSEUDOTOR_* settings")
    common.add_argument("--seed", type=int, help="Random seed")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--height-mode", choices=["mobius", "symbol"], help="Base height function")

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("verify", parents=[common], help="Run the invariant suite and write report.json")

    fiber = commands.add_parser("fiber", parents=[common], help="Sample one torus fiber")
    fiber.add_argument("--level", type=float, required=True)
    fiber.add_argument("--c1", type=float, required=True)
    fiber.add_argument("--c2", type=float, required=True)
    fiber.add_argument("--res", type=int)
    fiber.add_argument("--loop-stride", type=int, default=1)

    moment = commands.add_parser("moment", parents=[common], help="Moment polygon of random flags")
    moment.add_argument("-n", type=int, default=1000)

    specialty = commands.add_parser("specialty", parents=[common], help="Phase statistics of the residue form")
    specialty.add_argument("--fibers", type=int, default=10)
    specialty.add_argument("--res", type=int, default=4)

    isotopy = commands.add_parser("isotopy", parents=[common], help="Transport a torus from F_1 to F_0")
    isotopy.add_argument("--level", type=float, required=True)
    isotopy.add_argument("--c1", type=float, required=True)
    isotopy.add_argument("--c2", type=float, required=True)
    isotopy.add_argument("--r1", type=float)
    isotopy.add_argument("--r2", type=float)
    isotopy.add_argument("--time", type=float)

    section = commands.add_parser("section", parents=[common], help="Divisor section and residue form at a flag")
    section.add_argument("--x", type=complex, nargs=3, required=True)
    section.add_argument("--y", type=complex, nargs=3, required=True)

    config = commands.add_parser("config", parents=[common], help="Show the run configuration")
    config.add_argument("--print-defaults", action="store_true")
    return parser


def load_config(args: argparse.Namespace) -> Settings:
    config = Settings(_env_file=args.config) if args.config else Settings()
    overrides = {
        "seed": args.seed,
        "output_dir": args.out,
        "height_mode": args.height_mode,
    }
    return config.model_copy(update={k: v for k, v in overrides.items() if v is not None})


def run(args: argparse.Namespace, config: Settings) -> int:
    from app.api import commands

    config = commands.configure(config)
    logger = structlog.get_logger()
    logger.info("command_started", command=args.command, seed=config.seed)

    if args.command == "config":
        print(Settings().print_defaults() if args.print_defaults else config.print_defaults())
        return EXIT_PASS
    if args.command == "verify":
        report = commands.cmd_verify(config)
        return EXIT_PASS if report.passed else EXIT_FAILURE
    if args.command == "fiber":
        commands.cmd_fiber(config, args.level, args.c1, args.c2, args.res, args.loop_stride)
    elif args.command == "moment":
        commands.cmd_moment(config, args.n)
    elif args.command == "specialty":
        report = commands.cmd_specialty(config, fibers=args.fibers, res=args.res)
        return EXIT_PASS if report.special else EXIT_FAILURE
    elif args.command == "isotopy":
        report = commands.cmd_isotopy(config, args.level, args.c1, args.c2, args.r1, args.r2, args.time)
        return EXIT_PASS if report.passed else EXIT_FAILURE
    elif args.command == "section":
        commands.cmd_section(config, args.x, args.y)
    return EXIT_PASS


def main(argv: Optional[List[str]] = None) -> int:
    from app.models.errors import DomainMismatch, LevelOutOfRange, PseudotoricError

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args)
    except ValidationError as e:
        configure_logging(settings.log_level)
        structlog.get_logger().error("usage_error", command=args.command, error=str(e))
        print(f"pseudotor: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    configure_logging(config.log_level)
    logger = structlog.get_logger()
    try:
        return run(args, config)
    except (ValidationError, LevelOutOfRange, DomainMismatch, ValueError) as e:
        logger.error("usage_error", command=args.command, error=str(e))
        print(f"pseudotor: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except PseudotoricError as e:
        logger.error("command_failed", command=args.command, error=str(e))
        print(f"pseudotor: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
