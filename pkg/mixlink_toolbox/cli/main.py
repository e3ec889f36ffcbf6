import argparse
import logging
import sys
from typing import Optional, Sequence

from pydantic import BaseModel

from mixlink_toolbox import __version__
from mixlink_toolbox.cli import commands
from mixlink_toolbox.cli.config import RunConfig, load_config, validate_section
from mixlink_toolbox.errors import ConfigError
from mixlink_toolbox.training.config import DEFAULT_DROPOUT

logger = logging.getLogger(__name__)

COMMANDS = ["describe", "count-params", "verify-topology", "gradcheck", "train-toy"]


def _arch_name(value: str) -> str:
    return f"arch{value}" if value.isdigit() else value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Run configuration (.json or .toml).")
    common.add_argument("--output", help="Write the report to this file instead of stdout.")
    common.add_argument("--format", choices=["json", "csv", "table"], help="Report format.")
    common.add_argument("--seed", type=int, help="Seed of the command's random draws.")
    common.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default: WARNING).",
    )

    parser = argparse.ArgumentParser(
        prog="mixlink",
        description="Build, describe, verify, gradcheck and train mixed link networks.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    describe = sub.add_parser("describe", parents=[common], help="Stage widths and sizes.")
    describe.add_argument("--preset", help="Named network, e.g. mixnet-105.")

    count = sub.add_parser("count-params", parents=[common], help="Parameter and FLOP report.")
    count.add_argument("--preset", help="Named network, e.g. mixnet-100.")
    count_mode = count.add_mutually_exclusive_group()
    count_mode.add_argument("--grid", action="store_true", help="Sweep the (m, theta) grid.")
    count_mode.add_argument(
        "--arch-table",
        action="store_true",
        help="Compare the four representative architectures at matched depth.",
    )
    count_mode.add_argument("--by-stage", action="store_true", help="Sum the report per stage.")

    verify = sub.add_parser("verify-topology", parents=[common], help="Topology equivalence suites.")
    verify.add_argument("--suite", action="append", help="Suite to run (repeatable).")
    verify.add_argument("--arch", action="append", type=_arch_name, help="Reduction arch (1-3).")
    verify.add_argument("--trials", type=int, help="Trials per suite.")
    verify.add_argument(
        "--inject-offset-bug",
        action="store_true",
        help="Run against an off-by-one inner link offset.",
    )

    grad = sub.add_parser("gradcheck", parents=[common], help="Finite-difference gradient checks.")
    grad.add_argument("--op", action="append", help="Case to check (repeatable).")
    grad.add_argument("--trials", type=int, help="Seeds per case.")
    grad.add_argument("--dtype", choices=["64bit", "32bit"], help="Element precision.")

    train = sub.add_parser("train-toy", parents=[common], help="Toy-scale training.")
    train.add_argument("--ablate", choices=["position", "k2", "arch"], help="Run an ablation.")
    train.add_argument("--epochs", type=int, help="Number of epochs.")
    train.add_argument(
        "--dropout",
        type=float,
        nargs="?",
        const=DEFAULT_DROPOUT,
        help=f"Dropout rate after every non-stem convolution ({DEFAULT_DROPOUT} when given without a value).",
    )
    train.add_argument("--plot", help="Save the accuracy curves to this PNG.")
    train.add_argument("--save-weights", help="Save the final weights to this .npz file.")
    return parser


def _override(section: BaseModel, key: str, **values) -> BaseModel:
    """A re-validated copy of a config section with the given non-None values replaced."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return section
    return validate_section(type(section), {**section.model_dump(), **values}, key=key)


def apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    """Command-line flags take precedence over the configuration file."""
    updates = {
        "output": _override(config.output, "output", path=args.output, format=args.format)
    }
    if args.command in ("describe", "count-params") and args.preset is not None:
        network = config.network.model_dump(exclude={"depth", "blocks"})
        updates["network"] = validate_section(
            type(config.network), {**network, "preset": args.preset}, key="network"
        )
    elif args.command == "verify-topology":
        updates["verify"] = _override(
            config.verify,
            "verify",
            suites=args.suite,
            archs=args.arch,
            trials=args.trials,
            seed=args.seed,
            inject_offset_bug=args.inject_offset_bug or None,
        )
    elif args.command == "gradcheck":
        updates["gradcheck"] = _override(
            config.gradcheck,
            "gradcheck",
            ops=args.op,
            trials=args.trials,
            dtype=args.dtype,
            seed=args.seed,
        )
    elif args.command == "train-toy":
        updates["train"] = _override(
            config.train,
            "train",
            ablate=args.ablate,
            epochs=args.epochs,
            dropout=args.dropout,
            plot=args.plot,
            save_weights=args.save_weights,
            seed=args.seed,
        )
    return config.model_copy(update=updates)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Entry point of the ``mixlink`` command.

    Returns
    -------
    int
        0 on success, 1 when a verification, gradient check or training run
        fails, 2 for usage and configuration errors.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config) if args.config else RunConfig()
        config = apply_overrides(config, args)
        if args.command == "describe":
            return commands.cmd_describe(config)
        elif args.command == "count-params":
            return commands.cmd_count_params(
                config, grid=args.grid, arch_table=args.arch_table, by_stage=args.by_stage
            )
        elif args.command == "verify-topology":
            return commands.cmd_verify_topology(config)
        elif args.command == "gradcheck":
            return commands.cmd_gradcheck(config)
        elif args.command == "train-toy":
            return commands.cmd_train_toy(config)
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    parser.error(f"Unknown command {args.command}, choose from {COMMANDS}")


if __name__ == "__main__":
    sys.exit(main())
