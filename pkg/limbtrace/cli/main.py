"""
Command-line entry point.

    limbtrace generate  --config run.json
    limbtrace train     --config run.json --model hob
    limbtrace predict   --config run.json --cv-group 2
    limbtrace baseline  --config run.json
    limbtrace evaluate  --config run.json --out runs/reports
    limbtrace render    --config run.json --sample s00012
    limbtrace all       --config run.json --seed 3

Exit codes: 0 success, 2 invalid input or configuration, 3 training
divergence, 4 missing or unreadable files.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pydantic
import torch

from limbtrace.cli import commands
from limbtrace.core.config import settings
from limbtrace.core.exceptions import DivergenceDetected, StorageError, ValidationError
from limbtrace.core.logging import configure_logging
from limbtrace.schemas.config import ModelName, RunConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DIVERGED = 3
EXIT_STORAGE = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=settings.PROJECT_NAME,
        description="Regress occluded branch centerlines and benchmark them against segmentation + curve fitting.",
    )
    parser.add_argument("--log-level", default=None, help="Overrides LOG_LEVEL.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        command = sub.add_parser(name, help=help_text)
        command.add_argument("--config", type=Path, default=None, help="JSON run configuration.")
        command.add_argument("--seed", type=int, default=None, help="Derive every named seed from this value.")
        command.add_argument("--cv-group", type=int, default=None, help="Held-out cross-validation group.")
        command.add_argument("--out", type=Path, default=None, help="Output location override.")
        return command

    add("generate", "Render the synthetic dataset and its manifest.")
    train = add("train", "Train one model on every group except the held-out one.")
    train.add_argument("--model", type=ModelName, choices=list(ModelName), required=True)
    add("predict", "Write regressor predictions for the held-out group.")
    add("baseline", "Write curve-fitting baseline predictions for the held-out group.")
    add("evaluate", "Score all methods on the held-out group and write reports.")
    render = add("render", "Draw ground truth and stored predictions of one sample.")
    render.add_argument("--sample", required=True, help="Sample id, e.g. s00012.")
    add("all", "generate, train all models, evaluate.")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    """RunConfig from --config plus the --seed / --cv-group / --out overrides."""
    config = RunConfig.from_file(args.config, {"seed": args.seed, "cv_group": args.cv_group})
    if args.out is not None and args.command not in ("render", "generate"):
        config = config.model_copy(update={"paths": config.paths.model_copy(update={"report_dir": args.out})})
    if args.out is not None and args.command == "generate":
        config = config.model_copy(update={"paths": config.paths.model_copy(update={"dataset_root": args.out})})
    return config


def run(args: argparse.Namespace) -> None:
    config = load_config(args)
    if args.command == "generate":
        commands.cmd_generate(config)
    elif args.command == "train":
        commands.cmd_train(config, args.model)
    elif args.command == "predict":
        commands.cmd_predict(config)
    elif args.command == "baseline":
        commands.cmd_baseline(config)
    elif args.command == "evaluate":
        commands.cmd_evaluate(config)
    elif args.command == "render":
        commands.cmd_render(config, args.sample, args.out)
    elif args.command == "all":
        commands.cmd_all(config)


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run the command and map failures to exit codes."""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    torch.set_num_threads(settings.TORCH_THREADS)
    try:
        run(args)
    except (ValidationError, pydantic.ValidationError) as exc:
        logger.error("Invalid input: %s", exc)
        return EXIT_INVALID
    except DivergenceDetected as exc:
        logger.error("Training diverged at epoch %s: %s", exc.epoch, exc)
        return EXIT_DIVERGED
    except (StorageError, OSError) as exc:
        logger.error("I/O failure: %s", exc)
        return EXIT_STORAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
