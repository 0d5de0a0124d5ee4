# Command-line entry point
# bci_hand/main.py
import argparse
import logging
import os
import sys
from typing import List, Optional

from bci_hand import __version__
from bci_hand.core.config import load_config, settings
from bci_hand.core.errors import BciHandError
from bci_hand.services.pipeline_service import STAGES, run_stage

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

logger = logging.getLogger("bci_hand")


def configure_logging(output_dir: Optional[str] = None):
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if output_dir:
        os.makedirs(output_dir, exist_ok=True)
        handlers.append(logging.FileHandler(os.path.join(output_dir, settings.LOG_FILE)))
    logging.basicConfig(level=settings.LOG_LEVEL, format=LOG_FORMAT, handlers=handlers, force=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=settings.APP_NAME,
        description="Wrist vs finger movement discrimination from EEG",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="stage", required=True)
    for stage in (*STAGES, "run-all"):
        sub = subparsers.add_parser(stage, help=f"run the {stage} stage")
        sub.add_argument("--config", help="JSON config file (flags override its keys)")
        sub.add_argument("--seed", type=int, help="top-level seed")
        sub.add_argument("--out", dest="output_dir", help="output directory")
        sub.add_argument("--dataset", dest="dataset_dir", help="dataset directory")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "output_dir": args.output_dir, "dataset_dir": args.dataset_dir}
    try:
        config = load_config(args.config, overrides)
    except BciHandError as e:
        configure_logging()
        logger.error(f"Configuration error: {e.detail}")
        return e.exit_code

    configure_logging(config.output_dir)
    try:
        outputs = run_stage(args.stage, config)
    except BciHandError as e:
        logger.error(f"{args.stage} failed: {e.detail}")
        return e.exit_code
    logger.info(f"{args.stage} wrote {len(outputs)} files to {config.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
