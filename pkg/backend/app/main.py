from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from backend.app.commands.module_commands import register_module_commands
from backend.app.commands.pipeline_commands import register_pipeline_commands
from backend.app.error_handlers import GcdError, exit_code_for, report_cli_error, stage_guard
from backend.app.logging_config import configure_logging, get_logger
from backend.app.provenance import resolve_app_version

ROOT_DIR = Path(__file__).resolve().parents[2]
LOGGER = get_logger("clipgcd.cli")


def load_environment(root_dir: Path = ROOT_DIR) -> None:
    for parent in [root_dir, *root_dir.parents]:
        env_file = parent / ".env"
        if env_file.exists():
            load_dotenv(env_file)
            break


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clipgcd",
        description="Category discovery over precomputed image/text embeddings.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {resolve_app_version(ROOT_DIR)}")
    parser.add_argument("--log-level", help="overrides CLIPGCD_LOG_LEVEL (default INFO)")
    subparsers = parser.add_subparsers(dest="command", required=True)
    register_module_commands(subparsers)
    register_pipeline_commands(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_environment()
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, sys.stderr)
    try:
        with stage_guard(args.stage):
            args.handler(args)
    except GcdError as err:
        print(report_cli_error(LOGGER, err), file=sys.stderr)
        return exit_code_for(err)
    return 0


if __name__ == "__main__":
    sys.exit(main())
