from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Optional

from backend.app.logging_config import log_event

CONFIG_ERROR_CODES = {"CONFIG_ERROR", "BAD_ARGUMENT"}


@dataclass(eq=False)
class GcdError(Exception):
    code: str
    message: str
    stage: str = ""

    def __str__(self) -> str:
        prefix = f"[{self.stage}] " if self.stage else ""
        return f"{prefix}{self.code}: {self.message}"


class TrainingDiverged(GcdError):
    """Raised when the head-training loss stops being finite."""

    def __init__(self, message: str, trace: Optional[List[float]] = None, stage: str = ""):
        super().__init__(code="DIVERGED", message=message, stage=stage)
        self.trace: List[float] = list(trace or [])


def error_payload(err: GcdError) -> Dict[str, Any]:
    return {
        "error": err.message,
        "code": err.code,
        "stage": err.stage,
    }


def exit_code_for(err: GcdError) -> int:
    return 2 if err.code in CONFIG_ERROR_CODES else 1


@contextmanager
def stage_guard(stage: str) -> Iterator[None]:
    """Tag errors escaping a pipeline stage with the stage name."""
    try:
        yield
    except GcdError as exc:
        if not exc.stage:
            exc.stage = stage
        raise
    except Exception as exc:
        raise GcdError(code="STAGE_FAILED", message=f"{type(exc).__name__}: {exc}", stage=stage) from exc


def report_cli_error(logger: logging.Logger, err: GcdError) -> str:
    log_event(
        logger,
        logging.ERROR,
        "command_failed",
        **error_payload(err),
    )
    return str(err)
