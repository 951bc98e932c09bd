from __future__ import annotations

import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from typing import IO, Any, Dict, Iterator, Optional


class JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        payload: Dict[str, Any] = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }

        structured_fields = getattr(record, "structured_fields", None)
        if isinstance(structured_fields, dict):
            payload.update(structured_fields)

        if record.exc_info:
            payload["exception"] = self.formatException(record.exc_info)

        return json.dumps(payload, ensure_ascii=False, default=str)


def configure_logging(level: Optional[str] = None, stream: Optional[IO[str]] = None) -> None:
    root = logging.getLogger()
    if getattr(root, "_clipgcd_configured", False) and level is None and stream is None:
        return

    level_name = (level or os.getenv("CLIPGCD_LOG_LEVEL", "INFO")).upper()
    resolved = getattr(logging, level_name, logging.INFO)

    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(JsonFormatter())

    root.handlers.clear()
    root.addHandler(handler)
    root.setLevel(resolved)
    root._clipgcd_configured = True  # type: ignore[attr-defined]


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)


def log_event(logger: logging.Logger, level: int, message: str, **fields: Any) -> None:
    logger.log(level, message, extra={"structured_fields": fields})


@contextmanager
def timed_stage(logger: logging.Logger, stage: str, **fields: Any) -> Iterator[None]:
    started = time.perf_counter()
    log_event(logger, logging.INFO, "stage_started", stage=stage, **fields)
    try:
        yield
    except Exception as exc:
        log_event(
            logger,
            logging.ERROR,
            "stage_failed",
            stage=stage,
            error=str(exc),
            duration_ms=round((time.perf_counter() - started) * 1000.0, 3),
            **fields,
        )
        raise
    log_event(
        logger,
        logging.INFO,
        "stage_finished",
        stage=stage,
        duration_ms=round((time.perf_counter() - started) * 1000.0, 3),
        **fields,
    )
