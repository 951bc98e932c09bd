import logging

import pytest

from backend.app.logging_config import JsonFormatter


@pytest.fixture(autouse=True)
def _drop_cli_log_handlers():
    """``main`` binds a JSON handler to the captured stderr; unbind it after each test."""
    yield
    root = logging.getLogger()
    for handler in [handler for handler in root.handlers if isinstance(handler.formatter, JsonFormatter)]:
        root.removeHandler(handler)
    root.__dict__.pop("_clipgcd_configured", None)
