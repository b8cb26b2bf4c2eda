"""Logging setup for the command-line entry point."""
import logging
import sys
from typing import Optional

from app.core.config import settings


def configure_logging(level: Optional[str] = None, fmt: Optional[str] = None) -> None:
    """Install a single stderr handler on the ``app`` logger hierarchy.

    Library modules only create loggers; handlers are attached here, once.
    """
    root = logging.getLogger("app")
    for handler in list(root.handlers):
        root.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(fmt or settings.LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel((level or settings.LOG_LEVEL).upper())
    root.propagate = False
