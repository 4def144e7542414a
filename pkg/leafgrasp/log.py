"""Logging setup for the command line."""

import logging
import os
from typing import Optional, Union

from rich.logging import RichHandler

from leafgrasp.exceptions import ConfigurationError

LOG_ENVIRONMENT_VARIABLE: str = "LEAFGRASP_LOG"
DEFAULT_LEVEL: int = logging.WARNING
FILE_FORMAT: str = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def resolve_level(level: Optional[Union[int, str]] = None) -> int:
    """Return a numeric level from a name, a number, ``LEAFGRASP_LOG`` or the default."""
    if level is None:
        level = os.environ.get(LOG_ENVIRONMENT_VARIABLE)
    if level is None or level == "":
        return DEFAULT_LEVEL
    if isinstance(level, int):
        return level
    if level.isdigit():
        return int(level)
    resolved = logging.getLevelName(level.upper())
    if not isinstance(resolved, int):
        raise ConfigurationError(f"unknown log level {level!r}")
    return resolved


def configure_logging(level: Optional[Union[int, str]] = None, log_file: Optional[str] = None) -> logging.Logger:
    """Attach a rich console handler, and optionally a timestamped file handler, to the package logger.

    Calling it again replaces the handlers installed by the previous call.
    """
    logger = logging.getLogger("leafgrasp")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    console = RichHandler(show_path=False, show_time=False)
    console.setLevel(resolve_level(level))
    logger.addHandler(console)
    logger.setLevel(console.level)

    if log_file is not None:
        file_handler = logging.FileHandler(log_file, mode="w", encoding="utf-8")
        file_handler.setLevel(logging.INFO)
        file_handler.setFormatter(logging.Formatter(FILE_FORMAT))
        logger.addHandler(file_handler)
        logger.setLevel(min(console.level, logging.INFO))

    logger.propagate = False
    return logger
