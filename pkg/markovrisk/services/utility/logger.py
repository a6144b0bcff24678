"""
Logging setup for markovrisk.

Levels as used by the services:
- DEBUG: per-trial and per-grid-point detail
- INFO: experiment progress, files written
- WARNING: handled oddities such as an infinite mean loss
- ERROR: a command or request failed

Records go to stderr; `run` and `priors` print CSV on stdout.

Usage:
    logger = logging.getLogger(__name__)
    log_with_context(logger, logging.INFO, "Grid point done", k=6, n=10000, mean_loss=1.2e-4)
"""

import logging
import math
import sys
from typing import Any, Iterable, Optional, TextIO

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

# Chatty dependencies held at WARNING
QUIET_LOGGERS = ("matplotlib", "PIL", "werkzeug")

_handler: Optional[logging.Handler] = None


def setup_logging(
    debug: bool = False,
    stream: Optional[TextIO] = None,
    quiet: Iterable[str] = QUIET_LOGGERS,
    force: bool = False,
) -> logging.Handler:
    """
    Attach one stream handler to the root logger.

    Repeated calls are no-ops unless `force` is set, in which case the
    previous markovrisk handler is swapped for a new one.

    Args:
        debug: DEBUG level when True, INFO otherwise
        stream: destination, stderr by default
        quiet: logger names lowered to WARNING
        force: replace an existing configuration

    Returns:
        logging.Handler: the installed handler
    """
    global _handler

    root_logger = logging.getLogger()
    if _handler is not None:
        if not force:
            return _handler
        root_logger.removeHandler(_handler)

    level = logging.DEBUG if debug else logging.INFO
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(fmt=LOG_FORMAT, datefmt=DATE_FORMAT))

    root_logger.setLevel(level)
    root_logger.addHandler(handler)
    for name in quiet:
        logging.getLogger(name).setLevel(logging.WARNING)

    _handler = handler
    return handler


def _format_value(value: Any) -> str:
    if isinstance(value, float):
        return repr(value) if not math.isfinite(value) else f"{value:.6g}"
    return str(value)


def log_with_context(logger: logging.Logger, level: int, message: str, **context: Any) -> None:
    """
    Log `message | key=value ...`, skipping None values.

    Floats are shortened to 6 significant digits so grid-point lines stay
    readable; the full precision lives in the CSV.
    """
    if not logger.isEnabledFor(level):
        return

    pairs = " ".join(
        f"{key}={_format_value(value)}" for key, value in context.items() if value is not None
    )
    logger.log(level, f"{message} | {pairs}" if pairs else message)
