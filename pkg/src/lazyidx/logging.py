"""
Logging tools
"""

from __future__ import annotations

import datetime
import functools
import logging
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    import argparse
    from typing import Callable

LOG_LEVELS = ("CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG")


def logged(level: int = logging.DEBUG) -> Callable:
    """
    Useful logging decorator. If a function is logged, the beginning and end
    of the call will be logged at a pre-specified level, together with the
    elapsed wall-clock time.

    Args:
        level: Level to log method at. Defaults to DEBUG.
    """

    def wrap(f):
        _logger = logging.getLogger(f"{f.__module__}.{f.__qualname__}")

        @functools.wraps(f)
        def wrapped_f(*args, **kwargs):
            start = datetime.datetime.now()
            _logger.log(level, f"Called at {start}")
            data = f(*args, **kwargs)
            _logger.log(level, f"Done in {datetime.datetime.now() - start}")
            return data

        return wrapped_f

    return wrap


def add_loglevel_argument(parser: argparse.ArgumentParser, default: str = "WARNING") -> None:
    """
    Adds the --loglevel option to a command line parser.

    Args:
        parser: The parser (or subparser) to extend.
        default: Default level name.
    """
    parser.add_argument(
        "--loglevel",
        default=default,
        type=str,
        help=f"Set the loglevel. Possible values: {', '.join(LOG_LEVELS)} (default {default}).",
    )


def configure_logging(loglevel: str) -> int:
    """
    Initializes the root logger from a level name given on the command line.
    The name is case insensitive, i.e. --loglevel=DEBUG and --loglevel=debug
    are equivalent.

    Args:
        loglevel: Level name.

    Returns:
        The numeric level.
    """
    numeric_level = getattr(logging, loglevel.upper(), None)
    if not isinstance(numeric_level, int):
        raise ValueError(f"Invalid log level: {loglevel}")
    logging.basicConfig(
        level=numeric_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    return numeric_level
