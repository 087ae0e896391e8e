"""
Logging Setup Module

This module wires the standard library loggers used across the package to a
rich console handler, with an optional plain-text mirror inside a run directory.

Author: noomesk
"""

import logging
from pathlib import Path
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler


console = Console()

_PACKAGE_LOGGER = "src"
_FILE_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(verbose: bool = False, log_file: Optional[str] = None) -> logging.Logger:
    """Install the rich handler on the package logger.

    Calling this more than once replaces the previous handlers, so repeated CLI
    invocations inside one process (tests) do not stack output.

    Args:
        verbose (bool): Emit DEBUG records when True, INFO otherwise
        log_file (str, optional): Also write records to this file

    Returns:
        logging.Logger: The configured package logger
    """
    logger = logging.getLogger(_PACKAGE_LOGGER)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    level = logging.DEBUG if verbose else logging.INFO
    logger.setLevel(level)
    logger.propagate = False

    rich_handler = RichHandler(console=console, show_path=False, markup=False)
    rich_handler.setLevel(level)
    logger.addHandler(rich_handler)

    if log_file is not None:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setFormatter(logging.Formatter(_FILE_FORMAT))
        file_handler.setLevel(logging.DEBUG)
        logger.addHandler(file_handler)

    return logger
