"""Logging configuration for the toolkit."""
import logging
import sys
from typing import Optional

from config import LOG_FILE, LOG_LEVEL, LOG_FORMAT


def setup_logging(log_to_file: bool = True, log_to_console: bool = True,
                  level: Optional[str] = None, log_file: str = LOG_FILE):
    """Configure the root logger.

    Args:
        log_to_file: Whether to log to file
        log_to_console: Whether to log to the console (stderr keeps stdout for results)
        level: Console level name; defaults to LOG_LEVEL
        log_file: Log file path
    """
    root_logger = logging.getLogger()
    root_logger.setLevel(logging.DEBUG)
    root_logger.handlers.clear()

    formatter = logging.Formatter(LOG_FORMAT)

    if log_to_file:
        try:
            file_handler = logging.FileHandler(log_file, encoding='utf-8')
            file_handler.setLevel(getattr(logging, LOG_LEVEL))
            file_handler.setFormatter(formatter)
            root_logger.addHandler(file_handler)
        except OSError as e:
            print(f"Warning: Could not create log file: {e}", file=sys.stderr)

    if log_to_console:
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setLevel(getattr(logging, (level or LOG_LEVEL).upper()))
        console_handler.setFormatter(formatter)
        root_logger.addHandler(console_handler)

    logging.getLogger(__name__).debug("Logging initialized")
