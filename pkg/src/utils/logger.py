"""
Structured logging configuration using structlog

Events go to stderr; stdout carries command output (tables, paths, reports).
"""
import logging
import sys
from typing import Optional

import structlog

from src.config.settings import settings


def _level(name: Optional[str]) -> int:
    return getattr(logging, (name or settings.LOG_LEVEL).upper(), logging.INFO)


def configure_logging(level: Optional[str] = None, json_lines: Optional[bool] = None):
    """Configure structlog once; later calls reconfigure in place"""
    numeric = _level(level)
    as_json = (not settings.DEBUG) if json_lines is None else json_lines

    logging.basicConfig(format="%(message)s", stream=sys.stderr, level=numeric)

    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.StackInfoRenderer(),
            structlog.dev.set_exc_info,
            structlog.processors.TimeStamper(fmt="iso", utc=True),
            structlog.processors.JSONRenderer() if as_json else structlog.dev.ConsoleRenderer(),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(numeric),
        context_class=dict,
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )
    return structlog.get_logger()


def bind_run_context(**values) -> None:
    """Attach key-values (command, seed, ...) to every event of this run"""
    structlog.contextvars.clear_contextvars()
    structlog.contextvars.bind_contextvars(**values)


logger = configure_logging()
