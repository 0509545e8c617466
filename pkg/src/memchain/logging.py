"""JSON logs on stderr for memchain runs and bench sweeps.

stdout carries answers, tables and trace output. Every event goes to stderr as
one JSON object per line. Inside a bench sweep each example runs in its
own task with ``method`` and ``example_id`` bound, so its retry and failure
events carry both.
"""

from __future__ import annotations

import logging
import sys
from collections.abc import Iterator
from contextlib import contextmanager

import structlog

# Per-request INFO lines from the HTTP stack; our own llm_* events cover them.
_NOISY_LOGGERS = ("httpx", "httpcore")


def configure_logging(level: str = "INFO") -> None:
    """Route structlog and stdlib records to stderr as JSON at ``level``."""

    numeric = getattr(logging, level.upper(), logging.INFO)
    processors: list[structlog.types.Processor] = [
        structlog.contextvars.merge_contextvars,
        structlog.stdlib.add_logger_name,
        structlog.stdlib.add_log_level,
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.stdlib.PositionalArgumentsFormatter(),
        structlog.processors.StackInfoRenderer(),
        structlog.processors.format_exc_info,
        structlog.processors.UnicodeDecoder(),
        structlog.processors.dict_tracebacks,
        structlog.processors.JSONRenderer(sort_keys=True),
    ]
    structlog.configure(
        processors=processors,
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )

    logging.basicConfig(level=numeric, stream=sys.stderr, format="%(message)s", force=True)
    for name in _NOISY_LOGGERS:
        logging.getLogger(name).setLevel(max(numeric, logging.WARNING))


@contextmanager
def example_context(method: str, example_id: str) -> Iterator[None]:
    """Bind ``method`` and ``example_id`` to every event logged in this task."""

    with structlog.contextvars.bound_contextvars(method=method, example_id=example_id):
        yield


def get_logger(name: str) -> structlog.stdlib.BoundLogger:
    return structlog.get_logger(name)


__all__ = ["configure_logging", "example_context", "get_logger"]
