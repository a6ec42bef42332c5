import logging
from collections.abc import Iterator
from contextlib import contextmanager
from contextvars import ContextVar
from logging import Filter
from typing import Any, Literal

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s%(context)s"

# Per-thread fields appended to every record, e.g. the command, batch item and item seed.
logger_context: ContextVar[dict[str, Any]] = ContextVar("logger_context")

_configured_loggers: set[str] = set()


class ContextFilter(Filter):
    """Logging filter exposing the `logger_context` fields on every record."""

    def filter(self, record: logging.LogRecord) -> Literal[True]:
        """Copy the context onto `record` and render it into `record.context`.

        Each field becomes a record attribute; `record.context` holds them all as
        `" [command=synthesize item=3 seed=10]"`, or an empty string without context.

        Args:
            record (logging.LogRecord): Log record being augmented.

        Returns:
            Literal[True]: Records are never dropped.
        """
        context = logger_context.get({})
        for key, value in context.items():
            setattr(record, key, value)
        rendered = " ".join(f"{key}={value}" for key, value in context.items())
        record.context = f" [{rendered}]" if rendered else ""
        return True


def get_logger(name: str, level: int = logging.INFO) -> logging.Logger:
    """Return a logger printing `LOG_FORMAT` lines to stderr.

    Handler and filter are attached once per name; later calls return the same logger.

    Args:
        name (str): Logger name, usually the module's `__name__`.
        level (int, optional): Initial level. Defaults to `logging.INFO`.

    Returns:
        logging.Logger: Logger with a `StreamHandler` and a `ContextFilter`.
    """
    logger = logging.getLogger(name)

    if name not in _configured_loggers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)
        logger.addFilter(ContextFilter())
        logger.setLevel(level)
        _configured_loggers.add(name)

    return logger


def set_log_level(level: int) -> None:
    """Set `level` on every logger created through `get_logger`."""
    for name in _configured_loggers:
        logging.getLogger(name).setLevel(level)


def set_logger_context(**kwargs: Any) -> None:
    """Replace the current thread's logger context with `kwargs`."""
    logger_context.set(kwargs)


@contextmanager
def logging_context(**kwargs: Any) -> Iterator[None]:
    """Merge `kwargs` into the logger context inside the block and restore it afterwards."""
    token = logger_context.set({**logger_context.get({}), **kwargs})
    try:
        yield
    finally:
        logger_context.reset(token)


def clear_logger_context() -> None:
    """Empty the current thread's logger context."""
    logger_context.set({})
