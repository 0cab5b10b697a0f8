"""
Standard-library logging adapter for LoggerPort.

Records are rendered as ``msg key=value key=value`` so they stay greppable in
plain log files.
"""

from __future__ import annotations

import logging
import sys
import time
from typing import Any

from .ports import ClockPort, LoggerPort

_HANDLER_NAME = "adir"


def _fmt_value(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    text = str(value)
    return f'"{text}"' if " " in text else text


class StdlibLogger(LoggerPort):
    def __init__(self, name: str = "adir") -> None:
        self._logger = logging.getLogger(name)

    @property
    def name(self) -> str:
        return self._logger.name

    def _emit(self, level: int, msg: str, **fields: Any) -> None:
        if not self._logger.isEnabledFor(level):
            return
        if fields:
            extra = " ".join(f"{k}={_fmt_value(v)}" for k, v in fields.items())
            msg = f"{msg} {extra}"
        self._logger.log(level, msg)

    def debug(self, msg: str, **fields: Any) -> None:
        self._emit(logging.DEBUG, msg, **fields)

    def info(self, msg: str, **fields: Any) -> None:
        self._emit(logging.INFO, msg, **fields)

    def warning(self, msg: str, **fields: Any) -> None:
        self._emit(logging.WARNING, msg, **fields)

    def error(self, msg: str, **fields: Any) -> None:
        self._emit(logging.ERROR, msg, **fields)


def get_logger(name: str = "adir") -> StdlibLogger:
    return StdlibLogger(name)


def configure_logging(level: str | int = "INFO") -> None:
    """
    Install a single stream handler on the ``adir`` logger namespace.
    Repeated calls re-point it at the current ``sys.stderr``.
    """
    root = logging.getLogger("adir")
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
    root.setLevel(level)
    for handler in root.handlers:
        if handler.get_name() == _HANDLER_NAME and isinstance(handler, logging.StreamHandler):
            # the previous stream may be closed; setStream would flush it
            handler.stream = sys.stderr
            return
    handler = logging.StreamHandler(sys.stderr)
    handler.set_name(_HANDLER_NAME)
    handler.setFormatter(
        logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
    )
    root.addHandler(handler)


class SystemClock(ClockPort):
    def monotonic(self) -> float:
        return time.monotonic()
