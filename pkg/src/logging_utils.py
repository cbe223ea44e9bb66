"""Structured JSON-lines logging shared by every pipeline stage."""

from __future__ import annotations

import json
import logging
import sys
import time
from enum import Enum
from pathlib import Path
from typing import Any, TextIO

import numpy as np

SERVICE_NAME = "fog-monitor"
_LOGGER_NAME = "fogmon"


def _coerce(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    return str(value)


def configure_logging(service: str = SERVICE_NAME, *, quiet: bool = False, stream: TextIO | None = None) -> logging.Logger:
    """Install a single stderr handler emitting one JSON object per line."""
    logger = logging.getLogger(_LOGGER_NAME)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(handler)
    logger.setLevel(logging.WARNING if quiet else logging.INFO)
    logger.propagate = False
    logger.info(json.dumps({"ts": time.time(), "level": "INFO", "event": "logging_configured", "service": service}))
    return logger


def log_json(level: int, event: str, **fields: Any) -> None:
    logger = logging.getLogger(_LOGGER_NAME)
    if not logger.isEnabledFor(level):
        return
    record = {"ts": time.time(), "level": logging.getLevelName(level), "event": event}
    record.setdefault("service", SERVICE_NAME)
    record.update(fields)
    logger.log(level, json.dumps(record, default=_coerce, sort_keys=False))


__all__ = ["configure_logging", "log_json", "SERVICE_NAME"]
