"""Error taxonomy for the fog-monitor pipeline.

Every error raised on purpose by the pipeline derives from
``FogMonitorError``; the CLI maps each family to its exit code.
"""

from __future__ import annotations


class FogMonitorError(RuntimeError):
    exit_code = 1


class ConfigError(FogMonitorError):
    exit_code = 2


class DataError(FogMonitorError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message: str, *, line: int | None = None, path: str | None = None):
        where = []
        if path:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.line = line
        self.path = path


class FormatError(DataError):
    pass


class StructuralError(DataError):
    pass


class EmptyInputError(DataError):
    pass


class DegenerateInputError(DataError):
    pass


class UndefinedMetricError(DataError):
    pass


class NumericError(FogMonitorError):
    exit_code = 4

    def __init__(self, message: str, *, epoch: int | None = None):
        super().__init__(f"epoch {epoch}: {message}" if epoch is not None else message)
        self.epoch = epoch


__all__ = [
    "FogMonitorError",
    "ConfigError",
    "DataError",
    "ParseError",
    "FormatError",
    "StructuralError",
    "EmptyInputError",
    "DegenerateInputError",
    "UndefinedMetricError",
    "NumericError",
]
