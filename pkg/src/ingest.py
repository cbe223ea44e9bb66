"""Accelerometer recording loaders, resampling and per-window centering."""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from pathlib import Path

import numpy as np
import pandas as pd

from errors import ConfigError, DataError, EmptyInputError, FormatError, ParseError, StructuralError
from settings import Unit, parse_config_lines

CANONICAL_COLUMNS = ["t", "ax", "ay", "az", "label"]
SPACING_TOLERANCE_S = 1e-6
STANDARD_GRAVITY = 9.80665
DAPHNET_COLUMNS = 11
DAPHNET_SENSORS = {"ankle": (1, 2, 3), "thigh": (4, 5, 6), "trunk": (7, 8, 9)}
DAPHNET_RATE_HZ = 64.0


class Label(IntEnum):
    NON_FOG = 0
    FOG = 1


class MedicationState(str, Enum):
    ON = "on"
    OFF = "off"
    UNKNOWN = "unknown"


@dataclass(frozen=True, eq=False)
class SignalStream:
    """Uniformly sampled 3-axis accelerometer recording with per-sample labels.

    ``breaks`` lists the sample indices that start a new contiguous run after
    rows were cut out of the source; windows never span one.
    """

    t: np.ndarray
    acc: np.ndarray
    labels: np.ndarray
    rate_hz: float
    unit: Unit = Unit.G
    subject_id: str = ""
    medication_state: MedicationState = MedicationState.UNKNOWN
    breaks: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not self.rate_hz > 0:
            raise StructuralError(f"rate_hz must be positive, got {self.rate_hz}")
        t = np.asarray(self.t, dtype=np.float64)
        acc = np.asarray(self.acc, dtype=np.float64).reshape(-1, 3) if np.size(self.acc) else np.zeros((0, 3))
        labels = np.asarray(self.labels, dtype=np.int8)
        if t.ndim != 1 or acc.shape[0] != t.shape[0]:
            raise StructuralError(f"{t.shape[0]} timestamps but {acc.shape[0]} samples")
        if labels.shape != t.shape:
            raise StructuralError(f"{labels.shape[0]} labels for {t.shape[0]} samples")
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise StructuralError("labels must be 0 (NonFoG) or 1 (FoG)")
        if t.size > 1:
            spacing = np.diff(t)
            if (spacing <= 0).any():
                index = int(np.argmax(spacing <= 0)) + 1
                raise StructuralError(f"timestamps not strictly increasing at sample {index}")
            drift = np.abs(spacing - 1.0 / self.rate_hz)
            if (drift > SPACING_TOLERANCE_S).any():
                index = int(np.argmax(drift > SPACING_TOLERANCE_S)) + 1
                raise StructuralError(f"irregular sample spacing at sample {index} for {self.rate_hz} Hz")
        breaks = tuple(int(b) for b in self.breaks)
        if any(b <= 0 or b >= t.size for b in breaks) or list(breaks) != sorted(set(breaks)):
            raise StructuralError(f"breaks must be increasing sample indices inside the stream, got {breaks}")
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "acc", acc)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.t.shape[0])

    @property
    def duration_s(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self) else 0.0

    @property
    def fog_fraction(self) -> float:
        return float(self.labels.mean()) if len(self) else 0.0

    def runs(self) -> list[tuple[int, int]]:
        """[start, end) sample ranges of the contiguous runs."""
        edges = [0, *self.breaks, len(self)]
        return list(zip(edges[:-1], edges[1:]))


@dataclass(frozen=True)
class ColumnMapping:
    """Column layout of a third-party CSV export."""

    time_col: str = "Time"
    time_unit: str = "index"
    rate_hz: float | None = 128.0
    axis_cols: tuple[str, str, str] = ("AccV", "AccML", "AccAP")
    fog_cols: tuple[str, ...] = ("StartHesitation", "Turn", "Walking")
    unit: Unit = Unit.G

    def __post_init__(self) -> None:
        if self.time_unit not in {"s", "ms", "index"}:
            raise ConfigError(f"time_unit must be s, ms or index, got {self.time_unit!r}")
        if self.time_unit == "index" and not self.rate_hz:
            raise ConfigError("an index time column needs rate_hz")
        if len(self.axis_cols) != 3:
            raise ConfigError("axis_cols must name exactly three columns")

    @classmethod
    def from_file(cls, path: str | Path) -> "ColumnMapping":
        values = parse_config_lines(Path(path))
        kwargs: dict[str, object] = {}
        for key, raw in values.items():
            if key in {"time_col", "time_unit"}:
                kwargs[key] = raw
            elif key == "rate_hz":
                kwargs[key] = float(raw) if raw.lower() not in {"", "none"} else None
            elif key in {"axis_cols", "fog_cols"}:
                kwargs[key] = tuple(part.strip() for part in raw.split(",") if part.strip())
            elif key == "unit":
                kwargs[key] = Unit(raw.lower())
            else:
                raise ConfigError(f"unknown column-mapping key {key!r}")
        return cls(**kwargs)


# Public tDCS FoG layout: sample-index time at 128 Hz, g units, three FoG flavours.
TDCS_MAPPING = ColumnMapping()


def _read_text_frame(path: Path, **kwargs) -> pd.DataFrame:
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8", **kwargs)
    except pd.errors.ParserError as exc:
        match = re.search(r"line (\d+)", str(exc))
        raise ParseError(str(exc), line=int(match.group(1)) if match else None, path=str(path)) from exc
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8: {exc}", path=str(path)) from exc
    except pd.errors.EmptyDataError as exc:
        raise FormatError(f"{path}: empty file") from exc


def _numeric_column(frame: pd.DataFrame, column, path: Path, first_line: int) -> np.ndarray:
    raw = frame[column]
    parsed = pd.to_numeric(raw, errors="coerce")
    bad = parsed.isna().to_numpy() | raw.isna().to_numpy()
    if bad.any():
        row = int(np.argmax(bad))
        raise ParseError(f"column {column!r}: not a number: {raw.iloc[row]!r}", line=row + first_line, path=str(path))
    # numpy parses each string with correctly rounded float(), keeping write/load exact
    return np.asarray(raw.to_numpy(), dtype=np.float64)


def _infer_rate(t: np.ndarray) -> float:
    if t.size < 2:
        raise StructuralError("need at least two samples to infer the sample rate")
    spacing = float(np.median(np.diff(t)))
    if spacing <= 0:
        raise StructuralError("timestamps not strictly increasing")
    return float(round(1.0 / spacing, 6))


def load_canonical_csv(
    path: str | Path,
    *,
    subject_id: str | None = None,
    unit: Unit = Unit.G,
    medication_state: MedicationState = MedicationState.UNKNOWN,
) -> SignalStream:
    """Load a ``t,ax,ay,az,label`` file; the rate comes from the median spacing."""
    path = Path(path)
    frame = _read_text_frame(path)
    if list(frame.columns) != CANONICAL_COLUMNS:
        raise FormatError(f"{path}: expected header {','.join(CANONICAL_COLUMNS)}, got {','.join(map(str, frame.columns))}")
    t = _numeric_column(frame, "t", path, 2)
    acc = np.column_stack([_numeric_column(frame, axis, path, 2) for axis in ("ax", "ay", "az")]) if len(frame) else np.zeros((0, 3))
    label_text = frame["label"]
    bad = ~label_text.isin(["0", "1"]).to_numpy()
    if bad.any():
        row = int(np.argmax(bad))
        raise ParseError(f"label must be 0 or 1, got {label_text.iloc[row]!r}", line=row + 2, path=str(path))
    labels = label_text.to_numpy().astype(np.int8)
    return SignalStream(
        t=t,
        acc=acc,
        labels=labels,
        rate_hz=_infer_rate(t),
        unit=unit,
        subject_id=subject_id if subject_id is not None else path.stem,
        medication_state=medication_state,
    )


def _format_time(value: float) -> str:
    return np.format_float_positional(value, unique=True, trim="k", min_digits=6)


def write_canonical_csv(stream: SignalStream, path: str | Path) -> Path:
    """Write a stream so that ``load_canonical_csv`` reproduces it bit for bit."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        {
            "t": [_format_time(value) for value in stream.t],
            "ax": [repr(float(value)) for value in stream.acc[:, 0]],
            "ay": [repr(float(value)) for value in stream.acc[:, 1]],
            "az": [repr(float(value)) for value in stream.acc[:, 2]],
            "label": stream.labels.astype(int),
        },
        columns=CANONICAL_COLUMNS,
    )
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    return path


def load_daphnet(
    path: str | Path,
    *,
    sensor: str = "trunk",
    rate_hz: float = DAPHNET_RATE_HZ,
    subject_id: str | None = None,
) -> SignalStream:
    """Load one Daphnet recording (time ms, 9 acceleration columns in mg, annotation).

    Annotation 0 rows (outside the experiment) are dropped and the remaining
    samples are re-stamped onto a uniform grid at ``rate_hz``. Each place a
    dropped run was cut out becomes a break.
    """
    if sensor not in DAPHNET_SENSORS:
        raise ConfigError(f"unknown Daphnet sensor {sensor!r}; choose from {sorted(DAPHNET_SENSORS)}")
    path = Path(path)
    try:
        frame = _read_text_frame(path, sep=r"\s+", header=None)
    except ParseError as exc:
        raise FormatError(str(exc)) from exc
    if frame.shape[1] != DAPHNET_COLUMNS:
        raise FormatError(f"{path}: expected {DAPHNET_COLUMNS} columns, got {frame.shape[1]}")
    short = frame.isna().any(axis=1).to_numpy()
    if short.any():
        raise FormatError(f"{path}: line {int(np.argmax(short)) + 1}: expected {DAPHNET_COLUMNS} columns")
    annotation = _numeric_column(frame, 10, path, 1)
    unknown = ~np.isin(annotation, (0, 1, 2))
    if unknown.any():
        row = int(np.argmax(unknown))
        raise ParseError(f"annotation must be 0, 1 or 2, got {annotation[row]!r}", line=row + 1, path=str(path))
    keep = annotation > 0
    time_ms = _numeric_column(frame, 0, path, 1)[keep]
    columns = DAPHNET_SENSORS[sensor]
    acc = np.column_stack([_numeric_column(frame, col, path, 1)[keep] for col in columns]) / 1000.0
    labels = (annotation[keep] == 2).astype(np.int8)
    kept_rows = np.flatnonzero(keep)
    breaks = tuple(int(i) + 1 for i in np.flatnonzero(np.diff(kept_rows) > 1))
    start = time_ms[0] / 1000.0 if time_ms.size else 0.0
    return SignalStream(
        t=start + np.arange(labels.size) / rate_hz,
        acc=acc if labels.size else np.zeros((0, 3)),
        labels=labels,
        rate_hz=rate_hz,
        unit=Unit.G,
        subject_id=subject_id if subject_id is not None else path.stem,
        breaks=breaks,
    )


def load_mapped_csv(
    path: str | Path,
    mapping: ColumnMapping = TDCS_MAPPING,
    *,
    subject_id: str | None = None,
    medication_state: MedicationState = MedicationState.UNKNOWN,
) -> SignalStream:
    """Load a CSV export whose columns are described by ``mapping``."""
    path = Path(path)
    frame = _read_text_frame(path)
    required = [mapping.time_col, *mapping.axis_cols, *mapping.fog_cols]
    missing = [column for column in required if column not in frame.columns]
    if missing:
        raise FormatError(f"{path}: missing columns {missing}")
    raw_time = _numeric_column(frame, mapping.time_col, path, 2)
    if mapping.time_unit == "index":
        t = (raw_time - raw_time[0]) / float(mapping.rate_hz) if raw_time.size else raw_time
    elif mapping.time_unit == "ms":
        t = raw_time / 1000.0
    else:
        t = raw_time
    acc = np.column_stack([_numeric_column(frame, column, path, 2) for column in mapping.axis_cols])
    fog = np.zeros(len(frame), dtype=bool)
    for column in mapping.fog_cols:
        fog |= _numeric_column(frame, column, path, 2) > 0
    return SignalStream(
        t=t,
        acc=acc,
        labels=fog.astype(np.int8),
        rate_hz=float(mapping.rate_hz) if mapping.rate_hz else _infer_rate(t),
        unit=mapping.unit,
        subject_id=subject_id if subject_id is not None else path.stem,
        medication_state=medication_state,
    )


def resample(stream: SignalStream, target_hz: float) -> SignalStream:
    """Linear interpolation onto a uniform grid; labels by nearest neighbour."""
    if not target_hz > 0:
        raise ConfigError(f"target_hz must be positive, got {target_hz}")
    if len(stream) == 0:
        raise EmptyInputError("cannot resample an empty stream")
    t0 = stream.t[0]
    count = int(np.floor(stream.duration_s * target_hz + 1e-9)) + 1
    grid = t0 + np.arange(count) / target_hz
    acc = np.column_stack([np.interp(grid, stream.t, stream.acc[:, axis]) for axis in range(3)])
    nearest = np.clip(np.rint((grid - t0) * stream.rate_hz).astype(np.int64), 0, len(stream) - 1)
    # a run starts at the first grid point past the previous run's last sample
    moved = np.searchsorted(grid, stream.t[np.asarray(stream.breaks, dtype=np.int64) - 1], side="right")
    breaks = tuple(sorted({int(b) for b in moved if 0 < b < count}))
    return SignalStream(
        t=grid,
        acc=acc,
        labels=stream.labels[nearest],
        rate_hz=float(target_hz),
        unit=stream.unit,
        subject_id=stream.subject_id,
        medication_state=stream.medication_state,
        breaks=breaks,
    )


def to_g(stream: SignalStream) -> SignalStream:
    """Express a stream in g; streams already in g come back unchanged."""
    if stream.unit is Unit.G:
        return stream
    return replace(stream, acc=stream.acc / STANDARD_GRAVITY, unit=Unit.G)


def remove_mean(window: np.ndarray) -> np.ndarray:
    """Subtract each channel's mean over time; works on one frame or a stack."""
    window = np.asarray(window, dtype=np.float64)
    return window - window.mean(axis=-2, keepdims=True)


__all__ = [
    "ColumnMapping",
    "Label",
    "MedicationState",
    "SignalStream",
    "TDCS_MAPPING",
    "load_canonical_csv",
    "load_daphnet",
    "load_mapped_csv",
    "resample",
    "remove_mean",
    "to_g",
    "write_canonical_csv",
]
