"""Per-window prediction traces and their CSV form."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from errors import FormatError, StructuralError

DECISION_THRESHOLD = 0.5
TRACE_COLUMNS = (
    "window",
    "source",
    "start_index",
    "start_s",
    "probability",
    "decision",
    "active",
    "truth",
    "fog_fraction",
    "model_cost_ms",
    "gate_cost_ms",
)


@dataclass(frozen=True, eq=False)
class PredictionTrace:
    """Ordered model output for one evaluated window sequence.

    Rejected windows carry probability 0.0 and decision NonFoG. Costs are
    wall-clock seconds per window; ``reference_cost_s`` is one ungated model
    call measured before the run.
    """

    probability: np.ndarray
    decision: np.ndarray
    active: np.ndarray
    truth: np.ndarray
    fog_fraction: np.ndarray
    start_index: np.ndarray
    source: np.ndarray
    model_cost_s: np.ndarray
    gate_cost_s: np.ndarray
    window_s: float
    hop_s: float
    rate_hz: float
    reference_cost_s: float = 0.0
    alpha: float | None = None

    def __post_init__(self) -> None:
        count = len(np.asarray(self.probability))
        casts = {
            "probability": np.float64,
            "decision": np.int8,
            "active": bool,
            "truth": np.int8,
            "fog_fraction": np.float64,
            "start_index": np.int64,
            "source": np.int64,
            "model_cost_s": np.float64,
            "gate_cost_s": np.float64,
        }
        for name, dtype in casts.items():
            values = np.asarray(getattr(self, name), dtype=dtype).reshape(-1)
            if values.shape != (count,):
                raise StructuralError(f"trace column {name} has {values.size} entries, expected {count}")
            object.__setattr__(self, name, values)

    def __len__(self) -> int:
        return int(self.probability.shape[0])

    def with_decisions(self, decision: np.ndarray) -> "PredictionTrace":
        return replace(self, decision=np.asarray(decision, dtype=np.int8))

    def segments(self) -> list[np.ndarray]:
        """Index arrays of the contiguous runs belonging to one source each."""
        if len(self) == 0:
            return []
        breaks = np.flatnonzero(np.diff(self.source) != 0) + 1
        return np.split(np.arange(len(self)), breaks)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "window": np.arange(len(self)),
                "source": self.source,
                "start_index": self.start_index,
                "start_s": self.start_index / self.rate_hz,
                "probability": self.probability,
                "decision": self.decision,
                "active": self.active.astype(np.int8),
                "truth": self.truth,
                "fog_fraction": self.fog_fraction,
                "model_cost_ms": self.model_cost_s * 1000.0,
                "gate_cost_ms": self.gate_cost_s * 1000.0,
            },
            columns=list(TRACE_COLUMNS),
        )


def concat_traces(traces: list[PredictionTrace]) -> PredictionTrace:
    if not traces:
        raise StructuralError("no traces to combine")
    sources, offset = [], 0
    for trace in traces:
        sources.append(trace.source - (trace.source.min() if len(trace) else 0) + offset)
        offset = int(sources[-1].max()) + 1 if len(trace) else offset
    first = traces[0]
    return PredictionTrace(
        probability=np.concatenate([t.probability for t in traces]),
        decision=np.concatenate([t.decision for t in traces]),
        active=np.concatenate([t.active for t in traces]),
        truth=np.concatenate([t.truth for t in traces]),
        fog_fraction=np.concatenate([t.fog_fraction for t in traces]),
        start_index=np.concatenate([t.start_index for t in traces]),
        source=np.concatenate(sources),
        model_cost_s=np.concatenate([t.model_cost_s for t in traces]),
        gate_cost_s=np.concatenate([t.gate_cost_s for t in traces]),
        window_s=first.window_s,
        hop_s=first.hop_s,
        rate_hz=first.rate_hz,
        reference_cost_s=float(np.mean([t.reference_cost_s for t in traces])),
        alpha=first.alpha,
    )


def write_trace_csv(trace: PredictionTrace, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write(f"# window_s={trace.window_s!r}\n")
        handle.write(f"# hop_s={trace.hop_s!r}\n")
        handle.write(f"# rate_hz={trace.rate_hz!r}\n")
        handle.write(f"# reference_cost_s={trace.reference_cost_s!r}\n")
        if trace.alpha is not None:
            handle.write(f"# alpha={trace.alpha!r}\n")
        trace.to_frame().to_csv(handle, index=False, float_format="%.10g", lineterminator="\n")
    return path


def read_trace_csv(path: str | Path) -> PredictionTrace:
    path = Path(path)
    meta: dict[str, float] = {}
    try:
        with path.open("r", encoding="utf-8") as handle:
            for line in handle:
                if not line.startswith("#"):
                    break
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = float(value)
        frame = pd.read_csv(path, comment="#")
    except (OSError, ValueError, pd.errors.ParserError) as exc:
        raise FormatError(f"cannot read trace {path}: {exc}") from exc
    missing = [column for column in TRACE_COLUMNS if column not in frame.columns]
    if missing or not {"window_s", "hop_s", "rate_hz"} <= meta.keys():
        raise FormatError(f"{path}: not a prediction trace (missing {missing or 'header metadata'})")
    return PredictionTrace(
        probability=frame["probability"].to_numpy(),
        decision=frame["decision"].to_numpy(),
        active=frame["active"].to_numpy() != 0,
        truth=frame["truth"].to_numpy(),
        fog_fraction=frame["fog_fraction"].to_numpy(),
        start_index=frame["start_index"].to_numpy(),
        source=frame["source"].to_numpy(),
        model_cost_s=frame["model_cost_ms"].to_numpy() / 1000.0,
        gate_cost_s=frame["gate_cost_ms"].to_numpy() / 1000.0,
        window_s=meta["window_s"],
        hop_s=meta["hop_s"],
        rate_hz=meta["rate_hz"],
        reference_cost_s=meta.get("reference_cost_s", 0.0),
        alpha=meta.get("alpha"),
    )


__all__ = [
    "DECISION_THRESHOLD",
    "PredictionTrace",
    "concat_traces",
    "read_trace_csv",
    "write_trace_csv",
]
