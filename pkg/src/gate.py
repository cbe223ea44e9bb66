"""Mean-acceleration-magnitude gate and its threshold optimizer.

The gate looks at raw (gravity-included) frames: a window is passed to the
model only when the mean over time of its per-sample vector norm is at
least ``alpha``. Rejected windows are reported as NonFoG with probability
0.0 and cost only the magnitude computation.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np
import pandas as pd

from errors import EmptyInputError, StructuralError
from logging_utils import log_json
from metrics import detected_episode_pct, window_metrics_from_arrays
from predictions import DECISION_THRESHOLD, PredictionTrace
from settings import AtoConfig, GateConfig
from tracing import get_tracer

if TYPE_CHECKING:
    from windowing import WindowSet

Predictor = Callable[[np.ndarray], np.ndarray]
SWEEP_COLUMNS = ("alpha", "n_active", "rejection_ratio", "sensitivity", "specificity", "f1", "mean_inference_ms")


def magnitudes(raw: np.ndarray) -> np.ndarray:
    """Per-frame mean acceleration magnitude for an N x T' x 3 stack."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 3 or raw.shape[2] != 3:
        raise StructuralError(f"expected N x T' x 3 raw frames, got {raw.shape}")
    if raw.shape[0] == 0:
        return np.zeros(0)
    return np.sqrt(np.square(raw).sum(axis=2)).mean(axis=1)


def magnitude(frame: np.ndarray) -> float:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise StructuralError(f"expected a T' x 3 frame, got {frame.shape}")
    return float(magnitudes(frame[None])[0])


@dataclass(frozen=True, eq=False)
class GateResult:
    active: np.ndarray
    rejected: np.ndarray
    rejection_ratio: float

    @property
    def mask(self) -> np.ndarray:
        out = np.zeros(self.active.size + self.rejected.size, dtype=bool)
        out[self.active] = True
        return out


def _magnitudes_of(frames: "WindowSet | np.ndarray") -> np.ndarray:
    if hasattr(frames, "raw_frames"):
        return frames.magnitude
    return magnitudes(frames)


def gate(frames: "WindowSet | np.ndarray", cfg: GateConfig) -> GateResult:
    """Split windows into active and rejected index lists at ``cfg.alpha``."""
    values = _magnitudes_of(frames)
    passing = values >= cfg.alpha
    total = values.size
    return GateResult(
        active=np.flatnonzero(passing),
        rejected=np.flatnonzero(~passing),
        rejection_ratio=float(total - passing.sum()) / total if total else 0.0,
    )


def _probability(model: Predictor, frames: np.ndarray) -> float:
    return float(np.asarray(model(frames), dtype=np.float64).reshape(-1)[0])


def timed_inference(windows: "WindowSet", model: Predictor, alpha: float | None = None) -> PredictionTrace:
    """Run the model one window at a time in window order, timing each call.

    With ``alpha`` set, the magnitude check runs first (and is timed) and the
    model is skipped for windows below the threshold.
    """
    count = len(windows)
    probability = np.zeros(count)
    active = np.ones(count, dtype=bool)
    model_cost = np.zeros(count)
    gate_cost = np.zeros(count)
    raw = windows.raw_frames() if alpha is not None else None

    reference = 0.0
    if count:
        started = time.perf_counter()
        _probability(model, windows.frames[:1])
        reference = time.perf_counter() - started

    for index in range(count):
        if raw is not None:
            started = time.perf_counter()
            active[index] = magnitudes(raw[index:index + 1])[0] >= alpha
            gate_cost[index] = time.perf_counter() - started
        if active[index]:
            started = time.perf_counter()
            probability[index] = _probability(model, windows.frames[index:index + 1])
            model_cost[index] = time.perf_counter() - started

    return PredictionTrace(
        probability=probability,
        decision=(probability >= DECISION_THRESHOLD) & active,
        active=active,
        truth=windows.labels,
        fog_fraction=windows.fog_fraction,
        start_index=windows.start_index,
        source=windows.source,
        model_cost_s=model_cost,
        gate_cost_s=gate_cost,
        window_s=windows.spec.window_s,
        hop_s=windows.hop_s,
        rate_hz=windows.rate_hz,
        reference_cost_s=reference,
        alpha=alpha,
    )


def run_gated(windows: "WindowSet", model: Predictor, cfg: GateConfig) -> PredictionTrace:
    with get_tracer().start_as_current_span("gate.run") as span:
        trace = timed_inference(windows, model, cfg.alpha)
        span.set_attribute("fogmon.alpha", cfg.alpha)
        span.set_attribute("fogmon.active", int(trace.active.sum()))
    return trace


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    n_active: int
    rejection_ratio: float
    sensitivity: float | None
    specificity: float | None
    f1: float | None
    mean_inference_ms: float
    dfe_pct: float | None
    performance: float


def _evaluate_alpha(
    windows: "WindowSet", labels: np.ndarray, model: Predictor, alpha: float, metric: str
) -> SweepRow:
    passing = windows.magnitude >= alpha
    probability = np.zeros(len(windows))
    started = time.perf_counter()
    if passing.any():
        probability[passing] = np.asarray(model(windows.frames[passing]), dtype=np.float64).reshape(-1)
    elapsed = time.perf_counter() - started
    decision = (probability >= DECISION_THRESHOLD) & passing
    metrics = window_metrics_from_arrays(labels, decision)
    return SweepRow(
        alpha=round(alpha, 9),
        n_active=int(passing.sum()),
        rejection_ratio=float((~passing).sum()) / len(windows),
        sensitivity=metrics.sensitivity,
        specificity=metrics.specificity,
        f1=metrics.f1,
        mean_inference_ms=1000.0 * elapsed / len(windows),
        dfe_pct=detected_episode_pct(labels, decision, windows.source),
        performance=metrics.value(metric),
    )


def gate_sweep(
    windows: "WindowSet", model: Predictor, alphas: Sequence[float], labels: np.ndarray | None = None, metric: str = "f1"
) -> list[SweepRow]:
    if len(windows) == 0:
        raise EmptyInputError("gate sweep over an empty window set")
    labels = windows.labels if labels is None else np.asarray(labels)
    rows = []
    with get_tracer().start_as_current_span("gate.sweep"):
        for alpha in alphas:
            row = _evaluate_alpha(windows, labels, model, float(alpha), metric)
            log_json(logging.INFO, "gate_sweep_step", alpha=row.alpha, n_active=row.n_active, f1=row.f1)
            rows.append(row)
    return rows


@dataclass(frozen=True, eq=False)
class AtoResult:
    alpha_opt: float
    active: np.ndarray
    sweep_log: list[SweepRow]
    baseline: float
    no_degradation_found: bool
    break_alpha: float | None

    @property
    def evaluations(self) -> int:
        return len(self.sweep_log)


def ato(windows: "WindowSet", labels: np.ndarray | None, model: Predictor, cfg: AtoConfig) -> AtoResult:
    """Raise alpha step by step until the chosen metric leaves the tolerance band.

    The baseline is the metric at ``alpha_start``. The result is the last
    alpha still within ``tolerance`` of it; when no step degrades,
    ``alpha_final`` is returned and ``no_degradation_found`` is set.
    """
    if len(windows) == 0:
        raise EmptyInputError("threshold optimization over an empty window set")
    labels = windows.labels if labels is None else np.asarray(labels)
    metric = cfg.baseline_metric.value
    rows: list[SweepRow] = []
    baseline = 0.0
    accepted = cfg.alpha_start
    break_alpha = None

    with get_tracer().start_as_current_span("gate.ato") as span:
        for step in range(cfg.max_steps()):
            alpha = cfg.alpha_start + step * cfg.delta_alpha
            if alpha > cfg.alpha_final + 1e-12:
                break
            row = _evaluate_alpha(windows, labels, model, alpha, metric)
            rows.append(row)
            if step == 0:
                baseline = row.performance
            within = abs(row.performance - baseline) <= cfg.tolerance + 1e-12
            log_json(
                logging.INFO,
                "ato_step",
                alpha=row.alpha,
                performance=row.performance,
                baseline=baseline,
                n_active=row.n_active,
                within_tolerance=within,
            )
            if not within:
                break_alpha = row.alpha
                break
            accepted = row.alpha
        no_degradation = break_alpha is None
        alpha_opt = round(cfg.alpha_final, 9) if no_degradation else accepted
        span.set_attribute("fogmon.alpha_opt", alpha_opt)

    if no_degradation:
        log_json(logging.INFO, "ato_done", alpha_opt=alpha_opt, no_degradation_found=True, evaluations=len(rows))
    else:
        log_json(logging.INFO, "ato_done", alpha_opt=alpha_opt, break_alpha=break_alpha, evaluations=len(rows))
    return AtoResult(
        alpha_opt=alpha_opt,
        active=np.flatnonzero(windows.magnitude >= alpha_opt),
        sweep_log=rows,
        baseline=baseline,
        no_degradation_found=no_degradation,
        break_alpha=break_alpha,
    )


def write_sweep_csv(rows: Sequence[SweepRow], path: str | Path, *, include_dfe: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(SWEEP_COLUMNS) + (["dfe_pct"] if include_dfe else [])
    frame = pd.DataFrame([asdict(row) for row in rows], columns=columns)
    frame.to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
    return path


@dataclass(frozen=True)
class DutyCycleReport:
    windows: int
    active: int
    rejected: int
    rejection_ratio: float
    mean_active_cost_ms: float | None
    mean_rejected_cost_ms: float | None
    mean_gate_cost_ms: float
    reference_cost_ms: float
    saved_fraction: float

    def to_dict(self) -> dict:
        return asdict(self)


def duty_cycle_report(trace: PredictionTrace) -> DutyCycleReport:
    """Compute actually saved against running the model on every window.

    The ungated cost is the mean measured model cost per active window (or
    the reference call when nothing was active) times the window count.
    """
    count = len(trace)
    if count == 0:
        raise EmptyInputError("duty-cycle report of an empty trace")
    active = trace.active
    per_call = float(trace.model_cost_s[active].mean()) if active.any() else trace.reference_cost_s
    ungated = per_call * count
    spent = float(trace.model_cost_s[active].sum() + trace.gate_cost_s.sum())
    rejected = ~active
    return DutyCycleReport(
        windows=count,
        active=int(active.sum()),
        rejected=int(rejected.sum()),
        rejection_ratio=float(rejected.sum()) / count,
        mean_active_cost_ms=float((trace.model_cost_s + trace.gate_cost_s)[active].mean() * 1000.0) if active.any() else None,
        mean_rejected_cost_ms=float(trace.gate_cost_s[rejected].mean() * 1000.0) if rejected.any() else None,
        mean_gate_cost_ms=float(trace.gate_cost_s.mean() * 1000.0),
        reference_cost_ms=trace.reference_cost_s * 1000.0,
        saved_fraction=1.0 - spent / ungated if ungated > 0 else 0.0,
    )


__all__ = [
    "AtoResult",
    "DutyCycleReport",
    "GateResult",
    "Predictor",
    "SweepRow",
    "ato",
    "duty_cycle_report",
    "gate",
    "gate_sweep",
    "magnitude",
    "magnitudes",
    "run_gated",
    "timed_inference",
    "write_sweep_csv",
]
