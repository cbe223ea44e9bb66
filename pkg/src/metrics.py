"""Window-level and episode-level scoring of prediction traces.

Window metrics are computed from the confusion counts of the ground-truth
labels against the decisions. Episodes are maximal runs of consecutive
ground-truth FoG windows within one source; duration buckets follow the
clinical convention of short (<6 s), medium (6-12 s) and long (>12 s).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from errors import EmptyInputError, StructuralError, UndefinedMetricError
from predictions import PredictionTrace, concat_traces

SHORT_MAX_S = 6.0
MEDIUM_MAX_S = 12.0
_EPS = 1e-9


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class WindowMetrics:
    """Rates are None when their denominator is zero.

    F1 is defined whenever the truth holds FoG windows, so a model that never
    predicts FoG scores 0.0 rather than None.
    """

    sensitivity: float | None
    specificity: float | None
    precision: float | None
    f1: float | None
    accuracy: float | None
    counts: ConfusionCounts

    def value(self, name: str) -> float:
        """Named metric with undefined treated as 0.0."""
        result = getattr(self, name)
        return 0.0 if result is None else float(result)

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(numerator: int, denominator: int) -> float | None:
    return numerator / denominator if denominator else None


def confusion(truth: np.ndarray, decision: np.ndarray) -> ConfusionCounts:
    truth = np.asarray(truth).astype(bool)
    decision = np.asarray(decision).astype(bool)
    if truth.shape != decision.shape:
        raise StructuralError(f"truth {truth.shape} and decisions {decision.shape} differ in shape")
    return ConfusionCounts(
        tp=int(np.count_nonzero(truth & decision)),
        fp=int(np.count_nonzero(~truth & decision)),
        fn=int(np.count_nonzero(truth & ~decision)),
        tn=int(np.count_nonzero(~truth & ~decision)),
    )


def metrics_from_counts(counts: ConfusionCounts) -> WindowMetrics:
    sensitivity = _ratio(counts.tp, counts.tp + counts.fn)
    precision = _ratio(counts.tp, counts.tp + counts.fp)
    # 2tp / (2tp + fp + fn) is the harmonic mean whenever both rates exist
    f1 = None if sensitivity is None else 2 * counts.tp / (2 * counts.tp + counts.fp + counts.fn)
    return WindowMetrics(
        sensitivity=sensitivity,
        specificity=_ratio(counts.tn, counts.tn + counts.fp),
        precision=precision,
        f1=f1,
        accuracy=_ratio(counts.tp + counts.tn, counts.total),
        counts=counts,
    )


def window_metrics_from_arrays(truth: np.ndarray, decision: np.ndarray) -> WindowMetrics:
    if np.asarray(truth).size == 0:
        raise EmptyInputError("window metrics of an empty trace")
    return metrics_from_counts(confusion(truth, decision))


def window_metrics(trace: PredictionTrace) -> WindowMetrics:
    return window_metrics_from_arrays(trace.truth, trace.decision)


def auc_from_scores(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC with midranks for tied scores."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    positives = int(labels.sum())
    negatives = labels.size - positives
    if positives == 0 or negatives == 0:
        raise UndefinedMetricError("AUC needs both FoG and NonFoG windows")
    ranks = rankdata(scores, method="average")
    u_statistic = ranks[labels].sum() - positives * (positives + 1) / 2.0
    return float(u_statistic / (positives * negatives))


def roc_auc(trace: PredictionTrace) -> float:
    return auc_from_scores(trace.probability, trace.truth)


def roc_curve(scores: np.ndarray, labels: np.ndarray) -> pd.DataFrame:
    """False/true positive rates at every distinct score threshold, high to low."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    positives, negatives = int(labels.sum()), int((~labels).sum())
    if positives == 0 or negatives == 0:
        raise UndefinedMetricError("ROC needs both FoG and NonFoG windows")
    thresholds = np.unique(scores)[::-1]
    tpr = [(scores[labels] >= threshold).sum() / positives for threshold in thresholds]
    fpr = [(scores[~labels] >= threshold).sum() / negatives for threshold in thresholds]
    return pd.DataFrame({"threshold": thresholds, "fpr": fpr, "tpr": tpr})


def bce_from_probabilities(probability: np.ndarray, truth: np.ndarray) -> float:
    p = np.clip(np.asarray(probability, dtype=np.float64), 1e-12, 1.0 - 1e-12)
    y = np.asarray(truth, dtype=np.float64)
    if y.size == 0:
        raise EmptyInputError("loss of an empty trace")
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


# --- episodes ---

class DurationBucket(str, Enum):
    SHORT = "short"
    MEDIUM = "medium"
    LONG = "long"


def bucket_for(duration_s: float) -> DurationBucket:
    if duration_s < SHORT_MAX_S - _EPS:
        return DurationBucket.SHORT
    if duration_s <= MEDIUM_MAX_S + _EPS:
        return DurationBucket.MEDIUM
    return DurationBucket.LONG


@dataclass(frozen=True)
class Episode:
    start_window: int
    end_window: int
    duration_s: float
    bucket: DurationBucket

    @property
    def n_windows(self) -> int:
        return self.end_window - self.start_window + 1


def _runs(flags: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive (start, end) of maximal runs of True."""
    padded = np.concatenate([[False], np.asarray(flags, dtype=bool), [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return [(int(start), int(stop) - 1) for start, stop in zip(edges[::2], edges[1::2])]


def extract_episodes(labels: np.ndarray, *, window_s: float = 3.0, hop_s: float = 1.5) -> list[Episode]:
    episodes = []
    for start, end in _runs(np.asarray(labels) == 1):
        duration = round(window_s + (end - start) * hop_s, 9)
        episodes.append(Episode(start, end, duration, bucket_for(duration)))
    return episodes


@dataclass(frozen=True)
class EpisodeOutcome:
    episode: Episode
    source: int
    detected: bool
    detected_windows: int
    dfog_pct: float
    latency_s: float | None


@dataclass(frozen=True)
class FalsePositiveEpisode:
    source: int
    start_window: int
    end_window: int
    min_distance_s: float | None
    after_previous_s: float | None
    before_next_s: float | None


@dataclass(frozen=True)
class BucketStats:
    episodes: int = 0
    detected: int = 0
    fog_windows: int = 0
    detected_windows: int = 0
    dfe_pct: float | None = None
    dfw_pct: float | None = None
    latency_mean_s: float | None = None
    latency_sd_s: float | None = None
    latency_max_s: float | None = None


def _bucket_stats(outcomes: Sequence[EpisodeOutcome]) -> BucketStats:
    if not outcomes:
        return BucketStats()
    detected = sum(1 for outcome in outcomes if outcome.detected)
    fog_windows = sum(outcome.episode.n_windows for outcome in outcomes)
    detected_windows = sum(outcome.detected_windows for outcome in outcomes)
    latencies = np.array([o.latency_s for o in outcomes if o.latency_s is not None], dtype=np.float64)
    return BucketStats(
        episodes=len(outcomes),
        detected=detected,
        fog_windows=fog_windows,
        detected_windows=detected_windows,
        dfe_pct=100.0 * detected / len(outcomes),
        dfw_pct=100.0 * detected_windows / fog_windows,
        latency_mean_s=float(latencies.mean()) if latencies.size else None,
        latency_sd_s=float(latencies.std()) if latencies.size else None,
        latency_max_s=float(latencies.max()) if latencies.size else None,
    )


def _mean_or_none(values: list[float | None]) -> float | None:
    present = [value for value in values if value is not None]
    return float(np.mean(present)) if present else None


@dataclass(frozen=True)
class EpisodeReport:
    overall: BucketStats
    buckets: dict[str, BucketStats]
    dfw_trace_pct: float | None
    dfog_per_episode_mean: float | None
    fp_episodes: int
    fp_min_distance_mean_s: float | None
    fp_after_previous_mean_s: float | None
    fp_before_next_mean_s: float | None
    mixed_windows: int
    total_windows: int
    outcomes: list[EpisodeOutcome] = field(default_factory=list)
    false_positives: list[FalsePositiveEpisode] = field(default_factory=list)

    def to_dict(self, *, include_episodes: bool = False) -> dict:
        payload = asdict(self)
        if not include_episodes:
            payload.pop("outcomes")
            payload.pop("false_positives")
        return payload


def _score_segment(
    truth: np.ndarray, decision: np.ndarray, offset: int, source: int, window_s: float, hop_s: float
) -> tuple[list[EpisodeOutcome], list[FalsePositiveEpisode]]:
    outcomes = []
    episodes = extract_episodes(truth, window_s=window_s, hop_s=hop_s)
    for episode in episodes:
        hits = np.flatnonzero(decision[episode.start_window:episode.end_window + 1] == 1)
        latency = float(hits[0]) * hop_s if hits.size else None
        shifted = Episode(offset + episode.start_window, offset + episode.end_window, episode.duration_s, episode.bucket)
        outcomes.append(
            EpisodeOutcome(
                episode=shifted,
                source=source,
                detected=bool(hits.size),
                detected_windows=int(hits.size),
                dfog_pct=100.0 * hits.size / episode.n_windows,
                latency_s=latency,
            )
        )

    false_positives = []
    fog_positions = np.flatnonzero(truth == 1)
    for start, end in _runs(decision == 1):
        if (truth[start:end + 1] == 1).any():
            continue
        before = fog_positions[fog_positions < start]
        after = fog_positions[fog_positions > end]
        previous_end = int(before[-1]) if before.size else None
        next_start = int(after[0]) if after.size else None
        gaps = [gap for gap in (
            start - previous_end if previous_end is not None else None,
            next_start - end if next_start is not None else None,
        ) if gap is not None]
        false_positives.append(
            FalsePositiveEpisode(
                source=source,
                start_window=offset + start,
                end_window=offset + end,
                min_distance_s=min(gaps) * hop_s if gaps else None,
                after_previous_s=(start - previous_end) * hop_s if previous_end is not None else None,
                before_next_s=(next_start - end) * hop_s if next_start is not None else None,
            )
        )
    return outcomes, false_positives


def episode_report(traces: PredictionTrace | Sequence[PredictionTrace]) -> EpisodeReport:
    """Episode-level detection statistics; episodes never span two sources."""
    trace = traces if isinstance(traces, PredictionTrace) else concat_traces(list(traces))
    if len(trace) == 0:
        raise EmptyInputError("episode report of an empty trace")
    outcomes: list[EpisodeOutcome] = []
    false_positives: list[FalsePositiveEpisode] = []
    for indices in trace.segments():
        offset = int(indices[0])
        found, fps = _score_segment(
            trace.truth[indices], trace.decision[indices], offset, int(trace.source[offset]), trace.window_s, trace.hop_s
        )
        outcomes.extend(found)
        false_positives.extend(fps)

    truth_fog = trace.truth == 1
    fog_total = int(truth_fog.sum())
    mixed = int(np.count_nonzero((trace.fog_fraction > 0) & (trace.fog_fraction < 1) & ~truth_fog))
    return EpisodeReport(
        overall=_bucket_stats(outcomes),
        buckets={bucket.value: _bucket_stats([o for o in outcomes if o.episode.bucket is bucket]) for bucket in DurationBucket},
        dfw_trace_pct=100.0 * int((truth_fog & (trace.decision == 1)).sum()) / fog_total if fog_total else None,
        dfog_per_episode_mean=float(np.mean([o.dfog_pct for o in outcomes])) if outcomes else None,
        fp_episodes=len(false_positives),
        fp_min_distance_mean_s=_mean_or_none([fp.min_distance_s for fp in false_positives]),
        fp_after_previous_mean_s=_mean_or_none([fp.after_previous_s for fp in false_positives]),
        fp_before_next_mean_s=_mean_or_none([fp.before_next_s for fp in false_positives]),
        mixed_windows=mixed,
        total_windows=len(trace),
        outcomes=outcomes,
        false_positives=false_positives,
    )


def detected_episode_pct(truth: np.ndarray, decision: np.ndarray, source: np.ndarray | None = None) -> float | None:
    """Share of ground-truth episodes with at least one detected window."""
    truth = np.asarray(truth)
    decision = np.asarray(decision)
    source = np.zeros(truth.size, dtype=np.int64) if source is None else np.asarray(source)
    total = hits = 0
    for src in np.unique(source):
        selected = source == src
        seg_truth, seg_decision = truth[selected], decision[selected]
        for start, end in _runs(seg_truth == 1):
            total += 1
            hits += bool((seg_decision[start:end + 1] == 1).any())
    return 100.0 * hits / total if total else None


# --- smoothing ---

def smooth_decisions(decision: np.ndarray, passes: int = 1) -> np.ndarray:
    """Flip interior windows whose two neighbours agree with each other but not with them."""
    if passes < 0:
        raise StructuralError("majority vote passes must be non-negative")
    out = np.asarray(decision, dtype=np.int8).copy()
    for _ in range(passes):
        if out.size < 3:
            break
        previous = out.copy()
        left, middle, right = previous[:-2], previous[1:-1], previous[2:]
        flip = (left == right) & (middle != left)
        out[1:-1][flip] = left[flip]
    return out


def majority_vote(trace: PredictionTrace, passes: int = 1) -> PredictionTrace:
    decision = trace.decision.copy()
    for indices in trace.segments():
        decision[indices] = smooth_decisions(trace.decision[indices], passes)
    return trace.with_decisions(decision)


# --- rendering ---

def evaluation_summary(trace: PredictionTrace) -> dict:
    metrics = window_metrics(trace)
    try:
        auc = roc_auc(trace)
    except UndefinedMetricError:
        auc = None
    return {
        "windows": len(trace),
        "window_metrics": metrics.to_dict(),
        "auc": auc,
        "loss": bce_from_probabilities(trace.probability, trace.truth),
        "episodes": episode_report(trace).to_dict(),
    }


def write_report_json(summary: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def _fmt(value: float | None, digits: int = 3) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"


def format_report_text(summary: dict) -> str:
    metrics = summary["window_metrics"]
    episodes = summary["episodes"]
    lines = [
        f"windows        {summary['windows']}",
        f"sensitivity    {_fmt(metrics['sensitivity'])}",
        f"specificity    {_fmt(metrics['specificity'])}",
        f"precision      {_fmt(metrics['precision'])}",
        f"f1             {_fmt(metrics['f1'])}",
        f"accuracy       {_fmt(metrics['accuracy'])}",
        f"auc            {_fmt(summary['auc'])}",
        f"dfw (trace) %  {_fmt(episodes['dfw_trace_pct'], 1)}",
        f"dfog/episode % {_fmt(episodes['dfog_per_episode_mean'], 1)}",
        f"fp episodes    {episodes['fp_episodes']}",
        f"mixed windows  {episodes['mixed_windows']}",
        "",
        f"{'bucket':<8} {'episodes':>8} {'dfe %':>7} {'dfw %':>7} {'lat mean':>9} {'lat sd':>7} {'lat max':>8}",
    ]
    for name, stats in [("all", episodes["overall"])] + list(episodes["buckets"].items()):
        lines.append(
            f"{name:<8} {stats['episodes']:>8} {_fmt(stats['dfe_pct'], 1):>7} {_fmt(stats['dfw_pct'], 1):>7} "
            f"{_fmt(stats['latency_mean_s'], 2):>9} {_fmt(stats['latency_sd_s'], 2):>7} {_fmt(stats['latency_max_s'], 2):>8}"
        )
    return "\n".join(lines) + "\n"


def write_episode_csv(report: EpisodeReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [
        {
            "episode_id": index,
            "source": outcome.source,
            "start_window": outcome.episode.start_window,
            "bucket": outcome.episode.bucket.value,
            "duration_s": outcome.episode.duration_s,
            "detected": int(outcome.detected),
            "dfog_pct": round(outcome.dfog_pct, 6),
            "latency_s": outcome.latency_s,
        }
        for index, outcome in enumerate(report.outcomes)
    ]
    columns = ["episode_id", "source", "start_window", "bucket", "duration_s", "detected", "dfog_pct", "latency_s"]
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False, lineterminator="\n")
    return path


__all__ = [
    "BucketStats",
    "ConfusionCounts",
    "DurationBucket",
    "Episode",
    "EpisodeReport",
    "WindowMetrics",
    "auc_from_scores",
    "bce_from_probabilities",
    "bucket_for",
    "confusion",
    "detected_episode_pct",
    "episode_report",
    "evaluation_summary",
    "extract_episodes",
    "format_report_text",
    "majority_vote",
    "metrics_from_counts",
    "roc_auc",
    "roc_curve",
    "smooth_decisions",
    "window_metrics",
    "window_metrics_from_arrays",
    "write_episode_csv",
    "write_report_json",
]
