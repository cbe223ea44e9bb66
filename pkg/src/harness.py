"""Experiment orchestration: cohorts, group splits, LOGO runs and label sweeps.

A master seed fans out to every stage through ``derive_seed``, so any fold
or sweep point can be rerun alone and give the same numbers.
"""

from __future__ import annotations

import hashlib
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd

from errors import ConfigError, DataError, FormatError
from ingest import MedicationState, SignalStream, load_canonical_csv, load_daphnet, resample, to_g, write_canonical_csv
from logging_utils import log_json
from metrics import bce_from_probabilities, episode_report, roc_auc, window_metrics
from predictions import PredictionTrace
from registry import FoldRecord, RunManifest, RunRegistry, assert_disjoint, write_manifest
from selfsupervised import finetune, predict, pretrain, train_supervised
from settings import PretrainSegmentation, RunConfig
from tracing import get_tracer
from windowing import WindowSet, concat_windows, segment

MATCHING_FEATURES = ("age", "years_since_dx", "updrs")
LOGO_METRICS = ("precision", "recall", "f1", "accuracy", "specificity", "loss", "dfe", "dfw")
FOLD_COLUMNS = ("repeat", "seed", "group", "model") + LOGO_METRICS + ("auc",)
SUMMARY_COLUMNS = ("group", "model") + LOGO_METRICS
SWEEP_COLUMNS = ("fraction", "model", "precision", "recall", "f1", "accuracy")
_MODELS = ("ssl", "supervised")


def derive_seed(master: int, stage: str, *indices: int) -> int:
    """Independent 32-bit seed for a named stage of a run."""
    sequence = np.random.SeedSequence(int(master), spawn_key=(zlib.crc32(stage.encode("utf-8")), *map(int, indices)))
    return int(sequence.generate_state(1)[0])


def fold_seeds(repeat_seed: int, direction: int) -> dict[str, int]:
    return {stage: derive_seed(repeat_seed, stage, direction) for stage in ("pretrain", "mask", "finetune", "supervised")}


@dataclass(frozen=True)
class SubjectInfo:
    subject_id: str
    age: float = float("nan")
    years_since_dx: float = float("nan")
    updrs: float = float("nan")
    medication: MedicationState = MedicationState.UNKNOWN
    path: str | None = None

    def features(self) -> np.ndarray:
        return np.array([self.age, self.years_since_dx, self.updrs], dtype=np.float64)


@dataclass(frozen=True)
class LogoPlan:
    group_a: tuple[str, ...]
    group_b: tuple[str, ...]
    seeds: tuple[int, ...]
    subjects: tuple[SubjectInfo, ...] = ()
    imputed: tuple[str, ...] = ()
    balance: dict[str, dict[str, float]] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if set(self.group_a) & set(self.group_b):
            raise ConfigError("LOGO groups overlap")
        if not self.group_a or not self.group_b:
            raise ConfigError("LOGO needs two non-empty groups")
        if not self.seeds:
            raise ConfigError("LOGO needs at least one repeat seed")

    @property
    def repeats(self) -> int:
        return len(self.seeds)

    def directions(self) -> list[tuple[str, tuple[str, ...], tuple[str, ...]]]:
        """(held-out group name, training ids, test ids) for both directions."""
        return [("B", self.group_a, self.group_b), ("A", self.group_b, self.group_a)]


def _feature_matrix(subjects: Sequence[SubjectInfo]) -> tuple[np.ndarray, tuple[str, ...]]:
    values = np.vstack([subject.features() for subject in subjects])
    missing = np.isnan(values)
    imputed = tuple(subjects[i].subject_id for i in np.flatnonzero(missing.any(axis=1)))
    for column in range(values.shape[1]):
        present = values[~missing[:, column], column]
        values[missing[:, column], column] = float(np.median(present)) if present.size else 0.0
    return values, imputed


def _balance(values: np.ndarray, in_a: np.ndarray) -> dict[str, dict[str, float]]:
    report = {}
    for column, name in enumerate(MATCHING_FEATURES):
        a, b = values[in_a, column], values[~in_a, column]
        pooled = float(np.sqrt((a.var() + b.var()) / 2.0))
        report[name] = {"mean_a": float(a.mean()), "mean_b": float(b.mean()), "pooled_sd": pooled}
    return report


def _repeat_seeds(seed: int, repeats: int) -> tuple[int, ...]:
    return tuple(derive_seed(seed, "repeat", r) for r in range(repeats))


def make_logo_split(subjects: Sequence[SubjectInfo], seed: int, repeats: int = 3) -> LogoPlan:
    """Two groups matched on age, disease duration and UPDRS.

    Subjects are ordered by a composite z-score (ties broken by a seeded
    shuffle) and each consecutive pair is split between the groups by a
    seeded coin flip.
    """
    if len(subjects) < 2:
        raise ConfigError("LOGO needs at least two subjects")
    values, imputed = _feature_matrix(subjects)
    spread = values.std(axis=0)
    z = np.divide(values - values.mean(axis=0), spread, out=np.zeros_like(values), where=spread > 0)
    composite = z.sum(axis=1)
    rng = np.random.default_rng(derive_seed(seed, "logo-split"))
    tie_break = rng.permutation(len(subjects))
    order = np.lexsort((tie_break, composite))

    in_a = np.zeros(len(subjects), dtype=bool)
    for start in range(0, len(order) - 1, 2):
        first, second = order[start], order[start + 1]
        in_a[first if rng.random() < 0.5 else second] = True
    if len(order) % 2:
        in_a[order[-1]] = rng.random() < 0.5

    balance = _balance(values, in_a)
    for name, stats in balance.items():
        if abs(stats["mean_a"] - stats["mean_b"]) > stats["pooled_sd"] and stats["pooled_sd"] > 0:
            log_json(logging.WARNING, "logo_split_imbalanced", feature=name, **stats)
    if imputed:
        log_json(logging.INFO, "logo_features_imputed", subjects=list(imputed))
    ids = [subject.subject_id for subject in subjects]
    return LogoPlan(
        group_a=tuple(ids[i] for i in np.flatnonzero(in_a)),
        group_b=tuple(ids[i] for i in np.flatnonzero(~in_a)),
        seeds=_repeat_seeds(seed, repeats),
        subjects=tuple(subjects),
        imputed=imputed,
        balance=balance,
    )


def make_attribute_split(subjects: Sequence[SubjectInfo], attribute: str, seed: int, repeats: int = 3) -> LogoPlan:
    """Groups by medication state (on vs off) or a numeric feature split at its median."""
    if attribute == "medication":
        group_a = tuple(s.subject_id for s in subjects if s.medication is MedicationState.ON)
        group_b = tuple(s.subject_id for s in subjects if s.medication is MedicationState.OFF)
    elif attribute in MATCHING_FEATURES:
        values, _ = _feature_matrix(subjects)
        column = values[:, MATCHING_FEATURES.index(attribute)]
        median = float(np.median(column))
        group_a = tuple(s.subject_id for s, v in zip(subjects, column) if v <= median)
        group_b = tuple(s.subject_id for s, v in zip(subjects, column) if v > median)
    else:
        raise ConfigError(f"cannot split on {attribute!r}; use medication or one of {', '.join(MATCHING_FEATURES)}")
    if not group_a or not group_b:
        raise ConfigError(f"splitting on {attribute!r} leaves an empty group")
    return LogoPlan(group_a=group_a, group_b=group_b, seeds=_repeat_seeds(seed, repeats), subjects=tuple(subjects))


# --- cohorts ---

def _synth_stream(rng: np.random.Generator, subject_id: str, duration_s: float, fog_rate: float, rate_hz: float) -> SignalStream:
    count = int(round(duration_s * rate_hz))
    fog_total = int(round(fog_rate * count))
    lengths = []
    remaining = fog_total
    while remaining > 0:
        length = min(int(rng.integers(int(3 * rate_hz), int(20 * rate_hz) + 1)), remaining)
        lengths.append(length)
        remaining -= length
    gaps = rng.multinomial(count - fog_total, rng.dirichlet(np.ones(len(lengths) + 1)))

    # 0 rest, 1 walking, 2 freezing
    state = np.zeros(count, dtype=np.int8)
    cursor = 0
    for index, gap in enumerate(gaps):
        walking = rng.random() < 0.6
        end = cursor + int(gap)
        while cursor < end:
            block = min(int(rng.uniform(5, 30) * rate_hz), end - cursor)
            state[cursor:cursor + block] = 1 if walking else 0
            cursor += block
            walking = not walking
        if index < len(lengths):
            state[cursor:cursor + lengths[index]] = 2
            cursor += lengths[index]

    t = np.arange(count) / rate_hz
    step = rng.uniform(1.7, 2.2)
    tremor = rng.uniform(3.5, 7.5)
    gain = rng.uniform(0.85, 1.15)
    phase = rng.uniform(0, 2 * np.pi, size=3)
    walk = np.column_stack([
        0.15 * gain * np.sin(np.pi * step * t + phase[0]),
        0.30 * gain * np.sin(2 * np.pi * step * t + phase[1]),
        1.25 + 0.40 * gain * np.sin(2 * np.pi * step * t + phase[2]),
    ])
    freeze = np.column_stack([
        0.08 * np.sin(2 * np.pi * tremor * t + phase[0]),
        0.25 * gain * np.sin(2 * np.pi * tremor * t + phase[1]),
        1.10 + 0.08 * np.sin(2 * np.pi * tremor * t + phase[2]),
    ])
    rest = np.tile([0.0, 0.0, 1.0], (count, 1))
    acc = np.where((state == 1)[:, None], walk, np.where((state == 2)[:, None], freeze, rest))
    noise = np.where((state == 0)[:, None], 0.01, 0.02)
    acc = acc + rng.normal(0.0, 1.0, size=acc.shape) * noise
    return SignalStream(t=t, acc=acc, labels=(state == 2).astype(np.int8), rate_hz=rate_hz, subject_id=subject_id)


def synth_cohort(
    subjects: int = 10, duration_s: float = 900.0, fog_rate: float = 0.3, seed: int = 0, rate_hz: float = 40.0
) -> list[SignalStream]:
    """Synthetic recordings: gait, rest and 3-8 Hz freezing bursts with exact labels."""
    if not 0 <= fog_rate <= 1:
        raise ConfigError(f"fog_rate must lie in [0, 1], got {fog_rate}")
    if subjects <= 0 or duration_s <= 0:
        raise ConfigError("synthetic cohort needs a positive subject count and duration")
    return [
        _synth_stream(np.random.default_rng(derive_seed(seed, "synth", index)), f"S{index + 1:02d}", duration_s, fog_rate, rate_hz)
        for index in range(subjects)
    ]


def synth_subjects(streams: Sequence[SignalStream], seed: int = 0) -> list[SubjectInfo]:
    rng = np.random.default_rng(derive_seed(seed, "synth-subjects"))
    return [
        SubjectInfo(
            subject_id=stream.subject_id,
            age=round(float(rng.uniform(55, 80)), 1),
            years_since_dx=round(float(rng.uniform(1, 20)), 1),
            updrs=round(float(rng.uniform(10, 60)), 1),
            medication=MedicationState.ON if rng.random() < 0.5 else MedicationState.OFF,
            path=f"{stream.subject_id}.csv",
        )
        for stream in streams
    ]


def write_subjects_csv(subjects: Sequence[SubjectInfo], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [
        {
            "subject_id": s.subject_id,
            "age": s.age,
            "years_since_dx": s.years_since_dx,
            "updrs": s.updrs,
            "medication": s.medication.value,
            "path": s.path or f"{s.subject_id}.csv",
        }
        for s in subjects
    ]
    pd.DataFrame(rows).to_csv(path, index=False, lineterminator="\n")
    return path


def _as_float(value: Any) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        return float("nan")


def read_subjects_csv(path: str | Path) -> list[SubjectInfo]:
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype={"subject_id": str})
    except (OSError, ValueError, pd.errors.ParserError) as exc:
        raise FormatError(f"cannot read subjects file {path}: {exc}") from exc
    if "subject_id" not in frame.columns:
        raise FormatError(f"{path}: subjects file needs a subject_id column")
    subjects = []
    for record in frame.to_dict(orient="records"):
        medication = str(record.get("medication") or "unknown").strip().lower()
        subjects.append(
            SubjectInfo(
                subject_id=str(record["subject_id"]),
                age=_as_float(record.get("age")),
                years_since_dx=_as_float(record.get("years_since_dx")),
                updrs=_as_float(record.get("updrs")),
                medication=MedicationState(medication) if medication in {"on", "off"} else MedicationState.UNKNOWN,
                path=None if pd.isna(record.get("path")) else str(record.get("path")),
            )
        )
    return subjects


def write_cohort(streams: Sequence[SignalStream], subjects: Sequence[SubjectInfo], out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    for stream in streams:
        write_canonical_csv(stream, out_dir / f"{stream.subject_id}.csv")
    return write_subjects_csv(subjects, out_dir / "subjects.csv")


def load_cohort(config: RunConfig) -> tuple[dict[str, SignalStream], list[SubjectInfo]]:
    """Subjects file plus one recording per subject from ``data.data_dir``."""
    root = Path(config.data.data_dir)
    subjects_path = root / config.data.subjects_file
    if not subjects_path.is_file():
        raise ConfigError(f"subjects file not found: {subjects_path}")
    subjects = read_subjects_csv(subjects_path)
    streams = {}
    for subject in subjects:
        path = root / (subject.path or f"{subject.subject_id}.csv")
        if not path.is_file():
            raise ConfigError(f"recording not found for {subject.subject_id}: {path}")
        if path.suffix == ".txt":
            stream = load_daphnet(path, sensor=config.data.daphnet_sensor, subject_id=subject.subject_id)
        else:
            stream = load_canonical_csv(path, subject_id=subject.subject_id, unit=config.data.unit, medication_state=subject.medication)
        streams[subject.subject_id] = stream
    return streams, subjects


def prepare_stream(stream: SignalStream, rate_hz: float) -> SignalStream:
    stream = to_g(stream)
    return stream if abs(stream.rate_hz - rate_hz) < 1e-9 else resample(stream, rate_hz)


def stream_fingerprint(stream: SignalStream) -> str:
    digest = hashlib.sha256(stream.subject_id.encode("utf-8"))
    digest.update(np.ascontiguousarray(stream.acc).tobytes())
    digest.update(stream.labels.tobytes())
    return digest.hexdigest()


# --- LOGO ---

@dataclass
class LogoReport:
    fold_rows: list[dict[str, Any]]
    summary_rows: list[dict[str, Any]]
    manifest: RunManifest
    traces: dict[tuple[int, str, str], PredictionTrace] = field(default_factory=dict)


def _check_arch(config: RunConfig) -> None:
    expected = config.window.frame_length(config.data.working_rate_hz)
    if config.arch.frame_length != expected:
        raise ConfigError(
            f"arch.frame_length={config.arch.frame_length} but {config.window.window_s} s at "
            f"{config.data.working_rate_hz} Hz gives {expected} samples"
        )


def _metric_row(trace: PredictionTrace) -> dict[str, float | None]:
    metrics = window_metrics(trace)
    episodes = episode_report(trace)
    try:
        auc = roc_auc(trace)
    except DataError:
        auc = None
    return {
        "precision": metrics.precision,
        "recall": metrics.sensitivity,
        "f1": metrics.f1,
        "accuracy": metrics.accuracy,
        "specificity": metrics.specificity,
        "loss": bce_from_probabilities(trace.probability, trace.truth),
        "dfe": episodes.overall.dfe_pct,
        "dfw": episodes.dfw_trace_pct,
        "auc": auc,
    }


def _segment_all(streams: Sequence[SignalStream], spec) -> WindowSet:
    return concat_windows([segment(stream, spec) for stream in streams])


def _train_corpus(config: RunConfig, streams: Sequence[SignalStream]):
    spec = config.window
    pretrain_spec = spec.inference() if config.train.pretrain_segmentation is PretrainSegmentation.FIXED else spec.training()
    return _segment_all(streams, pretrain_spec).unlabeled(), _segment_all(streams, spec.training())


def _run_fold(
    config: RunConfig,
    streams: Mapping[str, SignalStream],
    repeat: int,
    repeat_seed: int,
    direction: int,
    held_out: str,
    train_ids: Sequence[str],
    test_ids: Sequence[str],
) -> tuple[list[dict[str, Any]], dict[str, Any], dict[tuple[int, str, str], PredictionTrace]]:
    seeds = fold_seeds(repeat_seed, direction)
    train_streams = [streams[sid] for sid in train_ids]
    with get_tracer().start_as_current_span("harness.logo_fold") as span:
        span.set_attribute("fogmon.repeat", repeat)
        span.set_attribute("fogmon.held_out", held_out)
        unlabeled, labeled = _train_corpus(config, train_streams)
        # the held-out group is only segmented once the training corpus exists
        test = _segment_all([streams[sid] for sid in test_ids], config.window.inference())
        fold = {
            "repeat": repeat,
            "held_out": held_out,
            "seeds": seeds,
            "train_fingerprints": [stream_fingerprint(s) for s in train_streams],
            "test_fingerprints": [stream_fingerprint(streams[sid]) for sid in test_ids],
        }
        assert_disjoint(fold["train_fingerprints"], fold["test_fingerprints"])

        traces: dict[tuple[int, str, str], PredictionTrace] = {}
        mask = replace(config.mask, rng_seed=seeds["mask"])
        bundle = pretrain(unlabeled, config.arch, config.train, mask, seeds["pretrain"])
        tuned = finetune(bundle, labeled, config.train, seeds["finetune"])
        traces[(repeat, held_out, "ssl")] = predict(tuned, test)
        if config.harness.include_supervised:
            baseline = train_supervised(labeled, config.arch, config.train, seeds["supervised"])
            traces[(repeat, held_out, "supervised")] = predict(baseline, test)

    rows = []
    for (_, _, model), trace in traces.items():
        row = {"repeat": repeat, "seed": repeat_seed, "group": held_out, "model": model, **_metric_row(trace)}
        rows.append(row)
        log_json(logging.INFO, "logo_fold", repeat=repeat, group=held_out, model=model, f1=row["f1"], accuracy=row["accuracy"])
    return rows, fold, traces


def _summarize(fold_rows: list[dict[str, Any]]) -> list[dict[str, Any]]:
    frame = pd.DataFrame(fold_rows, columns=list(FOLD_COLUMNS))
    frame[list(LOGO_METRICS)] = frame[list(LOGO_METRICS)].astype(float)
    summary = []
    for model in _MODELS:
        subset = frame[frame["model"] == model]
        if subset.empty:
            continue
        per_group = subset.groupby("group", sort=True)[list(LOGO_METRICS)].mean()
        for group, values in per_group.iterrows():
            summary.append({"group": group, "model": model, **values.to_dict()})
        for label, reducer in (("Avg", "mean"), ("Min", "min"), ("Max", "max")):
            summary.append({"group": label, "model": model, **getattr(per_group, reducer)().to_dict()})
        summary.append({"group": "STD", "model": model, **per_group.std(ddof=0).to_dict()})
    return summary


def write_rows_csv(rows: Sequence[dict[str, Any]], columns: Sequence[str], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(rows), columns=list(columns)).to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
    log_json(logging.INFO, "artifact_written", path=str(path), rows=len(rows))
    return path


def run_logo(
    config: RunConfig,
    plan: LogoPlan,
    cohort: Mapping[str, SignalStream],
    *,
    out_dir: str | Path | None = None,
) -> LogoReport:
    """Leave-one-group-out: train on one group, test on the other, both ways, per repeat."""
    _check_arch(config)
    missing = (set(plan.group_a) | set(plan.group_b)) - set(cohort)
    if missing:
        raise ConfigError(f"no recordings for subjects {sorted(missing)}")
    streams = {sid: prepare_stream(stream, config.data.working_rate_hz) for sid, stream in cohort.items()}

    jobs = []
    for repeat, repeat_seed in enumerate(plan.seeds):
        repeat_plan = plan
        if config.harness.reshuffle_groups:
            if not plan.subjects:
                raise ConfigError("reshuffling groups needs subject features in the plan")
            repeat_plan = make_logo_split(plan.subjects, repeat_seed, repeats=1)
        for direction, (held_out, train_ids, test_ids) in enumerate(repeat_plan.directions()):
            jobs.append((repeat, repeat_seed, direction, held_out, train_ids, test_ids))

    with ThreadPoolExecutor(max_workers=config.harness.workers) as pool:
        results = list(pool.map(lambda job: _run_fold(config, streams, *job), jobs))

    fold_rows = [row for rows, _, _ in results for row in rows]
    fold_rows.sort(key=lambda row: (row["repeat"], row["group"], _MODELS.index(row["model"])))
    folds = [fold for _, fold, _ in results]
    traces = {key: trace for _, _, found in results for key, trace in found.items()}
    summary_rows = _summarize(fold_rows)

    manifest = RunManifest(
        command="logo",
        config_hash=config.config_hash(),
        master_seed=config.seed,
        seeds={f"repeat{fold['repeat']}.{fold['held_out']}.{stage}": value for fold in folds for stage, value in fold["seeds"].items()},
        folds=[
            FoldRecord(
                repeat=fold["repeat"],
                held_out=fold["held_out"],
                train_fingerprints=sorted(fold["train_fingerprints"]),
                test_fingerprints=sorted(fold["test_fingerprints"]),
            )
            for fold in sorted(folds, key=lambda fold: (fold["repeat"], fold["held_out"]))
        ],
    )
    manifest.check_disjoint()
    if out_dir is not None:
        out = Path(out_dir)
        write_rows_csv(fold_rows, FOLD_COLUMNS, out / "logo_folds.csv")
        write_rows_csv(summary_rows, SUMMARY_COLUMNS, out / "logo_summary.csv")
        manifest.outputs = ["logo_folds.csv", "logo_summary.csv"]
        write_manifest(manifest, out)
        RunRegistry.open(out).record(manifest, fold_rows)
    return LogoReport(fold_rows=fold_rows, summary_rows=summary_rows, manifest=manifest, traces=traces)


def label_ratio_sweep(
    config: RunConfig,
    plan: LogoPlan,
    cohort: Mapping[str, SignalStream],
    fractions: Sequence[float] | None = None,
    *,
    out_dir: str | Path | None = None,
) -> list[dict[str, Any]]:
    """SSL versus supervised at several label fractions on the first LOGO direction."""
    _check_arch(config)
    fractions = tuple(config.harness.fractions if fractions is None else fractions)
    if any(not 0 < f <= 1 for f in fractions):
        raise ConfigError("label fractions must lie in (0, 1]")
    streams = {sid: prepare_stream(stream, config.data.working_rate_hz) for sid, stream in cohort.items()}
    held_out, train_ids, test_ids = plan.directions()[0]
    seeds = fold_seeds(plan.seeds[0], 0)
    train_streams = [streams[sid] for sid in train_ids]
    unlabeled, labeled = _train_corpus(config, train_streams)
    test = _segment_all([streams[sid] for sid in test_ids], config.window.inference())

    bundle = pretrain(unlabeled, config.arch, config.train, replace(config.mask, rng_seed=seeds["mask"]), seeds["pretrain"])
    rows = []
    for fraction in fractions:
        plan_at = replace(config.train, label_fraction=fraction)
        try:
            arms = [
                ("ssl", finetune(bundle, labeled, plan_at, seeds["finetune"])),
                ("supervised", train_supervised(labeled, config.arch, plan_at, seeds["supervised"])),
            ]
        except ConfigError as exc:
            log_json(logging.WARNING, "label_sweep_skipped", fraction=fraction, reason=str(exc))
            continue
        for model, trained in arms:
            metrics = window_metrics(predict(trained, test))
            rows.append({
                "fraction": fraction,
                "model": model,
                "precision": metrics.precision,
                "recall": metrics.sensitivity,
                "f1": metrics.f1,
                "accuracy": metrics.accuracy,
            })
            log_json(logging.INFO, "label_sweep_point", fraction=fraction, model=model, f1=metrics.f1)

    if out_dir is not None:
        out = Path(out_dir)
        write_rows_csv(rows, SWEEP_COLUMNS, out / "label_sweep.csv")
        manifest = RunManifest(
            command="label-sweep",
            config_hash=config.config_hash(),
            master_seed=config.seed,
            seeds=seeds,
            train_fingerprints=sorted(stream_fingerprint(s) for s in train_streams),
            test_fingerprints=sorted(stream_fingerprint(streams[sid]) for sid in test_ids),
            outputs=["label_sweep.csv"],
        )
        manifest.check_disjoint()
        write_manifest(manifest, out)
        RunRegistry.open(out).record(manifest, rows)
    return rows


__all__ = [
    "LogoPlan",
    "LogoReport",
    "SubjectInfo",
    "derive_seed",
    "fold_seeds",
    "label_ratio_sweep",
    "load_cohort",
    "make_attribute_split",
    "make_logo_split",
    "prepare_stream",
    "read_subjects_csv",
    "run_logo",
    "stream_fingerprint",
    "synth_cohort",
    "synth_subjects",
    "write_cohort",
    "write_rows_csv",
    "write_subjects_csv",
]
