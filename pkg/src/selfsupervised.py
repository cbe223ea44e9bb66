"""Masked-reconstruction pretraining and label-efficient finetuning.

Pretraining sees frames only (``UnlabeledWindows``): fixed-length segments
of each frame are zeroed across all channels and the pretext head learns
to reconstruct the full frame, with the loss counted on the masked
positions. Finetuning attaches a freshly initialized classifier to the
pretrained encoder; with the encoder frozen the embeddings are computed
once and only the head is trained.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from pydantic import BaseModel, Field

from errors import ConfigError, EmptyInputError, FormatError, NumericError, StructuralError
from gate import Predictor, timed_inference
from logging_utils import log_json
from neuralcore import (
    Head,
    LossKind,
    ParamSet,
    adam_step,
    backward,
    bce,
    classifier_names,
    encode,
    encoder_names,
    forward,
    forward_from_embeddings,
    init_classifier,
    init_params,
    load_params,
    masked_mse,
    predict_proba,
    pretext_names,
    save_params,
)
from predictions import PredictionTrace
from settings import ArchSpec, MaskSpec, TrainPlan
from tracing import get_tracer
from windowing import UnlabeledWindows, WindowSet

_EMBED_CHUNK = 256


class RunMetadata(BaseModel):
    """Provenance stored next to a weight file."""

    stage: str
    seed: int
    arch: dict[str, Any]
    plan: dict[str, Any]
    mask: dict[str, Any] | None = None
    data_fingerprint: str | None = None
    windows: int = 0
    label_fraction: float | None = None
    labeled_windows: int | None = None
    pretrain_losses: list[float] = Field(default_factory=list)
    train_losses: list[float] = Field(default_factory=list)
    encoder_checksum: str | None = None
    created_at: str = Field(default_factory=lambda: datetime.now(timezone.utc).isoformat())


@dataclass
class ModelBundle:
    params: ParamSet
    arch: ArchSpec
    metadata: RunMetadata

    @property
    def has_classifier(self) -> bool:
        return all(name in self.params.arrays for name in classifier_names(self.arch))

    @property
    def has_pretext(self) -> bool:
        return all(name in self.params.arrays for name in pretext_names())

    def encoder_checksum(self) -> str:
        return self.params.checksum(encoder_names(self.arch))

    def predictor(self) -> Predictor:
        if not self.has_classifier:
            raise StructuralError("model bundle has no classifier head; finetune it first")
        params, arch = self.params, self.arch
        return lambda frames: predict_proba(params, arch, frames)


def _frames_of(windows: WindowSet | UnlabeledWindows | np.ndarray) -> np.ndarray:
    if isinstance(windows, (WindowSet, UnlabeledWindows)):
        return windows.frames
    return np.asarray(windows, dtype=np.float64)


def _seed_int(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def apply_mask(
    windows: WindowSet | UnlabeledWindows | np.ndarray, mask: MaskSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Masked copies of the frames and an N x T' boolean map of masked samples.

    Each frame gets ``num_segments`` non-overlapping runs of ``segment_len_m``
    samples; every channel at a masked time step is set to ``fill_value``.
    """
    frames = _frames_of(windows)
    count, length = frames.shape[0], frames.shape[1]
    mask.validate_for(length)
    k, m = mask.num_segments, mask.segment_len_m
    rng = np.random.default_rng(mask.rng_seed)
    # k sorted draws from T'-k*m+k slots, spread by m-1, give disjoint runs
    slots = length - k * m + k
    picks = np.sort(np.argsort(rng.random((count, slots)), axis=1)[:, :k], axis=1)
    starts = picks + np.arange(k) * (m - 1)
    positions = np.zeros((count, length), dtype=bool)
    rows = np.arange(count)[:, None, None]
    positions[rows, starts[:, :, None] + np.arange(m)] = True
    masked = frames.copy()
    masked[positions] = mask.fill_value
    return masked, positions


def _batches(order: np.ndarray, size: int) -> list[np.ndarray]:
    return [order[i:i + size] for i in range(0, order.size, size)]


def _reraise_with_epoch(exc: NumericError, epoch: int) -> NumericError:
    return NumericError(str(exc), epoch=epoch)


def pretrain(
    windows: WindowSet | UnlabeledWindows | np.ndarray,
    arch: ArchSpec,
    plan: TrainPlan,
    mask: MaskSpec,
    seed: int,
) -> ModelBundle:
    """Train encoder + pretext head on masked reconstruction; labels are never read."""
    unlabeled = windows.unlabeled() if isinstance(windows, WindowSet) else windows
    frames = _frames_of(unlabeled)
    if frames.shape[0] == 0:
        raise EmptyInputError("pretraining needs at least one window")
    if frames.shape[1:] != (arch.frame_length, arch.channels):
        raise StructuralError(f"frames {frames.shape[1:]} do not match the architecture input")
    mask.validate_for(arch.frame_length)

    rng = np.random.default_rng(seed)
    params = init_params(arch, rng, heads=(Head.PRETEXT,))
    opt = plan.pretrain_optimizer()
    count = frames.shape[0]
    targets = frames.reshape(count, -1)
    losses: list[float] = []

    with get_tracer().start_as_current_span("ssl.pretrain") as span:
        span.set_attribute("fogmon.windows", count)
        for epoch in range(plan.pretrain_epochs):
            started = time.perf_counter()
            masked, positions = apply_mask(frames, replace(mask, rng_seed=_seed_int(mask.rng_seed, epoch)))
            flat_mask = np.repeat(positions, arch.channels, axis=1)
            weighted, masked_total = 0.0, 0
            for batch in _batches(rng.permutation(count), opt.batch_size):
                out, cache = forward(params, arch, masked[batch], head=Head.PRETEXT)
                loss = masked_mse(out, targets[batch], flat_mask[batch])
                if not np.isfinite(loss):
                    raise NumericError("non-finite reconstruction loss", epoch=epoch)
                grads = backward(params, arch, cache, LossKind.MASKED_MSE, (targets[batch], flat_mask[batch]))
                try:
                    adam_step(params, grads, opt)
                except NumericError as exc:
                    raise _reraise_with_epoch(exc, epoch) from exc
                n_masked = int(flat_mask[batch].sum())
                weighted += loss * n_masked
                masked_total += n_masked
            losses.append(weighted / masked_total)
            log_json(
                logging.INFO,
                "pretrain_epoch",
                epoch=epoch,
                loss=losses[-1],
                seconds=round(time.perf_counter() - started, 4),
            )

    metadata = RunMetadata(
        stage="pretrained",
        seed=seed,
        arch=asdict(arch),
        plan=_plan_dict(plan),
        mask=asdict(mask),
        data_fingerprint=unlabeled.fingerprint() if hasattr(unlabeled, "fingerprint") else None,
        windows=count,
        pretrain_losses=losses,
    )
    bundle = ModelBundle(params, arch, metadata)
    bundle.metadata.encoder_checksum = bundle.encoder_checksum()
    return bundle


def _plan_dict(plan: TrainPlan) -> dict[str, Any]:
    return {key: getattr(value, "value", value) for key, value in asdict(plan).items()}


def stratified_subsample(windows: WindowSet, fraction: float, seed: int) -> WindowSet:
    """Seeded subset of about ``fraction`` of the windows, class ratio kept within one window."""
    if not 0 < fraction <= 1:
        raise ConfigError(f"label fraction must lie in (0, 1], got {fraction}")
    if fraction == 1:
        return windows
    total = len(windows)
    target = int(np.floor(fraction * total + 0.5))
    classes = [np.flatnonzero(windows.labels == value) for value in (0, 1)]
    exact = np.array([fraction * indices.size for indices in classes])
    quota = np.floor(exact).astype(int)
    # largest remainder
    for position in np.argsort(-(exact - quota), kind="stable")[: max(target - int(quota.sum()), 0)]:
        quota[position] += 1
    rng = np.random.default_rng(seed)
    chosen = [rng.choice(indices, size=q, replace=False) for indices, q in zip(classes, quota) if q]
    return windows.subset(np.concatenate(chosen) if chosen else np.zeros(0, dtype=np.int64))


def _embed(params: ParamSet, arch: ArchSpec, frames: np.ndarray) -> np.ndarray:
    chunks = [encode(params, arch, frames[i:i + _EMBED_CHUNK]) for i in range(0, frames.shape[0], _EMBED_CHUNK)]
    return np.concatenate(chunks) if chunks else np.zeros((0, arch.embedding_dim))


def _train_classifier(
    params: ParamSet,
    arch: ArchSpec,
    windows: WindowSet,
    epochs: int,
    plan: TrainPlan,
    opt,
    rng: np.random.Generator,
    frozen: Sequence[str],
    event: str,
) -> list[float]:
    labels = windows.labels.astype(np.float64)
    embeddings = _embed(params, arch, windows.frames) if frozen else None
    losses: list[float] = []
    for epoch in range(epochs):
        started = time.perf_counter()
        total = 0.0
        for batch in _batches(rng.permutation(len(windows)), opt.batch_size):
            if embeddings is not None:
                out, cache = forward_from_embeddings(params, arch, embeddings[batch], train_mode=True, rng=rng)
            else:
                out, cache = forward(params, arch, windows.frames[batch], train_mode=True, rng=rng)
            loss = bce(out, labels[batch])
            if not np.isfinite(loss):
                raise NumericError("non-finite classification loss", epoch=epoch)
            grads = backward(params, arch, cache, LossKind.BCE, labels[batch], frozen=frozen)
            try:
                adam_step(params, grads, opt, frozen=frozen)
            except NumericError as exc:
                raise _reraise_with_epoch(exc, epoch) from exc
            total += loss * batch.size
        losses.append(total / len(windows))
        log_json(logging.INFO, event, epoch=epoch, loss=losses[-1], seconds=round(time.perf_counter() - started, 4))
    return losses


def _labeled_subset(windows: WindowSet, fraction: float, seed: int) -> WindowSet:
    if len(windows) == 0:
        raise EmptyInputError("training needs labeled windows")
    subset = stratified_subsample(windows, fraction, seed)
    if np.unique(subset.labels).size < 2:
        raise ConfigError("the labeled subset holds a single class; raise the label fraction")
    return subset


def finetune(bundle: ModelBundle, windows: WindowSet, plan: TrainPlan, seed: int) -> ModelBundle:
    """Attach a fresh classifier to the pretrained encoder and train on labeled windows."""
    if not all(name in bundle.params.arrays for name in encoder_names(bundle.arch)):
        raise StructuralError("model bundle has no encoder")
    arch = bundle.arch
    subset = _labeled_subset(windows, plan.label_fraction, _seed_int(seed, 1))
    rng = np.random.default_rng(seed)
    params = bundle.params.fresh_optimizer()
    params.arrays.update(init_classifier(arch, rng))
    frozen = encoder_names(arch) if plan.freeze_encoder else []

    with get_tracer().start_as_current_span("ssl.finetune") as span:
        span.set_attribute("fogmon.labeled_windows", len(subset))
        losses = _train_classifier(
            params, arch, subset, plan.finetune_epochs, plan, plan.finetune_optimizer(), rng, frozen, "finetune_epoch"
        )

    metadata = bundle.metadata.model_copy(
        update={
            "stage": "finetuned",
            "seed": seed,
            "plan": _plan_dict(plan),
            "label_fraction": plan.label_fraction,
            "labeled_windows": len(subset),
            "train_losses": losses,
            "created_at": datetime.now(timezone.utc).isoformat(),
        }
    )
    result = ModelBundle(params, arch, metadata)
    result.metadata.encoder_checksum = result.encoder_checksum()
    return result


def train_supervised(
    windows: WindowSet, arch: ArchSpec, plan: TrainPlan, seed: int, label_fraction: float | None = None
) -> ModelBundle:
    """End-to-end baseline from random initialization on the same labeled subset rule."""
    fraction = plan.label_fraction if label_fraction is None else label_fraction
    subset = _labeled_subset(windows, fraction, _seed_int(seed, 1))
    rng = np.random.default_rng(seed)
    params = init_params(arch, rng, heads=(Head.CLASSIFIER,))
    with get_tracer().start_as_current_span("ssl.supervised"):
        losses = _train_classifier(
            params, arch, subset, plan.baseline_epochs, plan, plan.supervised_optimizer(), rng, [], "supervised_epoch"
        )
    metadata = RunMetadata(
        stage="supervised",
        seed=seed,
        arch=asdict(arch),
        plan=_plan_dict(plan),
        data_fingerprint=windows.fingerprint(),
        windows=len(windows),
        label_fraction=fraction,
        labeled_windows=len(subset),
        train_losses=losses,
    )
    bundle = ModelBundle(params, arch, metadata)
    bundle.metadata.encoder_checksum = bundle.encoder_checksum()
    return bundle


def predict(bundle: ModelBundle, windows: WindowSet) -> PredictionTrace:
    """Ungated inference, one window per model call, in window order."""
    if windows.frame_length != bundle.arch.frame_length:
        raise StructuralError("window length does not match the model input")
    with get_tracer().start_as_current_span("ssl.predict"):
        return timed_inference(windows, bundle.predictor())


def timing_profile(bundle: ModelBundle, windows: WindowSet, sizes: Sequence[int], plan: TrainPlan) -> list[dict[str, float]]:
    """Wall-clock cost of one training epoch and one batched inference pass per input size."""
    rows = []
    for size in sizes:
        if size <= 0 or size > len(windows):
            raise ConfigError(f"timing size {size} outside 1..{len(windows)}")
        sample = windows.subset(np.arange(size))
        params = bundle.params.fresh_optimizer()
        if not bundle.has_classifier:
            params.arrays.update(init_classifier(bundle.arch, np.random.default_rng(0)))
        started = time.perf_counter()
        _train_classifier(
            params, bundle.arch, sample, 1, plan, plan.supervised_optimizer(), np.random.default_rng(0), [], "timing_epoch"
        )
        train_s = time.perf_counter() - started
        started = time.perf_counter()
        predict_proba(params, bundle.arch, sample.frames)
        infer_s = time.perf_counter() - started
        rows.append({"windows": size, "train_epoch_s": train_s, "inference_s": infer_s, "per_window_ms": 1000.0 * infer_s / size})
    return rows


def save_bundle(bundle: ModelBundle, path: str | Path, *, include_adam: bool = False) -> Path:
    """Weights in FOGM1 form plus a ``.json`` metadata sidecar."""
    path = Path(path)
    save_params(bundle.params, bundle.arch, path, include_adam=include_adam)
    path.with_suffix(path.suffix + ".json").write_text(bundle.metadata.model_dump_json(indent=2), encoding="utf-8")
    log_json(logging.INFO, "artifact_written", path=str(path), stage=bundle.metadata.stage)
    return path


def load_bundle(path: str | Path) -> ModelBundle:
    path = Path(path)
    params, arch = load_params(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    if sidecar.exists():
        try:
            metadata = RunMetadata.model_validate_json(sidecar.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise FormatError(f"{sidecar}: invalid model metadata: {exc}") from exc
    else:
        metadata = RunMetadata(stage="unknown", seed=0, arch=asdict(arch), plan={})
    return ModelBundle(params, arch, metadata)


__all__ = [
    "ModelBundle",
    "RunMetadata",
    "apply_mask",
    "finetune",
    "load_bundle",
    "predict",
    "pretrain",
    "save_bundle",
    "stratified_subsample",
    "timing_profile",
    "train_supervised",
]
