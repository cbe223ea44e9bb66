"""Fixed-length window segmentation with differential hopping (DHWT).

Training streams are cut with a class-dependent hop: after a FoG window
the next start advances by ``hop_fog_frac`` of a window, otherwise by
``hop_nonfog_frac``. Windows that are neither clean NonFoG nor at least
``label_threshold`` FoG are dropped in training. Inference always hops by
``hop_nonfog_frac`` and keeps every window.
Windows never cross a break in the stream; each run is cut on its own.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from errors import EmptyInputError, FormatError, StructuralError
from gate import magnitudes
from ingest import SignalStream, remove_mean
from settings import WindowMode, WindowSpec

WINDOWS_MAGIC = b"FOGW1"
_TRAILER_MAGIC = b"META"


@dataclass(frozen=True, eq=False)
class UnlabeledWindows:
    """Frames only; the pretext task cannot see labels through this view."""

    frames: np.ndarray

    def __len__(self) -> int:
        return int(self.frames.shape[0])

    def fingerprint(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.frames, dtype=np.float64).tobytes()).hexdigest()


@dataclass(frozen=True, eq=False)
class WindowSet:
    frames: np.ndarray
    labels: np.ndarray
    fog_fraction: np.ndarray
    start_index: np.ndarray
    channel_mean: np.ndarray
    spec: WindowSpec
    rate_hz: float
    source: np.ndarray | None = None
    subject_ids: tuple[str, ...] = ("",)
    mixed_count: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3:
            raise StructuralError(f"frames must be N x T' x C, got shape {frames.shape}")
        count = frames.shape[0]
        labels = np.asarray(self.labels, dtype=np.int8)
        fog_fraction = np.asarray(self.fog_fraction, dtype=np.float64)
        start_index = np.asarray(self.start_index, dtype=np.int64)
        source = np.zeros(count, dtype=np.int64) if self.source is None else np.asarray(self.source, dtype=np.int64)
        for name, values in (("labels", labels), ("fog_fraction", fog_fraction), ("start_index", start_index), ("source", source)):
            if values.shape != (count,):
                raise StructuralError(f"{name} has shape {values.shape}, expected ({count},)")
        channel_mean = np.asarray(self.channel_mean, dtype=np.float64).reshape(count, -1) if count else np.zeros((0, frames.shape[2]))
        if channel_mean.shape != (count, frames.shape[2]):
            raise StructuralError(f"channel_mean has shape {channel_mean.shape}, expected ({count}, {frames.shape[2]})")
        if count:
            is_fog = fog_fraction >= self.spec.label_threshold - 1e-12
            if not np.array_equal(labels == 1, is_fog):
                raise StructuralError("window labels disagree with their FoG fractions")
            if self.spec.mode is WindowMode.TRAIN_DHWT and (fog_fraction[~is_fog] != 0).any():
                raise StructuralError("training windows must be clean NonFoG or at least threshold FoG")
            for src in np.unique(source):
                starts = start_index[source == src]
                if (np.diff(starts) <= 0).any():
                    raise StructuralError(f"start_index not strictly increasing within source {src}")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "fog_fraction", fog_fraction)
        object.__setattr__(self, "start_index", start_index)
        object.__setattr__(self, "channel_mean", channel_mean)
        object.__setattr__(self, "source", source)

    def __len__(self) -> int:
        return int(self.frames.shape[0])

    @property
    def frame_length(self) -> int:
        return int(self.frames.shape[1])

    @property
    def hop_s(self) -> float:
        return self.spec.hop_seconds()

    def raw_frames(self) -> np.ndarray:
        """Frames with their per-channel means restored (gravity included)."""
        return self.frames + self.channel_mean[:, None, :]

    @cached_property
    def magnitude(self) -> np.ndarray:
        return magnitudes(self.raw_frames())

    def unlabeled(self) -> UnlabeledWindows:
        return UnlabeledWindows(frames=self.frames)

    def subset(self, indices: Sequence[int] | np.ndarray) -> "WindowSet":
        order = np.sort(np.asarray(indices, dtype=np.int64))
        return WindowSet(
            frames=self.frames[order],
            labels=self.labels[order],
            fog_fraction=self.fog_fraction[order],
            start_index=self.start_index[order],
            channel_mean=self.channel_mean[order],
            spec=self.spec,
            rate_hz=self.rate_hz,
            source=self.source[order],
            subject_ids=self.subject_ids,
        )

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.frames, dtype=np.float64).tobytes())
        digest.update(self.labels.tobytes())
        return digest.hexdigest()


def segment(stream: SignalStream, spec: WindowSpec) -> WindowSet:
    frame = spec.frame_length(stream.rate_hz)
    total = len(stream)
    if frame <= 0 or total < frame:
        raise EmptyInputError(f"stream of {total} samples is shorter than one {frame}-sample window")
    hop_nonfog, hop_fog = spec.hops(stream.rate_hz)
    training = spec.mode is WindowMode.TRAIN_DHWT
    fog_needed = spec.label_threshold * frame - 1e-9
    cumulative = np.concatenate([[0], np.cumsum(stream.labels, dtype=np.int64)])

    starts: list[int] = []
    fog_counts: list[int] = []
    mixed = 0
    for run_start, run_end in stream.runs():
        start = run_start
        while start + frame <= run_end:
            fog_count = int(cumulative[start + frame] - cumulative[start])
            is_fog = fog_count >= fog_needed
            if not is_fog and fog_count > 0:
                mixed += 1
            if not training or is_fog or fog_count == 0:
                starts.append(start)
                fog_counts.append(fog_count)
            start += hop_fog if training and is_fog else hop_nonfog

    start_index = np.asarray(starts, dtype=np.int64)
    fog_fraction = np.asarray(fog_counts, dtype=np.float64) / frame
    if start_index.size:
        raw = stream.acc[start_index[:, None] + np.arange(frame)[None, :]]
    else:
        raw = np.zeros((0, frame, 3))
    return WindowSet(
        frames=remove_mean(raw),
        labels=(fog_fraction >= spec.label_threshold - 1e-12).astype(np.int8),
        fog_fraction=fog_fraction,
        start_index=start_index,
        channel_mean=raw.mean(axis=1),
        spec=spec,
        rate_hz=stream.rate_hz,
        subject_ids=(stream.subject_id,),
        mixed_count=mixed,
    )


def concat_windows(sets: Sequence[WindowSet]) -> WindowSet:
    """Stack window sets from several recordings; provenance is kept per source."""
    if not sets:
        raise EmptyInputError("no window sets to combine")
    frame = sets[0].frame_length
    if any(ws.frame_length != frame for ws in sets):
        raise StructuralError("cannot combine window sets with different frame lengths")
    sources, subject_ids, offset = [], [], 0
    for ws in sets:
        sources.append(ws.source + offset)
        subject_ids.extend(ws.subject_ids)
        offset += len(ws.subject_ids)
    return WindowSet(
        frames=np.concatenate([ws.frames for ws in sets]),
        labels=np.concatenate([ws.labels for ws in sets]),
        fog_fraction=np.concatenate([ws.fog_fraction for ws in sets]),
        start_index=np.concatenate([ws.start_index for ws in sets]),
        channel_mean=np.concatenate([ws.channel_mean for ws in sets]),
        spec=sets[0].spec,
        rate_hz=sets[0].rate_hz,
        source=np.concatenate(sources),
        subject_ids=tuple(subject_ids),
        mixed_count=sum(ws.mixed_count for ws in sets),
    )


def class_balance(ws: WindowSet) -> tuple[float, float]:
    """(NonFoG fraction, FoG fraction) of the windows."""
    if len(ws) == 0:
        raise EmptyInputError("class balance of an empty window set")
    fog = float(np.count_nonzero(ws.labels == 1)) / len(ws)
    return 1.0 - fog, fog


def compare_segmentation(streams: Sequence[SignalStream], spec: WindowSpec) -> dict[str, dict[str, float]]:
    """Class balance and window counts under fixed-hop versus DHWT cutting."""
    report: dict[str, dict[str, float]] = {}
    for name, mode_spec in (("fixed", spec.inference()), ("dhwt", spec.training())):
        combined = concat_windows([segment(stream, mode_spec) for stream in streams])
        nonfog, fog = class_balance(combined)
        report[name] = {
            "windows": float(len(combined)),
            "nonfog_frac": nonfog,
            "fog_frac": fog,
            "mixed_windows": float(combined.mixed_count),
        }
    return report


def write_windowset(ws: WindowSet, path: str | Path) -> Path:
    """FOGW1 container: header, float32 frames, label bytes, then a provenance trailer."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count, frame, channels = ws.frames.shape
    meta = json.dumps(
        {"spec": {**asdict(ws.spec), "mode": ws.spec.mode.value}, "rate_hz": ws.rate_hz, "subject_ids": list(ws.subject_ids), "mixed_count": ws.mixed_count}
    ).encode("utf-8")
    with path.open("wb") as handle:
        handle.write(WINDOWS_MAGIC)
        handle.write(struct.pack("<III", count, frame, channels))
        handle.write(np.ascontiguousarray(ws.frames, dtype="<f4").tobytes())
        handle.write(ws.labels.astype(np.uint8).tobytes())
        handle.write(_TRAILER_MAGIC)
        handle.write(ws.fog_fraction.astype("<f8").tobytes())
        handle.write(ws.start_index.astype("<u4").tobytes())
        handle.write(np.ascontiguousarray(ws.channel_mean, dtype="<f8").tobytes())
        handle.write(ws.source.astype("<u4").tobytes())
        handle.write(struct.pack("<I", len(meta)))
        handle.write(meta)
    return path


def read_windowset(path: str | Path) -> WindowSet:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if not blob.startswith(WINDOWS_MAGIC):
        raise FormatError(f"{path}: not a FOGW1 window file")
    head = len(WINDOWS_MAGIC)
    try:
        count, frame, channels = struct.unpack_from("<III", blob, head)
        offset = head + 12
        values = count * frame * channels
        frames = np.frombuffer(blob, dtype="<f4", count=values, offset=offset).reshape(count, frame, channels)
        offset += 4 * values
        labels = np.frombuffer(blob, dtype=np.uint8, count=count, offset=offset).astype(np.int8)
        offset += count
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated window file") from exc

    if blob[offset:offset + len(_TRAILER_MAGIC)] != _TRAILER_MAGIC:
        # bare container: provenance is not recoverable
        spec = WindowSpec(mode=WindowMode.INFERENCE_FIXED)
        return WindowSet(
            frames=frames.astype(np.float64),
            labels=labels,
            fog_fraction=labels.astype(np.float64),
            start_index=np.arange(count),
            channel_mean=np.zeros((count, channels)),
            spec=spec,
            rate_hz=frame / spec.window_s,
        )
    offset += len(_TRAILER_MAGIC)
    try:
        fog_fraction = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += 8 * count
        start_index = np.frombuffer(blob, dtype="<u4", count=count, offset=offset).astype(np.int64)
        offset += 4 * count
        channel_mean = np.frombuffer(blob, dtype="<f8", count=count * channels, offset=offset).reshape(count, channels)
        offset += 8 * count * channels
        source = np.frombuffer(blob, dtype="<u4", count=count, offset=offset).astype(np.int64)
        offset += 4 * count
        (meta_length,) = struct.unpack_from("<I", blob, offset)
        meta = json.loads(blob[offset + 4:offset + 4 + meta_length].decode("utf-8"))
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated window trailer") from exc
    spec_fields = dict(meta["spec"])
    spec_fields["mode"] = WindowMode(spec_fields["mode"])
    return WindowSet(
        frames=frames.astype(np.float64),
        labels=labels,
        fog_fraction=fog_fraction.copy(),
        start_index=start_index,
        channel_mean=channel_mean.copy(),
        spec=WindowSpec(**spec_fields),
        rate_hz=float(meta["rate_hz"]),
        source=source,
        subject_ids=tuple(meta["subject_ids"]),
        mixed_count=int(meta.get("mixed_count", 0)),
    )


__all__ = [
    "UnlabeledWindows",
    "WindowSet",
    "class_balance",
    "compare_segmentation",
    "concat_windows",
    "read_windowset",
    "segment",
    "write_windowset",
]
