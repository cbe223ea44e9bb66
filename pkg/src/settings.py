"""Typed configuration objects for the fog-monitor pipeline."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from errors import ConfigError

ENV_PREFIX = "FOGMON_"


def _as_bool(value: str | None, default: bool = False) -> bool:
    if value is None:
        return default
    return value.lower() in {"1", "true", "yes", "on"}


class Unit(str, Enum):
    G = "g"
    M_PER_S2 = "m_per_s2"


class WindowMode(str, Enum):
    TRAIN_DHWT = "train_dhwt"
    INFERENCE_FIXED = "inference_fixed"


class BaselineMetric(str, Enum):
    F1 = "f1"
    SENSITIVITY = "sensitivity"
    ACCURACY = "accuracy"


class DecayMode(str, Enum):
    # Legacy Keras `decay`: lr_t = lr0 / (1 + decay * t)
    TIME = "time"
    # Decoupled weight decay applied alongside the Adam update
    WEIGHT = "weight"


class PretrainSegmentation(str, Enum):
    FIXED = "fixed"
    DHWT = "dhwt"


@dataclass(frozen=True)
class WindowSpec:
    window_s: float = 3.0
    hop_nonfog_frac: float = 0.5
    hop_fog_frac: float = 0.25
    label_threshold: float = 0.5
    mode: WindowMode = WindowMode.TRAIN_DHWT

    def __post_init__(self) -> None:
        if not self.window_s > 0:
            raise ConfigError(f"window_s must be positive, got {self.window_s}")
        for name in ("hop_nonfog_frac", "hop_fog_frac"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ConfigError(f"{name} must lie in (0, 1], got {value}")
        if not 0 < self.label_threshold <= 1:
            raise ConfigError(f"label_threshold must lie in (0, 1], got {self.label_threshold}")

    def frame_length(self, rate_hz: float) -> int:
        return int(round(self.window_s * rate_hz))

    def hops(self, rate_hz: float) -> tuple[int, int]:
        """(non-FoG hop, FoG hop) in samples."""
        frame = self.frame_length(rate_hz)
        return max(1, int(round(self.hop_nonfog_frac * frame))), max(1, int(round(self.hop_fog_frac * frame)))

    def hop_seconds(self) -> float:
        return self.window_s * self.hop_nonfog_frac

    def training(self) -> "WindowSpec":
        return replace(self, mode=WindowMode.TRAIN_DHWT)

    def inference(self) -> "WindowSpec":
        return replace(self, mode=WindowMode.INFERENCE_FIXED)


@dataclass(frozen=True)
class ArchSpec:
    """Stacked 1D CNN encoder plus MLP classifier head.

    Convolutions use valid padding; the optional max-pool follows the
    1-based conv layer ``maxpool_after_layer`` and global average pooling
    follows the last conv layer.
    """

    conv_filters: tuple[int, ...] = (64, 128, 256, 128, 64)
    kernel: int = 3
    maxpool_after_layer: int | None = 2
    pool_size: int = 2
    gap_after_layer: int = 5
    dense_units: tuple[int, ...] = (128, 64)
    dropout: float = 0.4
    channels: int = 3
    frame_length: int = 120

    def __post_init__(self) -> None:
        if not self.conv_filters or any(int(f) <= 0 for f in self.conv_filters):
            raise ConfigError("conv_filters must be a nonempty list of positive counts")
        if any(int(u) <= 0 for u in self.dense_units):
            raise ConfigError("dense_units must be positive")
        if self.kernel <= 0 or self.pool_size <= 0 or self.channels <= 0 or self.frame_length <= 0:
            raise ConfigError("kernel, pool_size, channels and frame_length must be positive")
        if self.gap_after_layer != len(self.conv_filters):
            raise ConfigError(
                f"gap_after_layer={self.gap_after_layer} must equal the conv layer count {len(self.conv_filters)}"
            )
        if self.maxpool_after_layer is not None and not 1 <= self.maxpool_after_layer <= len(self.conv_filters):
            raise ConfigError(f"maxpool_after_layer={self.maxpool_after_layer} is outside the conv stack")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        chain = self.length_chain()
        if min(chain) <= 0:
            raise ConfigError(f"frame_length {self.frame_length} is too short for the conv stack: {chain}")

    def length_chain(self) -> list[int]:
        """Temporal length after the input and after every conv/pool stage."""
        lengths = [self.frame_length]
        length = self.frame_length
        for layer in range(1, len(self.conv_filters) + 1):
            length = length - self.kernel + 1
            lengths.append(length)
            if self.maxpool_after_layer == layer:
                length = length // self.pool_size
                lengths.append(length)
        return lengths

    @property
    def embedding_dim(self) -> int:
        return int(self.conv_filters[-1])

    @property
    def input_size(self) -> int:
        return self.frame_length * self.channels


@dataclass(frozen=True)
class OptimizerSpec:
    learning_rate: float = 0.01
    decay: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64
    decay_mode: DecayMode = DecayMode.TIME

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.decay < 0:
            raise ConfigError(f"decay must be non-negative, got {self.decay}")
        if self.batch_size <= 0:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")


@dataclass(frozen=True)
class MaskSpec:
    segment_len_m: int = 10
    num_segments: int = 2
    fill_value: float = 0.0
    rng_seed: int = 0

    def validate_for(self, frame_length: int) -> None:
        if self.segment_len_m <= 0 or self.num_segments <= 0:
            raise ConfigError("segment_len_m and num_segments must be positive")
        if self.num_segments * self.segment_len_m >= frame_length:
            raise ConfigError(
                f"{self.num_segments} segments of {self.segment_len_m} samples cannot fit in a {frame_length}-sample window"
            )


@dataclass(frozen=True)
class TrainPlan:
    pretrain_epochs: int = 70
    pretrain_lr: float = 0.01
    pretrain_decay: float = 0.001
    finetune_epochs: int = 40
    finetune_lr: float = 0.0001
    finetune_decay: float = 0.0
    supervised_lr: float = 0.001
    supervised_epochs: int | None = None
    batch_size: int = 64
    label_fraction: float = 1.0
    freeze_encoder: bool = True
    decay_mode: DecayMode = DecayMode.TIME
    pretrain_segmentation: PretrainSegmentation = PretrainSegmentation.FIXED

    def __post_init__(self) -> None:
        for name in ("pretrain_epochs", "finetune_epochs", "batch_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("pretrain_lr", "finetune_lr", "supervised_lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.label_fraction <= 1:
            raise ConfigError(f"label_fraction must lie in (0, 1], got {self.label_fraction}")
        if self.supervised_epochs is not None and self.supervised_epochs <= 0:
            raise ConfigError("supervised_epochs must be positive")

    @property
    def baseline_epochs(self) -> int:
        # compute-matched with pretrain + finetune unless set explicitly
        return self.supervised_epochs or self.pretrain_epochs + self.finetune_epochs

    def pretrain_optimizer(self) -> OptimizerSpec:
        return OptimizerSpec(self.pretrain_lr, self.pretrain_decay, batch_size=self.batch_size, decay_mode=self.decay_mode)

    def finetune_optimizer(self) -> OptimizerSpec:
        return OptimizerSpec(self.finetune_lr, self.finetune_decay, batch_size=self.batch_size, decay_mode=self.decay_mode)

    def supervised_optimizer(self) -> OptimizerSpec:
        return OptimizerSpec(self.supervised_lr, self.pretrain_decay, batch_size=self.batch_size, decay_mode=self.decay_mode)


@dataclass(frozen=True)
class GateConfig:
    alpha: float = 0.0

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ConfigError(f"alpha must be non-negative, got {self.alpha}")


@dataclass(frozen=True)
class AtoConfig:
    alpha_start: float = 0.0
    alpha_final: float = 1.2
    delta_alpha: float = 0.1
    tolerance: float = 0.02
    baseline_metric: BaselineMetric = BaselineMetric.F1

    def __post_init__(self) -> None:
        if self.alpha_start > self.alpha_final:
            raise ConfigError("alpha_start must not exceed alpha_final")
        if not self.delta_alpha > 0:
            raise ConfigError("delta_alpha must be positive")
        if self.tolerance < 0:
            raise ConfigError("tolerance must be non-negative")

    def max_steps(self) -> int:
        # rounding keeps 1.2/0.1 from landing just above 12
        return math.ceil(round((self.alpha_final - self.alpha_start) / self.delta_alpha, 9)) + 1


@dataclass(frozen=True)
class DataSettings:
    working_rate_hz: float = 40.0
    unit: Unit = Unit.G
    data_dir: str = ""
    subjects_file: str = "subjects.csv"
    daphnet_sensor: str = "trunk"

    def __post_init__(self) -> None:
        if not self.working_rate_hz > 0:
            raise ConfigError("working_rate_hz must be positive")


@dataclass(frozen=True)
class HarnessSettings:
    repeats: int = 3
    reshuffle_groups: bool = False
    workers: int = 1
    include_supervised: bool = True
    fractions: tuple[float, ...] = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7)
    alphas: tuple[float, ...] = (0.0, 0.2, 0.4, 1.2)
    majority_vote_passes: int = 1
    synth_subjects: int = 10
    synth_duration_s: float = 900.0
    synth_fog_rate: float = 0.3

    def __post_init__(self) -> None:
        if self.repeats <= 0 or self.workers <= 0:
            raise ConfigError("repeats and workers must be positive")
        if any(not 0 < f <= 1 for f in self.fractions):
            raise ConfigError("fractions must lie in (0, 1]")
        if not 0 <= self.synth_fog_rate <= 1:
            raise ConfigError("synth_fog_rate must lie in [0, 1]")


@dataclass(frozen=True)
class RunConfig:
    """Top-level experiment configuration surface."""

    window: WindowSpec = field(default_factory=WindowSpec)
    arch: ArchSpec = field(default_factory=ArchSpec)
    train: TrainPlan = field(default_factory=TrainPlan)
    mask: MaskSpec = field(default_factory=MaskSpec)
    gate: GateConfig = field(default_factory=GateConfig)
    ato: AtoConfig = field(default_factory=AtoConfig)
    data: DataSettings = field(default_factory=DataSettings)
    harness: HarnessSettings = field(default_factory=HarnessSettings)
    out_dir: str = "runs"
    seed: int = 0
    quiet: bool = False

    @classmethod
    def from_env(cls, environ: Mapping[str, str] | None = None) -> "RunConfig":
        """Construct settings once from environment variables."""
        env = os.environ if environ is None else environ
        overrides: dict[str, str] = {}
        simple = {
            "SEED": "seed",
            "OUT_DIR": "out_dir",
            "QUIET": "quiet",
            "WORKERS": "harness.workers",
            "DATA_DIR": "data.data_dir",
            "WORKING_RATE_HZ": "data.working_rate_hz",
            "UNIT": "data.unit",
        }
        for suffix, key in simple.items():
            value = env.get(ENV_PREFIX + suffix)
            if value is not None:
                overrides[key] = value
        config = cls().with_overrides(overrides)
        config_path = env.get(ENV_PREFIX + "CONFIG")
        return config.merge_file(config_path) if config_path else config

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        return cls().merge_file(path)

    def merge_file(self, path: str | Path) -> "RunConfig":
        return self.with_overrides(parse_config_lines(Path(path)))

    def with_overrides(self, overrides: Mapping[str, str]) -> "RunConfig":
        cleaned = {key.strip(): str(raw).strip() for key, raw in overrides.items()}
        return _apply_overrides(self, cleaned)

    def to_dict(self) -> dict[str, Any]:
        return json.loads(json.dumps(asdict(self), default=_jsonable))

    def config_hash(self) -> str:
        # quiet and out_dir do not change results
        payload = self.to_dict()
        payload.pop("quiet", None)
        payload.pop("out_dir", None)
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def _jsonable(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    raise TypeError(f"not serializable: {type(value).__name__}")


def parse_config_lines(path: Path) -> dict[str, str]:
    """Read UTF-8 key=value lines; later keys override earlier ones."""
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    values: dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}: line {number}: expected key=value")
        key, value = stripped.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _coerce(raw: str, current: Any, annotation: str) -> Any:
    if "None" in annotation and raw.lower() in {"", "none", "null"}:
        return None
    if isinstance(current, Enum):
        return type(current)(raw.lower())
    if isinstance(current, bool):
        return _as_bool(raw)
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        element = float if "float" in annotation else int
        return tuple(element(part) for part in raw.split(",") if part.strip())
    if current is None:
        return int(raw) if "int" in annotation else float(raw)
    return raw


def _apply_overrides(config: Any, overrides: Mapping[str, str], prefix: str = "") -> Any:
    """Apply dotted keys section by section so related fields validate together."""
    known = {f.name: f for f in fields(config)}
    nested: dict[str, dict[str, str]] = {}
    changes: dict[str, Any] = {}
    for key, raw in overrides.items():
        head, _, rest = key.partition(".")
        full = prefix + key
        if head not in known:
            raise ConfigError(f"unknown config key {full!r}")
        current = getattr(config, head)
        if rest:
            if not is_dataclass(current):
                raise ConfigError(f"unknown config key {full!r}")
            nested.setdefault(head, {})[rest] = raw
            continue
        if is_dataclass(current):
            raise ConfigError(f"config key {full!r} names a section, not a value")
        try:
            changes[head] = _coerce(raw, current, str(known[head].type))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {full!r}: {raw!r}") from exc
    for head, items in nested.items():
        changes[head] = _apply_overrides(getattr(config, head), items, f"{prefix}{head}.")
    return replace(config, **changes) if changes else config


__all__ = [
    "ArchSpec",
    "AtoConfig",
    "BaselineMetric",
    "DataSettings",
    "DecayMode",
    "GateConfig",
    "HarnessSettings",
    "MaskSpec",
    "OptimizerSpec",
    "PretrainSegmentation",
    "RunConfig",
    "TrainPlan",
    "Unit",
    "WindowMode",
    "WindowSpec",
    "parse_config_lines",
]
