"""Minimal 1D CNN engine: forward pass, exact reverse-mode gradients and Adam.

Arrays are float64 while training. Layout conventions:

* batches are ``B x T' x C`` (time before channels)
* ``conv{i}.w`` is ``K x C_in x C_out``, valid padding, stride 1
* ``dense{j}.w`` / ``out.w`` / ``pretext.w`` are ``in x out``
* the pretext head predicts the whole window flattened row-major as ``t * C + c``
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Collection, Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from errors import DegenerateInputError, FormatError, NumericError, StructuralError
from settings import ArchSpec, DecayMode, OptimizerSpec

WEIGHTS_MAGIC = b"FOGM1"
WEIGHTS_VERSION = 1


class Head(str, Enum):
    CLASSIFIER = "classifier"
    PRETEXT = "pretext"


class LossKind(str, Enum):
    BCE = "bce"
    MASKED_MSE = "masked_mse"


@dataclass
class ParamSet:
    """Named weight arrays plus Adam moments.

    ``version`` increases on every optimizer step so a forward cache can
    tell whether it was built from the current weights.
    """

    arrays: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    version: int = 0

    def copy(self) -> "ParamSet":
        return ParamSet(
            arrays={name: value.copy() for name, value in self.arrays.items()},
            adam_m={name: value.copy() for name, value in self.adam_m.items()},
            adam_v={name: value.copy() for name, value in self.adam_v.items()},
            step=self.step,
            version=self.version,
        )

    def fresh_optimizer(self) -> "ParamSet":
        return ParamSet(arrays={name: value.copy() for name, value in self.arrays.items()})

    def checksum(self, names: Iterable[str] | None = None) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.arrays if names is None else names):
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(self.arrays[name]).tobytes())
        return digest.hexdigest()

    def count(self, names: Iterable[str] | None = None) -> int:
        return int(sum(self.arrays[name].size for name in (self.arrays if names is None else names)))


def encoder_names(spec: ArchSpec) -> list[str]:
    return [f"conv{i}.{part}" for i in range(1, len(spec.conv_filters) + 1) for part in ("w", "b")]


def classifier_names(spec: ArchSpec) -> list[str]:
    names = [f"dense{j}.{part}" for j in range(1, len(spec.dense_units) + 1) for part in ("w", "b")]
    return names + ["out.w", "out.b"]


def pretext_names() -> list[str]:
    return ["pretext.w", "pretext.b"]


def _uniform(rng: np.random.Generator, limit: float, shape: tuple[int, ...]) -> np.ndarray:
    return rng.uniform(-limit, limit, size=shape)


def init_encoder(spec: ArchSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    channels = spec.channels
    for i, filters in enumerate(spec.conv_filters, start=1):
        fan_in = spec.kernel * channels
        arrays[f"conv{i}.w"] = _uniform(rng, np.sqrt(6.0 / fan_in), (spec.kernel, channels, int(filters)))
        arrays[f"conv{i}.b"] = np.zeros(int(filters))
        channels = int(filters)
    return arrays


def init_classifier(spec: ArchSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    width = spec.embedding_dim
    for j, units in enumerate(spec.dense_units, start=1):
        arrays[f"dense{j}.w"] = _uniform(rng, np.sqrt(6.0 / width), (width, int(units)))
        arrays[f"dense{j}.b"] = np.zeros(int(units))
        width = int(units)
    arrays["out.w"] = _uniform(rng, np.sqrt(6.0 / (width + 1)), (width, 1))
    arrays["out.b"] = np.zeros(1)
    return arrays


def init_pretext(spec: ArchSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    width, size = spec.embedding_dim, spec.input_size
    return {
        "pretext.w": _uniform(rng, np.sqrt(6.0 / (width + size)), (width, size)),
        "pretext.b": np.zeros(size),
    }


def init_params(spec: ArchSpec, rng: np.random.Generator, heads: Collection[Head] = (Head.CLASSIFIER,)) -> ParamSet:
    arrays = init_encoder(spec, rng)
    if Head.CLASSIFIER in heads:
        arrays.update(init_classifier(spec, rng))
    if Head.PRETEXT in heads:
        arrays.update(init_pretext(spec, rng))
    return ParamSet(arrays=arrays)


# --- layer primitives ---

def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    windows = sliding_window_view(x, w.shape[0], axis=1)  # B x L_out x C_in x K
    return np.tensordot(windows, w, axes=([2, 3], [1, 0])) + b


def conv1d_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    kernel = w.shape[0]
    length = dy.shape[1]
    windows = sliding_window_view(x, kernel, axis=1)
    dw = np.tensordot(windows, dy, axes=([0, 1], [0, 1])).transpose(1, 0, 2)
    db = dy.sum(axis=(0, 1))
    dx = np.zeros_like(x)
    for k in range(kernel):
        dx[:, k:k + length, :] += dy @ w[k].T
    return dx, dw, db


def maxpool_forward(x: np.ndarray, pool: int) -> tuple[np.ndarray, np.ndarray]:
    batch, length, channels = x.shape
    pooled = length // pool
    grouped = x[:, :pooled * pool].reshape(batch, pooled, pool, channels)
    winner = grouped.argmax(axis=2)
    return np.take_along_axis(grouped, winner[:, :, None, :], axis=2)[:, :, 0, :], winner


def maxpool_backward(dy: np.ndarray, winner: np.ndarray, input_shape: tuple[int, ...], pool: int) -> np.ndarray:
    batch, length, channels = input_shape
    pooled = dy.shape[1]
    grouped = np.zeros((batch, pooled, pool, channels))
    np.put_along_axis(grouped, winner[:, :, None, :], dy[:, :, None, :], axis=2)
    dx = np.zeros(input_shape)
    dx[:, :pooled * pool] = grouped.reshape(batch, pooled * pool, channels)
    return dx


def dropout_mask(rng: np.random.Generator, shape: tuple[int, ...], rate: float) -> np.ndarray:
    # inverted dropout: survivors scaled so evaluation needs no rescale
    return rng.binomial(1, 1.0 - rate, size=shape) / (1.0 - rate)


# --- caches ---

@dataclass
class EncoderCache:
    batch: np.ndarray
    conv_inputs: list[np.ndarray]
    conv_pre: list[np.ndarray]
    pool_input_shape: tuple[int, ...] | None
    pool_winner: np.ndarray | None
    gap_length: int


@dataclass
class ForwardCache:
    head: Head
    version: int
    encoder: EncoderCache | None
    embedding: np.ndarray
    dense_inputs: list[np.ndarray] = field(default_factory=list)
    dense_pre: list[np.ndarray] = field(default_factory=list)
    dropout: np.ndarray | None = None
    head_input: np.ndarray | None = None
    output: np.ndarray | None = None


def _check_batch(spec: ArchSpec, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3 or batch.shape[1:] != (spec.frame_length, spec.channels):
        raise StructuralError(
            f"batch shape {batch.shape} does not match (B, {spec.frame_length}, {spec.channels})"
        )
    return batch


def _encoder_forward(params: ParamSet, spec: ArchSpec, batch: np.ndarray) -> tuple[np.ndarray, EncoderCache]:
    x = batch
    conv_inputs, conv_pre = [], []
    pool_shape, winner = None, None
    for i in range(1, len(spec.conv_filters) + 1):
        conv_inputs.append(x)
        pre = conv1d_forward(x, params.arrays[f"conv{i}.w"], params.arrays[f"conv{i}.b"])
        conv_pre.append(pre)
        x = np.maximum(pre, 0.0)
        if spec.maxpool_after_layer == i:
            pool_shape = x.shape
            x, winner = maxpool_forward(x, spec.pool_size)
    cache = EncoderCache(batch, conv_inputs, conv_pre, pool_shape, winner, x.shape[1])
    return x.mean(axis=1), cache


def _classifier_forward(
    params: ParamSet, spec: ArchSpec, h: np.ndarray, train_mode: bool, rng: np.random.Generator | None, cache: ForwardCache
) -> np.ndarray:
    x = h
    for j in range(1, len(spec.dense_units) + 1):
        cache.dense_inputs.append(x)
        pre = x @ params.arrays[f"dense{j}.w"] + params.arrays[f"dense{j}.b"]
        cache.dense_pre.append(pre)
        x = np.maximum(pre, 0.0)
        if j == 1 and train_mode and spec.dropout > 0:
            cache.dropout = dropout_mask(rng if rng is not None else np.random.default_rng(0), x.shape, spec.dropout)
            x = x * cache.dropout
    cache.head_input = x
    return x @ params.arrays["out.w"] + params.arrays["out.b"]


def _require(params: ParamSet, names: Iterable[str], what: str) -> None:
    missing = [name for name in names if name not in params.arrays]
    if missing:
        raise StructuralError(f"parameter set lacks the {what}: missing {missing[:3]}")


def forward(
    params: ParamSet,
    spec: ArchSpec,
    batch: np.ndarray,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    head: Head = Head.CLASSIFIER,
) -> tuple[np.ndarray, ForwardCache]:
    """Classifier logits (B x 1) or pretext reconstructions (B x T'*C)."""
    batch = _check_batch(spec, batch)
    _require(params, encoder_names(spec), "encoder")
    h, encoder_cache = _encoder_forward(params, spec, batch)
    if head is Head.PRETEXT:
        _require(params, pretext_names(), "pretext head")
        cache = ForwardCache(head, params.version, encoder_cache, h, head_input=h)
        cache.output = h @ params.arrays["pretext.w"] + params.arrays["pretext.b"]
        return cache.output, cache
    return forward_from_embeddings(params, spec, h, train_mode, rng, encoder_cache)


def forward_from_embeddings(
    params: ParamSet,
    spec: ArchSpec,
    embeddings: np.ndarray,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    encoder_cache: EncoderCache | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Classifier head alone; backward stops at the embeddings when no encoder cache is given."""
    _require(params, classifier_names(spec), "classifier head")
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[1] != spec.embedding_dim:
        raise StructuralError(f"embeddings shape {embeddings.shape} does not match (B, {spec.embedding_dim})")
    cache = ForwardCache(Head.CLASSIFIER, params.version, encoder_cache, embeddings)
    cache.output = _classifier_forward(params, spec, embeddings, train_mode, rng, cache)
    return cache.output, cache


def encode(params: ParamSet, spec: ArchSpec, batch: np.ndarray) -> np.ndarray:
    """Global-average-pooled encoder output, B x D."""
    batch = _check_batch(spec, batch)
    _require(params, encoder_names(spec), "encoder")
    return _encoder_forward(params, spec, batch)[0]


def predict_proba(params: ParamSet, spec: ArchSpec, batch: np.ndarray) -> np.ndarray:
    logits, _ = forward(params, spec, batch)
    return expit(logits[:, 0])


# --- losses ---

def _mask_array(mask_positions: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    mask = np.asarray(mask_positions)
    if mask.dtype != bool:
        flat = np.zeros(int(np.prod(shape)), dtype=bool)
        flat[mask.astype(np.intp).ravel()] = True
        mask = flat.reshape(shape)
    if mask.shape != shape:
        raise StructuralError(f"mask shape {mask.shape} does not match predictions {shape}")
    return mask


def masked_mse(pred: np.ndarray, target: np.ndarray, mask_positions: np.ndarray) -> float:
    """Mean squared error over masked positions only.

    ``mask_positions`` is a boolean array shaped like ``pred`` or an array of
    flat indices into it.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mask = _mask_array(mask_positions, pred.shape)
    count = int(mask.sum())
    if count == 0:
        raise DegenerateInputError("masked MSE needs at least one masked position")
    return float(np.square(pred[mask] - target[mask]).sum() / count)


def masked_mse_grad(pred: np.ndarray, target: np.ndarray, mask_positions: np.ndarray) -> np.ndarray:
    mask = _mask_array(mask_positions, pred.shape)
    count = int(mask.sum())
    if count == 0:
        raise DegenerateInputError("masked MSE needs at least one masked position")
    return 2.0 * (pred - target) * mask / count


def bce(logits: np.ndarray, labels: np.ndarray) -> float:
    """Binary cross-entropy on logits, evaluated as log(1 + e^z) - y z."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def bce_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).reshape(z.shape)
    return (expit(z) - y) / z.shape[0]


# --- backward ---

def backward(
    params: ParamSet,
    spec: ArchSpec,
    cache: ForwardCache,
    loss_kind: LossKind,
    loss_inputs,
    frozen: Collection[str] = (),
) -> dict[str, np.ndarray]:
    """Gradients of the loss with respect to every array on the cached path.

    ``loss_inputs`` is the label vector for BCE and ``(target, mask)`` for
    masked MSE. Frozen arrays come back as zeros.
    """
    if cache.version != params.version:
        raise StructuralError("forward cache is stale: parameters changed since it was built")
    frozen = set(frozen)
    grads: dict[str, np.ndarray] = {}

    if loss_kind is LossKind.MASKED_MSE:
        if cache.head is not Head.PRETEXT:
            raise StructuralError("masked MSE needs a pretext-head forward cache")
        target, mask = loss_inputs
        dout = masked_mse_grad(cache.output, np.asarray(target, dtype=np.float64), mask)
        grads["pretext.w"] = cache.head_input.T @ dout
        grads["pretext.b"] = dout.sum(axis=0)
        dh = dout @ params.arrays["pretext.w"].T
    else:
        if cache.head is not Head.CLASSIFIER:
            raise StructuralError("BCE needs a classifier forward cache")
        dout = bce_grad(cache.output, loss_inputs)
        grads["out.w"] = cache.head_input.T @ dout
        grads["out.b"] = dout.sum(axis=0)
        dx = dout @ params.arrays["out.w"].T
        for j in range(len(spec.dense_units), 0, -1):
            if j == 1 and cache.dropout is not None:
                dx = dx * cache.dropout
            dpre = dx * (cache.dense_pre[j - 1] > 0)
            grads[f"dense{j}.w"] = cache.dense_inputs[j - 1].T @ dpre
            grads[f"dense{j}.b"] = dpre.sum(axis=0)
            dx = dpre @ params.arrays[f"dense{j}.w"].T
        dh = dx

    encoder = encoder_names(spec)
    if cache.encoder is not None and not set(encoder) <= frozen:
        grads.update(_encoder_backward(params, spec, cache.encoder, dh))
    elif cache.encoder is not None:
        grads.update({name: np.zeros_like(params.arrays[name]) for name in encoder})

    for name in frozen & grads.keys():
        grads[name] = np.zeros_like(grads[name])
    return grads


def _encoder_backward(params: ParamSet, spec: ArchSpec, cache: EncoderCache, dh: np.ndarray) -> dict[str, np.ndarray]:
    grads: dict[str, np.ndarray] = {}
    dx = np.repeat(dh[:, None, :], cache.gap_length, axis=1) / cache.gap_length
    for i in range(len(spec.conv_filters), 0, -1):
        if spec.maxpool_after_layer == i:
            dx = maxpool_backward(dx, cache.pool_winner, cache.pool_input_shape, spec.pool_size)
        dpre = dx * (cache.conv_pre[i - 1] > 0)
        dx, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = conv1d_backward(dpre, cache.conv_inputs[i - 1], params.arrays[f"conv{i}.w"])
    return grads


# --- optimizer ---

def adam_step(
    params: ParamSet, grads: dict[str, np.ndarray], opt: OptimizerSpec, frozen: Collection[str] = ()
) -> ParamSet:
    """One Adam update in place; the rate decays as lr0 / (1 + decay * t)."""
    for name, grad in grads.items():
        if name not in params.arrays or grad.shape != params.arrays[name].shape:
            raise StructuralError(f"gradient {name!r} does not match the parameter set")
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for {name} at step {params.step}")
    if opt.decay_mode is DecayMode.TIME:
        rate = opt.learning_rate / (1.0 + opt.decay * params.step)
    else:
        rate = opt.learning_rate
    params.step += 1
    correction1 = 1.0 - opt.beta1 ** params.step
    correction2 = 1.0 - opt.beta2 ** params.step
    frozen = set(frozen)
    for name, grad in grads.items():
        if name in frozen:
            continue
        m = params.adam_m.setdefault(name, np.zeros_like(grad))
        v = params.adam_v.setdefault(name, np.zeros_like(grad))
        m *= opt.beta1
        m += (1.0 - opt.beta1) * grad
        v *= opt.beta2
        v += (1.0 - opt.beta2) * grad * grad
        update = rate * (m / correction1) / (np.sqrt(v / correction2) + opt.epsilon)
        if opt.decay_mode is DecayMode.WEIGHT and opt.decay:
            update = update + rate * opt.decay * params.arrays[name]
        params.arrays[name] -= update
    params.version += 1
    return params


# --- footprint ---

def model_footprint(spec: ArchSpec) -> dict[str, int]:
    """Parameter counts per block and storage bytes at 32-bit."""
    rng = np.random.default_rng(0)
    params = init_params(spec, rng, heads=(Head.CLASSIFIER, Head.PRETEXT))
    encoder = params.count(encoder_names(spec))
    classifier = params.count(classifier_names(spec))
    pretext = params.count(pretext_names())
    return {
        "encoder_params": encoder,
        "classifier_params": classifier,
        "pretext_params": pretext,
        "inference_params": encoder + classifier,
        "inference_bytes": 4 * (encoder + classifier),
        "pretrain_bytes": 4 * (encoder + pretext),
        "window_bytes": 4 * spec.input_size,
    }


# --- FOGM1 weight files ---

def _arch_to_json(spec: ArchSpec) -> bytes:
    return json.dumps(asdict(spec), sort_keys=True).encode("utf-8")


def _arch_from_json(blob: bytes) -> ArchSpec:
    values = json.loads(blob.decode("utf-8"))
    for key in ("conv_filters", "dense_units"):
        values[key] = tuple(values[key])
    return ArchSpec(**values)


def _write_arrays(handle, arrays: dict[str, np.ndarray]) -> None:
    handle.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        value = arrays[name]
        encoded = name.encode("utf-8")
        handle.write(struct.pack("<I", len(encoded)))
        handle.write(encoded)
        handle.write(struct.pack("<I", value.ndim))
        handle.write(struct.pack(f"<{value.ndim}I", *value.shape))
        handle.write(np.ascontiguousarray(value, dtype="<f4").tobytes())


def _read_arrays(blob: bytes, offset: int) -> tuple[dict[str, np.ndarray], int]:
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (length,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset:offset + length].decode("utf-8")
        offset += length
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        size = int(np.prod(shape)) if rank else 1
        arrays[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=offset).astype(np.float64).reshape(shape)
        offset += 4 * size
    return arrays, offset


def save_params(params: ParamSet, spec: ArchSpec, path: str | Path, *, include_adam: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arch = _arch_to_json(spec)
    with path.open("wb") as handle:
        handle.write(WEIGHTS_MAGIC)
        handle.write(struct.pack("<B", WEIGHTS_VERSION))
        handle.write(struct.pack("<I", len(arch)))
        handle.write(arch)
        _write_arrays(handle, params.arrays)
        handle.write(struct.pack("<B", 1 if include_adam else 0))
        if include_adam:
            handle.write(struct.pack("<Q", params.step))
            moments = {f"m/{name}": value for name, value in params.adam_m.items()}
            moments.update({f"v/{name}": value for name, value in params.adam_v.items()})
            _write_arrays(handle, moments)
    return path


def load_params(path: str | Path) -> tuple[ParamSet, ArchSpec]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if not blob.startswith(WEIGHTS_MAGIC):
        raise FormatError(f"{path}: not a FOGM1 weight file")
    offset = len(WEIGHTS_MAGIC)
    try:
        (version,) = struct.unpack_from("<B", blob, offset)
        if version != WEIGHTS_VERSION:
            raise FormatError(f"{path}: unsupported weight file version {version}")
        (arch_length,) = struct.unpack_from("<I", blob, offset + 1)
        offset += 5
        spec = _arch_from_json(blob[offset:offset + arch_length])
        offset += arch_length
        arrays, offset = _read_arrays(blob, offset)
        params = ParamSet(arrays=arrays)
        (has_adam,) = struct.unpack_from("<B", blob, offset) if offset < len(blob) else (0,)
        if has_adam:
            (params.step,) = struct.unpack_from("<Q", blob, offset + 1)
            moments, _ = _read_arrays(blob, offset + 9)
            params.adam_m = {name[2:]: value for name, value in moments.items() if name.startswith("m/")}
            params.adam_v = {name[2:]: value for name, value in moments.items() if name.startswith("v/")}
    except (struct.error, ValueError, KeyError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt weight file: {exc}") from exc
    return params, spec


__all__ = [
    "ForwardCache",
    "Head",
    "LossKind",
    "ParamSet",
    "adam_step",
    "backward",
    "bce",
    "bce_grad",
    "classifier_names",
    "encode",
    "encoder_names",
    "forward",
    "forward_from_embeddings",
    "init_classifier",
    "init_params",
    "load_params",
    "masked_mse",
    "model_footprint",
    "predict_proba",
    "pretext_names",
    "save_params",
]
