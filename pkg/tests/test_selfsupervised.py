from dataclasses import replace

import numpy as np
import pytest

from conftest import make_stream
from errors import ConfigError, EmptyInputError, StructuralError
from harness import synth_cohort
from metrics import window_metrics
from selfsupervised import (
    apply_mask,
    finetune,
    load_bundle,
    predict,
    pretrain,
    save_bundle,
    stratified_subsample,
    timing_profile,
    train_supervised,
)
from settings import MaskSpec, WindowSpec
from windowing import WindowSet, concat_windows, segment


def _labelled_windows(config, subjects=2, seed=3):
    streams = synth_cohort(subjects=subjects, duration_s=120.0, fog_rate=0.3, seed=seed, rate_hz=16.0)
    return concat_windows([segment(stream, config.window) for stream in streams])


def _flat_windows(count, fog):
    labels = np.r_[np.ones(fog), np.zeros(count - fog)].astype(np.int8)
    return WindowSet(
        frames=np.zeros((count, 4, 3)),
        labels=labels,
        fog_fraction=labels.astype(float),
        start_index=np.arange(count),
        channel_mean=np.zeros((count, 3)),
        spec=WindowSpec(),
        rate_hz=1.0,
    )


def test_mask_covers_k_disjoint_runs_per_frame():
    rng = np.random.default_rng(0)
    frames = rng.normal(size=(200, 40, 3))
    original = frames.copy()
    spec = MaskSpec(segment_len_m=6, num_segments=3, fill_value=0.0, rng_seed=11)

    masked, positions = apply_mask(frames, spec)

    assert positions.shape == (200, 40)
    assert positions.sum() == 200 * 3 * 6
    for row in positions:
        edges = np.flatnonzero(np.diff(np.r_[0, row.astype(int), 0]))
        lengths = edges[1::2] - edges[::2]
        # adjacent runs may touch, so lengths come in multiples of m
        assert (lengths % 6 == 0).all()
    assert (masked[positions] == 0.0).all()
    np.testing.assert_array_equal(masked[~positions], frames[~positions])
    np.testing.assert_array_equal(frames, original)


def test_mask_is_seeded():
    frames = np.ones((10, 30, 3))
    first = apply_mask(frames, MaskSpec(segment_len_m=5, num_segments=2, rng_seed=1))[1]
    again = apply_mask(frames, MaskSpec(segment_len_m=5, num_segments=2, rng_seed=1))[1]
    other = apply_mask(frames, MaskSpec(segment_len_m=5, num_segments=2, rng_seed=2))[1]
    np.testing.assert_array_equal(first, again)
    assert not np.array_equal(first, other)


def test_mask_that_cannot_fit_is_a_config_error():
    with pytest.raises(ConfigError):
        apply_mask(np.zeros((2, 10, 3)), MaskSpec(segment_len_m=5, num_segments=2))


def test_pretraining_on_a_repeated_pattern_reduces_loss(small_arch, small_config):
    t = np.arange(16)[:, None]
    pattern = 0.5 * np.sin(2 * np.pi * t / 8 + np.arange(3)[None, :])
    frames = np.repeat(pattern[None], 64, axis=0)
    plan = replace(small_config.train, pretrain_epochs=30, batch_size=16)

    bundle = pretrain(frames, small_arch, plan, small_config.mask, seed=0)

    losses = bundle.metadata.pretrain_losses
    assert len(losses) == 30
    assert losses[-1] < losses[0]
    assert bundle.has_pretext and not bundle.has_classifier
    with pytest.raises(StructuralError):
        bundle.predictor()


def test_pretraining_on_constant_windows_drives_the_loss_to_zero(small_arch, small_config):
    frames = np.full((64, 16, 3), 0.3)
    plan = replace(small_config.train, pretrain_epochs=70)

    losses = pretrain(frames, small_arch, plan, small_config.mask, seed=0).metadata.pretrain_losses

    assert len(losses) == 70
    assert losses[-1] < 1e-3


def test_pretraining_on_a_5hz_sine_halves_the_loss(small_arch, small_config):
    t = np.arange(16 + 199 * 8) / 40.0
    wave = np.sin(2 * np.pi * 5.0 * t)
    acc = np.column_stack([0.5 * wave, 0.3 * np.cos(2 * np.pi * 5.0 * t), 1.0 + 0.2 * wave])
    windows = segment(make_stream(np.zeros(t.size), acc=acc), WindowSpec(window_s=0.4).inference())
    assert len(windows) == 200

    plan = replace(small_config.train, pretrain_epochs=40)
    losses = pretrain(windows.unlabeled(), small_arch, plan, small_config.mask, seed=0).metadata.pretrain_losses

    assert losses[-1] < 0.5 * losses[0]


def test_pretraining_never_reads_labels(small_config):
    windows = _labelled_windows(small_config)
    relabelled = WindowSet(
        frames=windows.frames,
        labels=np.zeros(len(windows)),
        fog_fraction=np.zeros(len(windows)),
        start_index=windows.start_index,
        channel_mean=windows.channel_mean,
        spec=windows.spec.inference(),
        rate_hz=windows.rate_hz,
        source=windows.source,
    )
    first = pretrain(windows, small_config.arch, small_config.train, small_config.mask, seed=4)
    second = pretrain(relabelled, small_config.arch, small_config.train, small_config.mask, seed=4)
    assert first.encoder_checksum() == second.encoder_checksum()


def test_pretraining_rejects_empty_and_mismatched_input(small_config):
    with pytest.raises(EmptyInputError):
        pretrain(np.zeros((0, 16, 3)), small_config.arch, small_config.train, small_config.mask, seed=0)
    with pytest.raises(StructuralError):
        pretrain(np.zeros((4, 20, 3)), small_config.arch, small_config.train, small_config.mask, seed=0)


def test_frozen_finetune_leaves_the_encoder_untouched(small_config):
    windows = _labelled_windows(small_config)
    bundle = pretrain(windows.unlabeled(), small_config.arch, small_config.train, small_config.mask, seed=1)

    tuned = finetune(bundle, windows, small_config.train, seed=2)

    assert tuned.encoder_checksum() == bundle.encoder_checksum()
    assert tuned.has_classifier
    assert tuned.metadata.stage == "finetuned"
    assert len(tuned.metadata.train_losses) == small_config.train.finetune_epochs

    unfrozen = finetune(bundle, windows, replace(small_config.train, freeze_encoder=False), seed=2)
    assert unfrozen.encoder_checksum() != bundle.encoder_checksum()
    assert bundle.encoder_checksum() == bundle.metadata.encoder_checksum


def test_finetuned_head_separates_separable_windows(small_arch, small_config):
    rng = np.random.default_rng(0)
    labels = np.r_[np.ones(64), np.zeros(64)].astype(np.int8)
    t = np.arange(16)[None, :, None]
    phase = rng.uniform(0, 2 * np.pi, size=(128, 1, 1)) + np.arange(3)[None, None, :]
    amplitude = np.where(labels == 1, 1.0, 0.1)[:, None, None]
    frames = amplitude * np.sin(2 * np.pi * t / 4 + phase) + rng.normal(0.0, 0.02, size=(128, 16, 3))
    windows = WindowSet(
        frames=frames,
        labels=labels,
        fog_fraction=labels.astype(float),
        start_index=np.arange(128),
        channel_mean=np.zeros((128, 3)),
        spec=WindowSpec(),
        rate_hz=16.0,
    )
    plan = replace(small_config.train, pretrain_epochs=10, finetune_epochs=40, finetune_lr=0.02)

    bundle = pretrain(windows.unlabeled(), small_arch, plan, small_config.mask, seed=0)
    tuned = finetune(bundle, windows, plan, seed=1)

    assert window_metrics(predict(tuned, windows)).accuracy >= 0.95
    assert tuned.encoder_checksum() == bundle.encoder_checksum()


def test_finetune_is_reproducible(small_config):
    windows = _labelled_windows(small_config)
    bundle = pretrain(windows.unlabeled(), small_config.arch, small_config.train, small_config.mask, seed=1)
    first = finetune(bundle, windows, small_config.train, seed=5)
    second = finetune(bundle, windows, small_config.train, seed=5)
    assert first.params.checksum() == second.params.checksum()


def test_stratified_subsample_keeps_the_class_ratio():
    windows = _flat_windows(1000, 300)

    subset = stratified_subsample(windows, 0.4, seed=8)

    assert len(subset) == 400
    assert abs(int(subset.labels.sum()) - 120) <= 1
    np.testing.assert_array_equal(subset.start_index, stratified_subsample(windows, 0.4, seed=8).start_index)
    assert stratified_subsample(windows, 1.0, seed=8) is windows
    with pytest.raises(ConfigError):
        stratified_subsample(windows, 0.0, seed=8)


def test_single_class_label_subset_is_rejected(small_config):
    windows = _flat_windows(20, 1)
    with pytest.raises(ConfigError, match="single class"):
        train_supervised(windows, small_config.arch, replace(small_config.train, label_fraction=0.2), seed=0)


def test_supervised_baseline_and_prediction_trace(small_config, tmp_path):
    windows = _labelled_windows(small_config)
    test = segment(synth_cohort(subjects=1, duration_s=60.0, seed=99, rate_hz=16.0)[0], small_config.window.inference())

    baseline = train_supervised(windows, small_config.arch, small_config.train, seed=3)
    trace = predict(baseline, test)

    assert baseline.metadata.stage == "supervised"
    assert len(baseline.metadata.train_losses) == small_config.train.baseline_epochs
    assert len(trace) == len(test)
    assert trace.active.all()
    assert ((trace.probability >= 0) & (trace.probability <= 1)).all()
    np.testing.assert_array_equal(trace.decision, (trace.probability >= 0.5).astype(np.int8))
    np.testing.assert_allclose(trace.probability, baseline.predictor()(test.frames), rtol=1e-9)

    path = save_bundle(baseline, tmp_path / "baseline.fogm")
    loaded = load_bundle(path)
    assert loaded.metadata.stage == "supervised"
    assert loaded.metadata.labeled_windows == baseline.metadata.labeled_windows
    np.testing.assert_allclose(predict(loaded, test).probability, trace.probability, atol=1e-5)


def test_timing_profile_rows(small_config):
    windows = _labelled_windows(small_config)
    bundle = pretrain(windows.unlabeled(), small_config.arch, small_config.train, small_config.mask, seed=1)
    rows = timing_profile(bundle, windows, [8, 32], small_config.train)
    assert [row["windows"] for row in rows] == [8, 32]
    assert all(row["train_epoch_s"] >= 0 and row["inference_s"] >= 0 for row in rows)
    with pytest.raises(ConfigError):
        timing_profile(bundle, windows, [len(windows) + 1], small_config.train)
