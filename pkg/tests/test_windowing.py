import struct
from dataclasses import replace

import numpy as np
import pytest

from conftest import make_stream
from errors import EmptyInputError, FormatError, StructuralError
from harness import synth_cohort
from settings import WindowMode, WindowSpec
from windowing import (
    WINDOWS_MAGIC,
    WindowSet,
    class_balance,
    compare_segmentation,
    concat_windows,
    read_windowset,
    segment,
    write_windowset,
)


def _stepwise_starts(labels, frame, hop_nonfog, hop_fog, threshold):
    kept, start = [], 0
    while start + frame <= len(labels):
        fog = int(labels[start:start + frame].sum())
        is_fog = fog >= threshold * frame
        if is_fog or fog == 0:
            kept.append((start, fog / frame))
        start += hop_fog if is_fog else hop_nonfog
    return kept


def _random_labels(rng, total):
    labels = np.zeros(total, dtype=np.int8)
    cursor = int(rng.integers(0, 200))
    while cursor < total:
        length = int(rng.integers(5, 400))
        labels[cursor:cursor + length] = 1
        cursor += length + int(rng.integers(1, 400))
    return labels


def test_dhwt_matches_stepwise_enumeration():
    rng = np.random.default_rng(2024)
    spec = WindowSpec()
    for case in range(50):
        labels = _random_labels(rng, int(rng.integers(400, 3000)))
        stream = make_stream(labels, rate_hz=40.0, seed=case)

        ws = segment(stream, spec)
        expected = _stepwise_starts(labels, 120, 60, 30, 0.5)

        assert ws.start_index.tolist() == [start for start, _ in expected]
        np.testing.assert_allclose(ws.fog_fraction, [fraction for _, fraction in expected])
        assert set(np.unique(ws.fog_fraction[ws.labels == 0])) <= {0.0}
        assert (ws.fog_fraction[ws.labels == 1] >= 0.5).all()


def test_frames_are_centred_and_raw_frames_restore_the_signal():
    labels = np.r_[np.zeros(300), np.ones(200), np.zeros(300)]
    stream = make_stream(labels, rate_hz=40.0, seed=5)
    ws = segment(stream, WindowSpec())

    np.testing.assert_allclose(ws.frames.mean(axis=1), 0.0, atol=1e-12)
    for index, start in enumerate(ws.start_index):
        np.testing.assert_allclose(ws.raw_frames()[index], stream.acc[start:start + 120], atol=1e-12)
    np.testing.assert_allclose(ws.magnitude, np.linalg.norm(ws.raw_frames(), axis=2).mean(axis=1))


def test_fog_hop_is_a_quarter_window_inside_an_episode():
    labels = np.r_[np.zeros(240), np.ones(600), np.zeros(240)]
    ws = segment(make_stream(labels), WindowSpec())
    fog_starts = ws.start_index[ws.labels == 1]
    assert set(np.diff(fog_starts)) == {30}
    assert ws.mixed_count > 0


def test_inference_mode_keeps_every_window_at_the_nonfog_hop():
    labels = np.r_[np.zeros(240), np.ones(100), np.zeros(300)]
    ws = segment(make_stream(labels), WindowSpec().inference())
    assert len(ws) == (640 - 120) // 60 + 1
    assert set(np.diff(ws.start_index)) == {60}
    mixed = (ws.fog_fraction > 0) & (ws.fog_fraction < 0.5)
    assert mixed.any()
    assert (ws.labels[mixed] == 0).all()
    assert ws.spec.mode is WindowMode.INFERENCE_FIXED


def test_windows_do_not_cross_a_break():
    stream = make_stream(np.zeros(300))
    spliced = replace(stream, breaks=(130,))

    assert segment(stream, WindowSpec().inference()).start_index.tolist() == [0, 60, 120, 180]
    for spec in (WindowSpec().inference(), WindowSpec().training()):
        ws = segment(spliced, spec)
        assert ws.start_index.tolist() == [0, 130]
        np.testing.assert_allclose(ws.raw_frames()[1], stream.acc[130:250])


def test_dhwt_raises_the_fog_share_over_fixed_hopping():
    streams = synth_cohort(subjects=3, duration_s=300.0, fog_rate=0.3, seed=11)
    report = compare_segmentation(streams, WindowSpec())
    assert report["dhwt"]["fog_frac"] >= report["fixed"]["fog_frac"]
    assert report["dhwt"]["fog_frac"] > 0


def test_stream_shorter_than_a_window_is_empty_input():
    with pytest.raises(EmptyInputError):
        segment(make_stream(np.zeros(100)), WindowSpec())


def test_window_set_rejects_inconsistent_labels():
    ws = segment(make_stream(np.zeros(400)), WindowSpec())
    with pytest.raises(StructuralError):
        WindowSet(
            frames=ws.frames,
            labels=np.ones(len(ws)),
            fog_fraction=ws.fog_fraction,
            start_index=ws.start_index,
            channel_mean=ws.channel_mean,
            spec=ws.spec,
            rate_hz=ws.rate_hz,
        )


def test_concat_keeps_sources_apart():
    first = segment(make_stream(np.zeros(400), subject_id="A"), WindowSpec())
    second = segment(make_stream(np.r_[np.zeros(200), np.ones(200)], subject_id="B"), WindowSpec())
    combined = concat_windows([first, second])
    assert combined.subject_ids == ("A", "B")
    assert combined.source.tolist() == [0] * len(first) + [1] * len(second)
    subset = combined.subset([len(first), 0])
    assert subset.source.tolist() == [0, 1]
    nonfog, fog = class_balance(combined)
    assert nonfog + fog == pytest.approx(1.0)


def test_window_file_round_trip(tmp_path):
    labels = np.r_[np.zeros(300), np.ones(300), np.zeros(200)]
    ws = concat_windows([
        segment(make_stream(labels, subject_id="A", seed=1), WindowSpec()),
        segment(make_stream(labels, subject_id="B", seed=2), WindowSpec()),
    ])

    loaded = read_windowset(write_windowset(ws, tmp_path / "train.fogw"))

    np.testing.assert_allclose(loaded.frames, ws.frames, rtol=1e-6, atol=1e-7)
    np.testing.assert_array_equal(loaded.labels, ws.labels)
    np.testing.assert_array_equal(loaded.fog_fraction, ws.fog_fraction)
    np.testing.assert_array_equal(loaded.start_index, ws.start_index)
    np.testing.assert_array_equal(loaded.source, ws.source)
    np.testing.assert_array_equal(loaded.channel_mean, ws.channel_mean)
    assert loaded.spec == ws.spec
    assert loaded.subject_ids == ("A", "B")
    assert loaded.mixed_count == ws.mixed_count


def test_bare_window_file_reads_without_provenance(tmp_path):
    frames = np.zeros((2, 120, 3), dtype="<f4")
    path = tmp_path / "bare.fogw"
    path.write_bytes(WINDOWS_MAGIC + struct.pack("<III", 2, 120, 3) + frames.tobytes() + bytes([0, 1]))

    ws = read_windowset(path)

    assert ws.labels.tolist() == [0, 1]
    assert ws.spec.mode is WindowMode.INFERENCE_FIXED
    np.testing.assert_array_equal(ws.channel_mean, 0.0)


def test_foreign_file_is_a_format_error(tmp_path):
    path = tmp_path / "junk.fogw"
    path.write_bytes(b"NOTAWINDOWFILE")
    with pytest.raises(FormatError):
        read_windowset(path)
