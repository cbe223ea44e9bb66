import numpy as np
import pytest

from conftest import make_stream
from errors import ConfigError, EmptyInputError, FormatError, ParseError, StructuralError
from ingest import (
    STANDARD_GRAVITY,
    ColumnMapping,
    SignalStream,
    load_canonical_csv,
    load_daphnet,
    load_mapped_csv,
    remove_mean,
    resample,
    to_g,
    write_canonical_csv,
)
from settings import Unit


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_canonical_csv_round_trip_is_exact(tmp_path):
    labels = np.r_[np.zeros(50), np.ones(30), np.zeros(20)]
    stream = make_stream(labels, rate_hz=40.0, subject_id="P07", seed=3)

    path = write_canonical_csv(stream, tmp_path / "P07.csv")
    loaded = load_canonical_csv(path)

    assert path.read_text(encoding="utf-8").splitlines()[0] == "t,ax,ay,az,label"
    assert loaded.subject_id == "P07"
    assert loaded.rate_hz == 40.0
    np.testing.assert_array_equal(loaded.t, stream.t)
    np.testing.assert_array_equal(loaded.acc, stream.acc)
    np.testing.assert_array_equal(loaded.labels, stream.labels)


def test_malformed_value_reports_its_line(tmp_path):
    path = _write(
        tmp_path / "bad.csv",
        "t,ax,ay,az,label\n0.000000,0,0,1,0\n0.025000,0,0,1,0\n0.050000,0,zero,1,0\n",
    )
    with pytest.raises(ParseError) as info:
        load_canonical_csv(path)
    assert info.value.line == 4
    assert "line 4" in str(info.value)


def test_bad_label_reports_its_line(tmp_path):
    path = _write(tmp_path / "bad.csv", "t,ax,ay,az,label\n0.000000,0,0,1,0\n0.025000,0,0,1,2\n")
    with pytest.raises(ParseError) as info:
        load_canonical_csv(path)
    assert info.value.line == 3


def test_wrong_header_is_a_format_error(tmp_path):
    path = _write(tmp_path / "bad.csv", "time,x,y,z,label\n0,0,0,1,0\n")
    with pytest.raises(FormatError):
        load_canonical_csv(path)


def test_non_monotone_timestamps_are_structural(tmp_path):
    path = _write(
        tmp_path / "bad.csv",
        "t,ax,ay,az,label\n0.000,0,0,1,0\n0.025,0,0,1,0\n0.050,0,0,1,0\n0.040,0,0,1,0\n0.100,0,0,1,0\n",
    )
    with pytest.raises(StructuralError):
        load_canonical_csv(path)


def test_stream_rejects_irregular_spacing():
    with pytest.raises(StructuralError, match="irregular"):
        SignalStream(t=np.array([0.0, 0.025, 0.06]), acc=np.zeros((3, 3)), labels=np.zeros(3), rate_hz=40.0)


def test_resample_64_to_40_keeps_duration():
    labels = np.r_[np.zeros(320), np.ones(321)]
    stream = make_stream(labels, rate_hz=64.0)

    out = resample(stream, 40.0)

    assert stream.duration_s == pytest.approx(10.0)
    assert len(out) == 401
    assert out.rate_hz == 40.0
    assert abs(out.duration_s - stream.duration_s) <= 1.0 / 40.0
    assert out.labels[0] == 0 and out.labels[-1] == 1
    assert abs(out.fog_fraction - stream.fog_fraction) < 0.01


def test_resample_interpolates_linearly():
    t = np.arange(11) / 10.0
    acc = np.column_stack([t, 2 * t, np.ones_like(t)])
    stream = SignalStream(t=t, acc=acc, labels=np.zeros(11), rate_hz=10.0)

    out = resample(stream, 20.0)

    np.testing.assert_allclose(out.acc[:, 0], out.t, atol=1e-12)
    np.testing.assert_allclose(out.acc[:, 1], 2 * out.t, atol=1e-12)


def test_resample_to_same_rate_is_identity():
    stream = make_stream(np.r_[np.zeros(100), np.ones(40)], rate_hz=40.0)
    out = resample(stream, 40.0)
    assert len(out) == len(stream)
    np.testing.assert_allclose(out.acc, stream.acc, atol=1e-9)
    np.testing.assert_array_equal(out.labels, stream.labels)


def test_resample_128_to_40_keeps_a_constant_signal():
    count = 1280
    level = np.array([0.1, -0.2, 0.98])
    stream = SignalStream(t=np.arange(count) / 128.0, acc=np.tile(level, (count, 1)), labels=np.zeros(count), rate_hz=128.0)

    out = resample(stream, 40.0)

    assert out.rate_hz == 40.0
    np.testing.assert_allclose(out.acc, np.tile(level, (len(out), 1)), atol=1e-12)


def test_resample_128_to_40_keeps_a_5hz_sine():
    t = np.arange(1280) / 128.0
    acc = np.column_stack([np.sin(2 * np.pi * 5.0 * t), np.zeros_like(t), np.ones_like(t)])
    stream = SignalStream(t=t, acc=acc, labels=np.zeros(t.size), rate_hz=128.0)

    out = resample(stream, 40.0)

    assert abs(np.abs(out.acc[:, 0]).max() - 1.0) <= 0.01
    np.testing.assert_allclose(out.acc[:, 0], np.sin(2 * np.pi * 5.0 * out.t), atol=0.01)


def test_resample_moves_breaks_onto_the_new_grid():
    stream = SignalStream(t=np.arange(128) / 64.0, acc=np.zeros((128, 3)), labels=np.zeros(128), rate_hz=64.0, breaks=(64,))

    out = resample(stream, 40.0)

    assert len(out) == 80
    assert out.breaks == (40,)
    assert out.runs() == [(0, 40), (40, 80)]


def test_stream_rejects_breaks_outside_the_samples():
    with pytest.raises(StructuralError, match="breaks"):
        SignalStream(t=np.arange(10) / 40.0, acc=np.zeros((10, 3)), labels=np.zeros(10), rate_hz=40.0, breaks=(0,))
    with pytest.raises(StructuralError, match="breaks"):
        SignalStream(t=np.arange(10) / 40.0, acc=np.zeros((10, 3)), labels=np.zeros(10), rate_hz=40.0, breaks=(6, 3))


def test_resample_rejects_empty_and_bad_rates():
    empty = SignalStream(t=np.zeros(0), acc=np.zeros((0, 3)), labels=np.zeros(0), rate_hz=40.0)
    with pytest.raises(EmptyInputError):
        resample(empty, 40.0)
    with pytest.raises(ConfigError):
        resample(make_stream(np.zeros(10)), 0.0)


def test_daphnet_drops_out_of_experiment_rows_and_converts_mg(tmp_path):
    rows = []
    for index, annotation in enumerate([0, 0, 1, 1, 2, 2, 2, 1, 0]):
        values = [index * 15.625] + [1000.0 * (column + 1) for column in range(9)] + [annotation]
        rows.append(" ".join(f"{value:g}" for value in values))
    path = _write(tmp_path / "S01R01.txt", "\n".join(rows) + "\n")

    stream = load_daphnet(path, sensor="trunk")

    assert len(stream) == 6
    np.testing.assert_array_equal(stream.labels, [0, 0, 1, 1, 1, 0])
    np.testing.assert_allclose(stream.acc[0], [7.0, 8.0, 9.0])
    assert stream.rate_hz == 64.0
    assert stream.unit is Unit.G
    assert stream.subject_id == "S01R01"

    ankle = load_daphnet(path, sensor="ankle")
    np.testing.assert_allclose(ankle.acc[0], [1.0, 2.0, 3.0])
    assert stream.breaks == ()


def test_daphnet_marks_a_break_where_rows_were_cut_out(tmp_path):
    rows = []
    for index, annotation in enumerate([1, 1, 0, 0, 2, 2, 1, 0, 1]):
        values = [index * 15.625] + [1000.0] * 9 + [annotation]
        rows.append(" ".join(f"{value:g}" for value in values))
    path = _write(tmp_path / "S02R01.txt", "\n".join(rows) + "\n")

    stream = load_daphnet(path)

    assert len(stream) == 6
    assert stream.breaks == (2, 5)
    assert stream.runs() == [(0, 2), (2, 5), (5, 6)]
    np.testing.assert_array_equal(stream.labels, [0, 0, 1, 1, 0, 0])


def test_daphnet_layout_errors(tmp_path):
    path = _write(tmp_path / "short.txt", "0 1 2 3 4 5 6 7 8 1\n")
    with pytest.raises(FormatError):
        load_daphnet(path)
    with pytest.raises(ConfigError):
        load_daphnet(path, sensor="wrist")


def test_mapped_csv_merges_fog_columns(tmp_path):
    lines = ["Time,AccV,AccML,AccAP,StartHesitation,Turn,Walking"]
    for index in range(8):
        flags = [1 if index in (2, 3) else 0, 1 if index == 5 else 0, 0]
        lines.append(",".join(str(v) for v in [index, 1.0, 0.1, 0.2, *flags]))
    path = _write(tmp_path / "tdcs.csv", "\n".join(lines) + "\n")

    stream = load_mapped_csv(path)

    assert stream.rate_hz == 128.0
    np.testing.assert_array_equal(stream.labels, [0, 0, 1, 1, 0, 1, 0, 0])
    np.testing.assert_allclose(stream.t[1], 1.0 / 128.0)


def test_column_mapping_file(tmp_path):
    path = _write(
        tmp_path / "mapping.conf",
        "time_col=ms\ntime_unit=ms\nrate_hz=none\naxis_cols=x,y,z\nfog_cols=fog\nunit=m_per_s2\n",
    )
    mapping = ColumnMapping.from_file(path)
    assert mapping.axis_cols == ("x", "y", "z")
    assert mapping.rate_hz is None
    assert mapping.unit is Unit.M_PER_S2

    _write(tmp_path / "bad.conf", "colour=red\n")
    with pytest.raises(ConfigError):
        ColumnMapping.from_file(tmp_path / "bad.conf")


def test_to_g_divides_by_standard_gravity():
    stream = make_stream(np.zeros(5))
    metric = SignalStream(t=stream.t, acc=stream.acc * STANDARD_GRAVITY, labels=stream.labels, rate_hz=40.0, unit=Unit.M_PER_S2)
    converted = to_g(metric)
    assert converted.unit is Unit.G
    np.testing.assert_allclose(converted.acc, stream.acc)
    assert to_g(stream) is stream


def test_remove_mean_centres_each_channel():
    rng = np.random.default_rng(1)
    stack = rng.normal(size=(4, 120, 3)) + np.array([0.1, -0.3, 1.0])
    centred = remove_mean(stack)
    np.testing.assert_allclose(centred.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(remove_mean(stack[0]), centred[0])
