import time

import numpy as np
import pandas as pd
import pytest

from errors import ConfigError, EmptyInputError
from gate import ato, duty_cycle_report, gate, gate_sweep, magnitude, magnitudes, run_gated, timed_inference, write_sweep_csv
from settings import AtoConfig, BaselineMetric, GateConfig, WindowSpec
from windowing import WindowSet


def _windows(mags, labels, frame=120):
    mags = np.asarray(mags, dtype=float)
    labels = np.asarray(labels, dtype=np.int8)
    frames = np.zeros((mags.size, frame, 3))
    # sign of the first sample tells the stub model the label
    frames[:, 0, 0] = np.where(labels == 1, 1e-3, -1e-3)
    channel_mean = np.zeros((mags.size, 3))
    channel_mean[:, 2] = mags
    return WindowSet(
        frames=frames,
        labels=labels,
        fog_fraction=labels.astype(float),
        start_index=np.arange(mags.size) * 60,
        channel_mean=channel_mean,
        spec=WindowSpec().inference(),
        rate_hz=40.0,
    )


def _oracle(frames):
    return (frames[:, 0, 0] > 0).astype(float)


def test_magnitude_of_a_frame():
    frame = np.tile([0.6, 0.0, 0.8], (10, 1))
    assert magnitude(frame) == pytest.approx(1.0)
    np.testing.assert_allclose(magnitudes(np.stack([frame, 2 * frame])), [1.0, 2.0])


def test_gate_passes_windows_at_or_above_alpha():
    ws = _windows([0.2, 0.5, 0.9], [0, 0, 1])
    result = gate(ws, GateConfig(alpha=0.5))
    assert result.active.tolist() == [1, 2]
    assert result.rejected.tolist() == [0]
    assert result.rejection_ratio == pytest.approx(1 / 3)
    assert result.mask.tolist() == [False, True, True]
    assert gate(ws.raw_frames(), GateConfig(alpha=0.0)).rejection_ratio == 0.0
    with pytest.raises(ConfigError):
        GateConfig(alpha=-0.1)


def test_sweep_is_monotone_in_alpha():
    rng = np.random.default_rng(0)
    mags = rng.uniform(0.0, 1.5, size=300)
    ws = _windows(mags, rng.integers(0, 2, size=300))
    alphas = np.linspace(0.0, 1.5, 20)

    rows = gate_sweep(ws, _oracle, alphas)

    active = [row.n_active for row in rows]
    assert active == sorted(active, reverse=True)
    assert [row.rejection_ratio for row in rows] == sorted(row.rejection_ratio for row in rows)
    sensitivity = [row.sensitivity for row in rows]
    assert sensitivity == sorted(sensitivity, reverse=True)
    for alpha, row in zip(alphas, rows):
        assert row.n_active == int((ws.magnitude >= alpha).sum())


def test_gated_decisions_equal_ungated_on_active_windows():
    rng = np.random.default_rng(1)
    ws = _windows(rng.uniform(0.2, 1.2, size=50), rng.integers(0, 2, size=50))
    model = lambda frames: 1.0 / (1.0 + np.exp(-1000.0 * frames[:, 0, 0]))  # noqa: E731

    ungated = timed_inference(ws, model)
    gated = run_gated(ws, model, GateConfig(alpha=0.7))

    active = gated.active
    assert active.sum() == int((ws.magnitude >= 0.7).sum())
    np.testing.assert_array_equal(gated.probability[active], ungated.probability[active])
    np.testing.assert_array_equal(gated.decision[active], ungated.decision[active])
    assert (gated.probability[~active] == 0.0).all()
    assert (gated.decision[~active] == 0).all()
    assert (gated.model_cost_s[~active] == 0.0).all()
    assert gated.alpha == 0.7 and ungated.alpha is None
    assert ungated.active.all()


def test_ato_stops_one_step_before_degradation():
    mags = np.r_[np.full(20, 0.75), np.linspace(0.12, 0.68, 40)]
    labels = np.r_[np.ones(20), np.zeros(40)]
    cfg = AtoConfig(alpha_start=0.0, alpha_final=1.2, delta_alpha=0.1, tolerance=0.02)

    result = ato(_windows(mags, labels), None, _oracle, cfg)

    assert 0.75 - 0.1 <= result.alpha_opt <= 0.75
    assert result.alpha_opt == pytest.approx(0.7)
    assert result.break_alpha == pytest.approx(0.8)
    assert not result.no_degradation_found
    assert result.baseline == 1.0
    assert result.evaluations <= cfg.max_steps()
    assert result.active.size == int((mags >= 0.7).sum())


def test_ato_with_zero_tolerance_stops_at_the_first_drop():
    mags = np.r_[np.full(10, 0.25), np.full(30, 0.95), np.full(40, 0.1)]
    labels = np.r_[np.ones(40), np.zeros(40)]
    ws = _windows(mags, labels)

    strict = ato(ws, None, _oracle, AtoConfig(tolerance=0.0))
    assert strict.alpha_opt == pytest.approx(0.2)
    assert strict.break_alpha == pytest.approx(0.3)
    assert strict.evaluations == 4
    assert strict.sweep_log[-1].f1 == pytest.approx(60 / 70)

    loose = ato(ws, None, _oracle, AtoConfig(tolerance=0.2))
    assert loose.alpha_opt == pytest.approx(0.9)
    assert loose.break_alpha == pytest.approx(1.0)


def test_ato_with_flat_performance_returns_alpha_final():
    mags = np.full(30, 2.0)
    labels = np.r_[np.ones(10), np.zeros(20)]
    cfg = AtoConfig()

    result = ato(_windows(mags, labels), labels, _oracle, cfg)

    assert result.no_degradation_found
    assert result.alpha_opt == pytest.approx(1.2)
    assert result.evaluations == cfg.max_steps() == 13
    assert result.break_alpha is None


def test_ato_on_sensitivity_and_empty_input():
    mags = np.r_[np.full(10, 0.45), np.full(10, 1.0)]
    labels = np.r_[np.ones(10), np.zeros(10)]
    result = ato(_windows(mags, labels), None, _oracle, AtoConfig(baseline_metric=BaselineMetric.SENSITIVITY))
    assert result.alpha_opt == pytest.approx(0.4)

    with pytest.raises(EmptyInputError):
        ato(_windows([], []), None, _oracle, AtoConfig())
    with pytest.raises(EmptyInputError):
        gate_sweep(_windows([], []), _oracle, [0.0])


@pytest.mark.flaky(reruns=2)
def test_duty_cycle_saving_with_a_slow_model():
    mags = np.r_[np.full(60, 0.3), np.full(40, 1.0)]
    labels = np.zeros(100)

    def slow(frames):
        time.sleep(0.001)
        return np.full(len(frames), 0.2)

    report = duty_cycle_report(run_gated(_windows(mags, labels), slow, GateConfig(alpha=0.5)))

    assert report.rejected == 60 and report.active == 40
    assert report.rejection_ratio == pytest.approx(0.6)
    assert 0.5 <= report.saved_fraction <= 0.67
    assert report.reference_cost_ms >= 1.0
    assert report.mean_rejected_cost_ms < report.mean_active_cost_ms


def test_sweep_csv_columns(tmp_path):
    ws = _windows([0.2, 0.9, 0.9], [0, 1, 1])
    rows = gate_sweep(ws, _oracle, [0.0, 0.5, 1.0])

    plain = pd.read_csv(write_sweep_csv(rows, tmp_path / "sweep.csv"))
    with_dfe = pd.read_csv(write_sweep_csv(rows, tmp_path / "sweep_dfe.csv", include_dfe=True))

    assert plain.columns.tolist() == [
        "alpha", "n_active", "rejection_ratio", "sensitivity", "specificity", "f1", "mean_inference_ms"
    ]
    assert with_dfe.columns.tolist()[-1] == "dfe_pct"
    assert with_dfe["dfe_pct"].tolist()[:2] == [100.0, 100.0]
    assert with_dfe["f1"].iloc[2] == 0.0
