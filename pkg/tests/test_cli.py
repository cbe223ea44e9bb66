import io
import json
from contextlib import redirect_stderr, redirect_stdout

import pandas as pd
import pytest

from cli import main
from registry import RunRegistry

SMALL_RUN = """
seed=3
data.working_rate_hz=16
window.window_s=1.0
arch.conv_filters=4,4
arch.kernel=3
arch.maxpool_after_layer=1
arch.gap_after_layer=2
arch.dense_units=8
arch.dropout=0
arch.frame_length=16
train.pretrain_epochs=2
train.finetune_epochs=2
train.batch_size=32
mask.segment_len_m=2
mask.num_segments=2
"""


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for name in ("FOGMON_CONFIG", "FOGMON_SEED", "FOGMON_OUT_DIR", "FOGMON_DATA_DIR", "FOGMON_WORKING_RATE_HZ", "FOGMON_UNIT"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def small_conf(tmp_path):
    path = tmp_path / "small.conf"
    path.write_text(SMALL_RUN, encoding="utf-8")
    return path


def _run(*argv):
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main([str(arg) for arg in argv])
    return code, out.getvalue(), err.getvalue()


def _last_run(out_dir):
    manifest = json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))
    registry = RunRegistry.open(out_dir)
    return manifest, registry.get(manifest["run_id"]), registry.metric_rows(manifest["run_id"])


def test_missing_config_file_exits_with_config_code(tmp_path):
    code, _, err = _run("synth", "--config", tmp_path / "absent.conf", "--out", tmp_path)
    assert code == 2
    assert "absent.conf" in err


def test_bad_override_exits_with_config_code(tmp_path):
    code, _, err = _run("synth", "--set", "window.nope=1", "--out", tmp_path)
    assert code == 2
    assert "window.nope" in err
    assert _run("synth", "--set", "seed", "--out", tmp_path)[0] == 2


def test_bad_trace_exits_with_data_code(tmp_path):
    trace = tmp_path / "trace.csv"
    trace.write_text("just,some\n1,2\n", encoding="utf-8")
    assert _run("evaluate", trace, "--out", tmp_path / "out")[0] == 3


def test_synth_writes_a_cohort(tmp_path):
    code, out, _ = _run("synth", "--subjects", "2", "--duration", "20", "--seed", "4", "--out", tmp_path, "--quiet")

    assert code == 0
    assert json.loads(out)["subjects"] == 2
    subjects = pd.read_csv(tmp_path / "subjects.csv")
    assert subjects["subject_id"].tolist() == ["S01", "S02"]
    summary = pd.read_csv(tmp_path / "cohort_summary.csv")
    assert summary["samples"].tolist() == [800, 800]
    assert (tmp_path / "S02.csv").is_file()


def test_pipeline_from_recording_to_report(tmp_path, small_conf):
    cohort = tmp_path / "cohort"
    run = tmp_path / "run"
    common = ("--config", small_conf, "--out", run, "--quiet")

    assert _run("synth", "--subjects", "2", "--duration", "60", "--config", small_conf, "--out", cohort, "--quiet")[0] == 0
    assert _run("segment", cohort / "S01.csv", run / "train.fogw", *common)[0] == 0
    assert _run("segment", cohort / "S02.csv", run / "test.fogw", "--mode", "inference", *common)[0] == 0
    assert _run("pretrain", run / "train.fogw", "--model", run / "encoder.fogm", *common)[0] == 0
    assert _run("finetune", run / "train.fogw", "--base", run / "encoder.fogm", "--model", run / "model.fogm", *common)[0] == 0
    assert _run("infer", run / "test.fogw", "--model", run / "model.fogm", "--output", run / "trace.csv", *common)[0] == 0

    code, out, _ = _run("evaluate", run / "trace.csv", *common)
    assert code == 0
    assert out.startswith("windows")
    report = json.loads((run / "report.json").read_text(encoding="utf-8"))
    assert report["majority_vote_passes"] == 0
    assert (run / "episodes.csv").is_file()
    manifest, stored, rows = _last_run(run)
    assert manifest["command"] == "evaluate" and stored.command == "evaluate"
    assert len(manifest["test_fingerprints"]) == 1
    assert rows[0]["majority_vote_passes"] == 0

    sweep = ("gate-sweep", run / "test.fogw", "--model", run / "model.fogm", "--output", run / "sweep.csv", "--alphas", "0,0.5")
    assert _run(*sweep, *common)[0] == 0
    manifest, stored, rows = _last_run(run)
    assert stored.command == "gate-sweep"
    assert manifest["model_checksum"] and manifest["outputs"] == [str(run / "sweep.csv")]
    assert [row["alpha"] for row in rows] == [0.0, 0.5]

    code, out, _ = _run("ato", run / "test.fogw", "--model", run / "model.fogm", "--output", run / "ato.csv", *common)
    assert code == 0
    evaluations = json.loads(out)["evaluations"]
    assert evaluations >= 1
    manifest, stored, rows = _last_run(run)
    assert stored.command == "ato" and stored.model_checksum == manifest["model_checksum"]
    assert list(stored.seeds) == ["finetuned"]
    assert len(rows) == evaluations
    assert len(RunRegistry.open(run).runs_for_config(stored.config_hash)) >= 6


def test_finetune_without_a_base_model_is_a_config_error(tmp_path, small_conf):
    common = ("--config", small_conf, "--out", tmp_path, "--quiet")
    assert _run("synth", "--subjects", "1", "--duration", "20", *common)[0] == 0
    assert _run("segment", tmp_path / "S01.csv", tmp_path / "w.fogw", *common)[0] == 0
    assert _run("finetune", tmp_path / "w.fogw", "--model", tmp_path / "m.fogm", *common)[0] == 2
