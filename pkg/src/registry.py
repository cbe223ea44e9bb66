"""SQLite-backed registry of experiment runs and their metric rows."""

from __future__ import annotations

import hashlib
import json
import logging
import subprocess
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable
from uuid import uuid4

from pydantic import BaseModel, Field
from sqlalchemy import Engine, create_engine, text

from errors import StructuralError
from logging_utils import log_json

PACKAGE_VERSION = "0.1.0"
_WRITE_LOCK = threading.Lock()


def _now() -> datetime:
    return datetime.now(timezone.utc)


def _iso(value: datetime | None = None) -> str:
    return (value or _now()).isoformat()


def describe_version(root: str | Path | None = None) -> str:
    """``git describe --always --dirty`` when available, else the package version."""
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=root or Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
            check=False,
        )
    except (OSError, subprocess.SubprocessError):
        return PACKAGE_VERSION
    described = result.stdout.strip()
    return described if result.returncode == 0 and described else PACKAGE_VERSION


def assert_disjoint(train: Iterable[str], test: Iterable[str]) -> None:
    shared = set(train) & set(test)
    if shared:
        raise StructuralError(f"{len(shared)} recording(s) appear in both training and test data")


class FoldRecord(BaseModel):
    """Which recordings one LOGO fold trained and tested on."""

    repeat: int
    held_out: str
    train_fingerprints: list[str]
    test_fingerprints: list[str]


class RunManifest(BaseModel):
    run_id: str = Field(default_factory=lambda: uuid4().hex)
    command: str
    config_hash: str
    master_seed: int
    seeds: dict[str, int] = Field(default_factory=dict)
    version: str = Field(default_factory=describe_version)
    train_fingerprints: list[str] = Field(default_factory=list)
    test_fingerprints: list[str] = Field(default_factory=list)
    folds: list[FoldRecord] = Field(default_factory=list)
    model_checksum: str | None = None
    outputs: list[str] = Field(default_factory=list)
    created_at: str = Field(default_factory=_iso)

    def check_disjoint(self) -> None:
        assert_disjoint(self.train_fingerprints, self.test_fingerprints)
        for fold in self.folds:
            assert_disjoint(fold.train_fingerprints, fold.test_fingerprints)


def file_fingerprint(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(manifest: RunManifest, out_dir: str | Path) -> Path:
    path = Path(out_dir) / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    with _WRITE_LOCK:
        path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    log_json(logging.INFO, "artifact_written", path=str(path), run_id=manifest.run_id)
    return path


class RunRegistry:
    """Manifests plus metric rows, one database per output directory."""

    def __init__(self, engine: Engine):
        self.engine = engine
        self.migrate()

    @classmethod
    def open(cls, out_dir: str | Path) -> "RunRegistry":
        path = Path(out_dir)
        path.mkdir(parents=True, exist_ok=True)
        return cls(create_engine(f"sqlite:///{path / 'runs.db'}", future=True))

    def migrate(self) -> None:
        statements = [
            """CREATE TABLE IF NOT EXISTS runs (
                run_id TEXT PRIMARY KEY, command TEXT NOT NULL, config_hash TEXT NOT NULL,
                master_seed INTEGER NOT NULL, version TEXT NOT NULL,
                manifest_json TEXT NOT NULL, created_at TEXT NOT NULL
            )""",
            """CREATE TABLE IF NOT EXISTS run_metrics (
                run_id TEXT NOT NULL, row_index INTEGER NOT NULL, row_json TEXT NOT NULL,
                PRIMARY KEY (run_id, row_index)
            )""",
            """CREATE INDEX IF NOT EXISTS idx_runs_config_hash
                ON runs(config_hash, created_at)""",
        ]
        with self.engine.begin() as conn:
            for statement in statements:
                conn.execute(text(statement))

    def record(self, manifest: RunManifest, rows: Iterable[dict[str, Any]] = ()) -> str:
        with _WRITE_LOCK, self.engine.begin() as conn:
            conn.execute(
                text("""INSERT OR REPLACE INTO runs
                    (run_id, command, config_hash, master_seed, version, manifest_json, created_at)
                    VALUES (:id, :command, :hash, :seed, :version, :manifest, :created)"""),
                {
                    "id": manifest.run_id, "command": manifest.command, "hash": manifest.config_hash,
                    "seed": manifest.master_seed, "version": manifest.version,
                    "manifest": manifest.model_dump_json(), "created": manifest.created_at,
                },
            )
            conn.execute(text("DELETE FROM run_metrics WHERE run_id = :id"), {"id": manifest.run_id})
            for index, row in enumerate(rows):
                conn.execute(
                    text("INSERT INTO run_metrics (run_id, row_index, row_json) VALUES (:id, :index, :row)"),
                    {"id": manifest.run_id, "index": index, "row": json.dumps(row, sort_keys=True, default=str)},
                )
        return manifest.run_id

    def get(self, run_id: str) -> RunManifest | None:
        with self.engine.begin() as conn:
            row = conn.execute(text("SELECT manifest_json FROM runs WHERE run_id = :id"), {"id": run_id}).first()
        return RunManifest.model_validate_json(row[0]) if row else None

    def metric_rows(self, run_id: str) -> list[dict[str, Any]]:
        with self.engine.begin() as conn:
            rows = conn.execute(
                text("SELECT row_json FROM run_metrics WHERE run_id = :id ORDER BY row_index"), {"id": run_id}
            ).all()
        return [json.loads(row[0]) for row in rows]

    def runs_for_config(self, config_hash: str) -> list[RunManifest]:
        with self.engine.begin() as conn:
            rows = conn.execute(
                text("SELECT manifest_json FROM runs WHERE config_hash = :hash ORDER BY created_at"),
                {"hash": config_hash},
            ).all()
        return [RunManifest.model_validate_json(row[0]) for row in rows]


__all__ = ["FoldRecord", "RunManifest", "RunRegistry", "assert_disjoint", "describe_version", "file_fingerprint", "write_manifest"]
