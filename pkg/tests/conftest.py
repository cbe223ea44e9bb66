import os
import sys

import numpy as np
import pytest

CURRENT_DIR = os.path.dirname(__file__)
SRC_ROOT = os.path.abspath(os.path.join(CURRENT_DIR, os.pardir, "src"))
if SRC_ROOT not in sys.path:
    sys.path.insert(0, SRC_ROOT)
os.environ.setdefault("OTEL_SDK_DISABLED", "true")

from ingest import SignalStream  # noqa: E402
from settings import (  # noqa: E402
    ArchSpec,
    DataSettings,
    HarnessSettings,
    MaskSpec,
    RunConfig,
    TrainPlan,
    WindowSpec,
)


def make_stream(labels, rate_hz=40.0, acc=None, subject_id="S01", seed=0):
    labels = np.asarray(labels, dtype=np.int8)
    if acc is None:
        rng = np.random.default_rng(seed)
        acc = rng.normal(0.0, 0.1, size=(labels.size, 3)) + np.array([0.0, 0.0, 1.0])
    return SignalStream(
        t=np.arange(labels.size) / rate_hz,
        acc=acc,
        labels=labels,
        rate_hz=rate_hz,
        subject_id=subject_id,
    )


@pytest.fixture
def small_arch():
    return ArchSpec(
        conv_filters=(4, 4),
        kernel=3,
        maxpool_after_layer=1,
        gap_after_layer=2,
        dense_units=(8,),
        dropout=0.0,
        frame_length=16,
    )


@pytest.fixture
def small_config(small_arch):
    return RunConfig(
        window=WindowSpec(window_s=1.0),
        arch=small_arch,
        train=TrainPlan(
            pretrain_epochs=2,
            finetune_epochs=2,
            supervised_epochs=2,
            batch_size=32,
            finetune_lr=0.001,
        ),
        mask=MaskSpec(segment_len_m=2, num_segments=2),
        data=DataSettings(working_rate_hz=16.0),
        harness=HarnessSettings(repeats=1, workers=1),
        seed=7,
    )
