import time

import numpy as np
import pytest

from gapfuse.efficiency import (
    EfficiencyReport,
    Timer,
    batch_memory,
    dataset_memory,
    format_mb,
    format_table,
    label_width,
    model_memory,
    reference_memory_rows,
    timed_epoch,
    to_mb,
)
from gapfuse.fusion_models import build


def test_batch_memory_arithmetic():
    batch = {"image": np.zeros((64, 512)), "text": np.zeros((64, 512)), "labels": np.zeros(64)}
    assert batch_memory(batch) == (64 * 512 * 2 + 64) * 4 == 262_400
    assert batch_memory([]) == 0


def test_brset_clip_train_set():
    n = dataset_memory(13_012, 512, 512)
    assert n == 13_012 * 1025 * 4 == 53_349_200
    assert format_mb(n) == "50.88 MB"


def test_model_memory():
    assert format_mb(model_memory(build("early", 512, 512, 2))) == "0.50 MB"
    assert to_mb(model_memory(196_000_000)) == pytest.approx(747.7, abs=0.05)
    assert model_memory(0) == 0


def test_label_width():
    assert label_width(2) == 1
    assert label_width(7) == 7


def test_si_units():
    assert format_mb(10 ** 6, si=True) == "1.00 MB"
    assert format_mb(2 ** 20) == "1.00 MB"


def test_empty_closure_fast():
    assert timed_epoch(lambda: None) < 0.01


def _busy(seconds):
    end = time.perf_counter() + seconds
    while time.perf_counter() < end:
        pass


def test_timing_additive():
    f = timed_epoch(lambda: _busy(0.1))
    g = timed_epoch(lambda: _busy(0.1))
    both = timed_epoch(lambda: (_busy(0.1), _busy(0.1)))
    assert both == pytest.approx(f + g, rel=0.10)


def test_nested_timers():
    with Timer() as outer:
        with Timer() as inner:
            _busy(0.01)
    assert 0 < inner.elapsed <= outer.elapsed


def test_report_round_trip():
    r = EfficiencyReport(1, 2, 3, 0.5, 0.25, label="x")
    assert EfficiencyReport.from_json(r.to_json()) == r
    assert EfficiencyReport.from_dict(r.to_dict()) == r


def test_reference_rows_table():
    rows = reference_memory_rows()
    assert len(rows) == 18
    text = format_table(rows, timing=False)
    assert "brset/clip/early" in text
    assert "50.88 MB" in text
    assert len(text.splitlines()) == 20
