import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapfuse.metrics import accuracy, binary_f1, f1_score, macro_f1


def _f1_bruteforce(y, p, label):
    tp = fp = fn = 0
    for a, b in zip(y, p):
        tp += a == label and b == label
        fp += a != label and b == label
        fn += a == label and b != label
    return 0.0 if tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)


def test_examples():
    assert accuracy([0, 1, 1], [0, 1, 0]) == pytest.approx(2 / 3)
    # tp 1, fp 1, fn 1 -> precision 0.5, recall 0.5
    assert binary_f1([1, 1, 0, 0], [1, 0, 1, 0]) == pytest.approx(0.5)
    assert binary_f1([0, 0], [0, 0]) == 0.0
    assert accuracy([], []) == 0.0


def test_dispatch():
    y, p = [0, 1, 2, 2], [0, 2, 2, 1]
    assert f1_score(y, p, 3) == macro_f1(y, p, 3)
    assert f1_score([0, 1], [1, 1], 2) == binary_f1([0, 1], [1, 1])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6), st.integers(1, 40))
def test_against_bruteforce(seed, c, n):
    rng = np.random.default_rng(seed)
    y, p = rng.integers(0, c, n), rng.integers(0, c, n)
    expected = np.mean([_f1_bruteforce(y, p, k) for k in range(c)])
    assert macro_f1(y, p, c) == pytest.approx(expected)
    assert binary_f1(y, p) == pytest.approx(_f1_bruteforce(y, p, 1))
    assert 0 <= macro_f1(y, p, c) <= 1
    assert accuracy(y, p) == pytest.approx(sum(a == b for a, b in zip(y, p)) / n)
