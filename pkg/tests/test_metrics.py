import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tribegraph.exceptions import OneClassOnly
from tribegraph.metrics import classification_report, compute_auc, compute_f1, confusion


def auc_pairs(s, y):
    pos, neg = s[y == 1], s[y == 0]
    total = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return total / (len(pos) * len(neg))


def test_f1_examples():
    y = np.array([1, 0, 1, 0])
    assert compute_f1(y, y) == 1.0
    assert compute_f1(np.zeros(4, int), y) == 0.0


def test_f1_confusion_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        y = rng.integers(0, 2, 50)
        p = rng.integers(0, 2, 50)
        tp = sum(1 for a, b in zip(p, y) if a == b == 1)
        fp = sum(1 for a, b in zip(p, y) if a == 1 and b == 0)
        fn = sum(1 for a, b in zip(p, y) if a == 0 and b == 1)
        assert confusion(p, y)[:3] == (tp, fp, fn)
        expect = 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)
        assert compute_f1(p, y) == pytest.approx(expect, abs=1e-15)


def test_auc_examples():
    y = np.array([0, 0, 1, 1])
    assert compute_auc([0.1, 0.2, 0.8, 0.9], y) == 1.0
    assert compute_auc([0.5] * 4, y) == 0.5
    with pytest.raises(OneClassOnly):
        compute_auc([0.1, 0.2], [1, 1])


def test_auc_pairwise_oracle_with_ties():
    rng = np.random.default_rng(1)
    for _ in range(30):
        y = rng.integers(0, 2, 60)
        if y.min() == y.max():
            continue
        s = rng.integers(0, 8, 60).astype(float)  # many ties
        assert abs(compute_auc(s, y) - auc_pairs(s, y)) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-500, 500), min_size=6, max_size=30), st.integers(0, 2**31 - 1))
def test_auc_monotone_invariance(scores, seed):
    # a 0.01 grid keeps exp strictly monotone in floating point
    s = np.array(scores) / 100.0
    y = np.random.default_rng(seed).integers(0, 2, len(s))
    if y.min() == y.max():
        y[0], y[1] = 0, 1
    base = compute_auc(s, y)
    assert compute_auc(np.exp(s), y) == pytest.approx(base, abs=1e-12)
    assert compute_auc(3 * s + 2, y) == pytest.approx(base, abs=1e-12)


def test_report_threshold_and_one_class():
    rep = classification_report([0.5, 0.49], [1, 0])
    assert rep["precision"] == 1.0 and rep["recall"] == 1.0
    assert np.isnan(classification_report([0.3, 0.7], [1, 1])["auc"])
