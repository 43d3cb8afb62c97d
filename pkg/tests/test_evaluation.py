import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glassbox.evaluation import auc, compare_models


def brute(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def test_known_values():
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]).value == 0.75
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]).value == 1.0
    r = auc([0.5] * 6, [0, 1, 0, 1, 1, 0])
    assert r.value == 0.5 and r.tie_pairs == 9


def test_single_class_rejected():
    with pytest.raises(ValueError, match="single class"):
        auc([0.1, 0.2], [1, 1])


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.booleans()), min_size=2, max_size=40))
def test_matches_pairwise_count(rows):
    labels = [int(y) for _, y in rows]
    if len(set(labels)) < 2:
        return
    scores = [s / 4 for s, _ in rows]
    assert abs(auc(scores, labels).value - brute(scores, labels)) <= 1e-15


def test_compare_self_delta_zero():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 50)
    s = rng.uniform(size=50)
    out = compare_models([("a", s), ("b", s)], y)
    assert out["deltas"] == [{"a": "a", "b": "b", "delta": 0.0}]


def test_random_scores_near_half():
    rng = np.random.default_rng(1)
    y = rng.integers(0, 2, 1000)
    assert abs(auc(rng.uniform(size=1000), y).value - 0.5) <= 0.05
