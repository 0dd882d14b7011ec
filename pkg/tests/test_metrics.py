import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import f1_score, roc_auc_score

from msdistill.metrics import (
    accuracy,
    auc_mann_whitney,
    classification_metrics,
    macro_f1,
    micro_f1,
    predict_labels,
)


def _pair_count_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p, q in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


def test_auc_worked_example():
    assert auc_mann_whitney([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_auc_perfect_separation():
    assert auc_mann_whitney([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0


def test_auc_single_class_is_undefined():
    assert np.isnan(auc_mann_whitney([0.1, 0.2], [1, 1]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=40))
def test_auc_matches_pair_counting_with_ties(rows):
    scores = [r[0] / 5 for r in rows]
    labels = [r[1] for r in rows]
    if len(set(labels)) < 2:
        return
    auc = auc_mann_whitney(scores, labels)
    assert auc == pytest.approx(_pair_count_auc(scores, labels), abs=1e-12)
    assert auc == pytest.approx(roc_auc_score(labels, scores), abs=1e-12)


def test_argmax_ties_go_to_lowest_index():
    np.testing.assert_array_equal(predict_labels([[0.4, 0.4, 0.2], [0.3, 0.35, 0.35]]), [0, 1])


def test_all_correct():
    y = np.array([0, 1, 2, 1])
    m = classification_metrics(np.eye(3)[y], y)
    assert m.accuracy == m.macro_f1 == m.micro_f1 == 1.0 and m.auc is None


def test_binary_metrics_include_auc():
    probs = np.array([[0.9, 0.1], [0.6, 0.4], [0.65, 0.35], [0.2, 0.8]])
    assert classification_metrics(probs, [0, 0, 1, 1]).auc == 0.75


def test_micro_f1_equals_accuracy_on_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(100):
        C = int(rng.integers(2, 7))
        n = int(rng.integers(1, 60))
        y, p = rng.integers(0, C, n), rng.integers(0, C, n)
        assert micro_f1(y, p, C) == pytest.approx(accuracy(y, p), abs=1e-15)


def test_macro_f1_matches_sklearn():
    rng = np.random.default_rng(1)
    for _ in range(50):
        C = int(rng.integers(2, 6))
        y, p = rng.integers(0, C, 30), rng.integers(0, C, 30)
        ref = f1_score(y, p, labels=list(range(C)), average="macro", zero_division=0)
        assert macro_f1(y, p, C) == pytest.approx(ref, abs=1e-12)


def test_macro_f1_absent_class_scores_zero():
    assert macro_f1([0, 1], [0, 1], 3) == pytest.approx(2 / 3)


def test_empty_split_rejected():
    with pytest.raises(ValueError):
        classification_metrics(np.zeros((0, 2)), [])
