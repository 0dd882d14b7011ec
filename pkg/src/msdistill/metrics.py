"""Classification metrics: accuracy, rank-based AUC, macro/micro F1."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    auc: float | None
    macro_f1: float
    micro_f1: float


def predict_labels(probs):
    """Argmax; ``np.argmax`` already returns the lowest index on ties."""
    return np.argmax(np.asarray(probs), axis=1)


def accuracy(y_true, y_pred):
    y_true = np.asarray(y_true)
    if y_true.size == 0:
        raise ValueError("empty split")
    return float(np.mean(y_true == np.asarray(y_pred)))


def auc_mann_whitney(scores, labels):
    """P(score of a random positive > score of a random negative), ties count 1/2.

    Computed from midranks, so it is exact and O(n log n).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    ranks = np.empty(len(s))
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        ranks[i:j + 1] = 0.5 * (i + j) + 1.0
        i = j + 1
    r = np.empty(len(s))
    r[order] = ranks
    u = r[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _f1_counts(y_true, y_pred, num_classes):
    tp = np.zeros(num_classes)
    fp = np.zeros(num_classes)
    fn = np.zeros(num_classes)
    for c in range(num_classes):
        tp[c] = np.sum((y_pred == c) & (y_true == c))
        fp[c] = np.sum((y_pred == c) & (y_true != c))
        fn[c] = np.sum((y_pred != c) & (y_true == c))
    return tp, fp, fn


def macro_f1(y_true, y_pred, num_classes):
    """Unweighted mean per-class F1; a class never predicted nor present scores 0."""
    tp, fp, fn = _f1_counts(np.asarray(y_true), np.asarray(y_pred), num_classes)
    denom = 2 * tp + fp + fn
    f1 = np.divide(2 * tp, denom, out=np.zeros(num_classes), where=denom > 0)
    return float(f1.mean())


def micro_f1(y_true, y_pred, num_classes):
    tp, fp, fn = _f1_counts(np.asarray(y_true), np.asarray(y_pred), num_classes)
    denom = 2 * tp.sum() + fp.sum() + fn.sum()
    return float(2 * tp.sum() / denom) if denom > 0 else 0.0


def classification_metrics(probs, y_true):
    probs = np.asarray(probs, dtype=np.float64)
    y_true = np.asarray(y_true)
    if len(y_true) == 0:
        raise ValueError("empty split")
    C = probs.shape[1]
    y_pred = predict_labels(probs)
    auc = auc_mann_whitney(probs[:, 1], y_true) if C == 2 else None
    return Metrics(
        accuracy(y_true, y_pred), auc,
        macro_f1(y_true, y_pred, C), micro_f1(y_true, y_pred, C),
    )
