"""Mini-batch sampling and per-iteration training traces."""

from __future__ import annotations

import csv
import io
import math

import numpy as np

TRACE_COLUMNS = ("iteration", "student_loss", "meta_loss", "meta_grad_norm", "test_acc")


class BatchSampler:
    """Shuffled mini-batches; a fresh permutation every epoch.

    Batches never straddle an epoch boundary, so every batch has exactly
    ``batch_size`` distinct indices (``batch_size`` is capped at ``n``).
    """

    def __init__(self, n, batch_size, rng):
        if n <= 0:
            raise ValueError("cannot sample from an empty split")
        self.n = n
        self.batch_size = min(int(batch_size), n)
        self.rng = rng
        self._perm = np.empty(0, dtype=np.int64)
        self._pos = 0

    def next(self):
        if self._pos + self.batch_size > len(self._perm):
            self._perm = self.rng.permutation(self.n)
            self._pos = 0
        idx = self._perm[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return idx


def run_rngs(seed):
    """Independent generators for one run: train batches, meta batches,
    student init, meta-net init."""
    return {
        name: np.random.default_rng([int(seed), k])
        for k, name in enumerate(("train", "meta", "student", "metanet"))
    }


class Trace:
    """Per-iteration record; test/val accuracy only at evaluation points."""

    def __init__(self):
        self.rows = []

    def log(self, iteration, student_loss=None, meta_loss=None, meta_grad_norm=None):
        self.rows.append({
            "iteration": iteration, "student_loss": student_loss, "meta_loss": meta_loss,
            "meta_grad_norm": meta_grad_norm, "test_acc": None, "val_acc": None,
        })

    def log_eval(self, iteration, test_acc, val_acc):
        if not self.rows or self.rows[-1]["iteration"] != iteration:
            self.log(iteration)
        self.rows[-1]["test_acc"] = test_acc
        self.rows[-1]["val_acc"] = val_acc

    def curve(self, key="test_acc"):
        """(iterations, values) at evaluation points."""
        pts = [(r["iteration"], r[key]) for r in self.rows if r[key] is not None]
        if not pts:
            return np.zeros(0, dtype=int), np.zeros(0)
        it, val = zip(*pts)
        return np.asarray(it), np.asarray(val, dtype=float)

    def losses(self):
        return np.asarray([r["student_loss"] for r in self.rows if r["student_loss"] is not None])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in TRACE_COLUMNS])
        return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


class BestTracker:
    """Keeps the checkpoint with the highest validation accuracy (earliest wins ties)."""

    def __init__(self):
        self.best_val = -np.inf
        self.best_iteration = None
        self.best_model = None

    def update(self, iteration, val_acc, model):
        if val_acc > self.best_val:
            self.best_val = val_acc
            self.best_iteration = iteration
            self.best_model = model.copy()
