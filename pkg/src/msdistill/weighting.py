"""Per-sample weights (w, w_v, w_t) for the three distillation terms.

Four schemes: a population constant (chosen by validation grid search),
importance-based and correctness-based instance weights computed from the
teacher's per-view predictions, and a learnable sigmoid MLP (the meta-net).
All of them return an (n, 3) array ordered (multi, image, text).
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .exceptions import ParameterError, ShapeError

logger = logging.getLogger(__name__)

H_FLOOR = 1e-6


def population_weights(constants, n):
    c = np.asarray(constants, dtype=np.float64)
    if c.shape != (3,):
        raise ShapeError(f"need a (w, w_v, w_t) triple, got shape {c.shape}")
    if np.any(c < 0.0) or np.any(c > 1.0):
        raise ParameterError(f"population weights must lie in [0, 1], got {c.tolist()}")
    return np.tile(c, (n, 1))


def _check_triplet(*dists):
    shapes = {np.shape(d) for d in dists}
    if len(shapes) != 1:
        raise ShapeError(f"teacher predictions disagree in shape: {sorted(shapes)}")


def importance_weights(t_multi, t_image, t_text):
    """w = 1, w_v = tanh(KL(t_multi || t_image)), w_t = tanh(KL(t_multi || t_text)).

    The image-term weight is driven by how far the prediction moves when the
    *image* view is all that is left, i.e. how much the dropped text mattered.
    Inputs are (C,) or (n, C); output matches with a trailing axis of 3.
    """
    _check_triplet(t_multi, t_image, t_text)
    # rounding can leave KL of identical distributions at -1e-17
    text_importance = np.maximum(nn.kl_div(t_multi, t_image), 0.0)
    image_importance = np.maximum(nn.kl_div(t_multi, t_text), 0.0)
    w = np.ones_like(text_importance)
    return np.stack([w, np.tanh(text_importance), np.tanh(image_importance)], axis=-1)


def correctness_weights(t_multi, t_image, t_text, y):
    """Weights proportional to 1 / CE(teacher view prediction, y), summing to 1."""
    _check_triplet(t_multi, t_image, t_text)
    h = np.stack(
        [np.maximum(nn.cross_entropy(p, y), H_FLOOR) for p in (t_multi, t_image, t_text)],
        axis=-1,
    )
    inv = 1.0 / h
    return inv / inv.sum(axis=-1, keepdims=True)


# ------------------------------------------------------------------ meta-net


def init_meta_net(num_classes, rng, hidden=64, activation="tanh"):
    """Meta-net over the concatenated three teacher predictions.

    The output layer starts at zero so every sample initially gets
    (0.5, 0.5, 0.5).
    """
    net = nn.init_dense([3 * num_classes, hidden, 3], rng, activation, zero_last=True)
    net.sigmoid_output = True
    return net


def meta_inputs(t_multi, t_image, t_text):
    return np.concatenate([np.atleast_2d(t_multi), np.atleast_2d(t_image), np.atleast_2d(t_text)], axis=1)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def meta_forward(meta, t_multi, t_image, t_text):
    single = np.ndim(t_multi) == 1
    out = _sigmoid(nn.forward(meta, meta_inputs(t_multi, t_image, t_text)))
    return out[0] if single else out


def meta_vjp(meta, inputs, upstream):
    """Gradient over the meta-net parameters of ``sum(upstream * weights)``.

    ``inputs`` is the (n, 3C) meta input, ``upstream`` the (n, 3) cotangent.
    """
    cache = nn.forward_cache(meta, inputs)
    s = _sigmoid(cache.logits)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != s.shape:
        raise ShapeError(f"upstream {upstream.shape} vs outputs {s.shape}")
    grad, _ = nn.backward_from_logits(meta, cache, upstream * s * (1.0 - s))
    return grad


def meta_jacobian(meta, t_multi, t_image, t_text):
    """(3, n_params) Jacobian of the weight triple for one sample."""
    x = meta_inputs(t_multi, t_image, t_text)[:1]
    rows = []
    for k in range(3):
        e = np.zeros((1, 3))
        e[0, k] = 1.0
        rows.append(meta_vjp(meta, x, e))
    return np.stack(rows)


# --------------------------------------------------------------- grid search


@dataclass
class GridCell:
    weights: tuple
    metric: float
    error: str = ""


@dataclass
class GridResult:
    best: tuple
    table: list

    @property
    def failures(self):
        return [c for c in self.table if c.error]


def grid_cells(grid):
    """Cartesian product of per-coordinate candidates, lexicographic order."""
    if len(grid) != 3 or any(len(g) == 0 for g in grid):
        raise ParameterError("population grid needs three non-empty candidate lists")
    for g in grid:
        for v in g:
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"grid value {v} outside [0, 1]")
    return sorted(itertools.product(*(sorted(set(map(float, g))) for g in grid)))


def grid_search_population(grid, train_and_score, n_jobs=1):
    """Pick the population triple with the best validation metric.

    ``train_and_score(triple) -> float`` trains one student with that triple
    (the caller fixes the seed) and returns validation accuracy. A cell that
    raises is recorded with its error and skipped. Ties go to the
    lexicographically smallest triple.
    """
    cells = grid_cells(grid)

    def run(cell):
        try:
            return GridCell(cell, float(train_and_score(cell)))
        except Exception as exc:  # noqa: BLE001 - reported per cell
            logger.warning("grid cell %s failed: %s", cell, exc)
            return GridCell(cell, float("nan"), f"{type(exc).__name__}: {exc}")

    if n_jobs == 1:
        table = [run(c) for c in cells]
    else:
        from joblib import Parallel, delayed

        table = Parallel(n_jobs=n_jobs)(delayed(run)(c) for c in cells)

    best, best_metric = None, -np.inf
    for cell in table:
        if not cell.error and np.isfinite(cell.metric) and cell.metric > best_metric:
            best, best_metric = cell.weights, cell.metric
    return GridResult(best, table)
