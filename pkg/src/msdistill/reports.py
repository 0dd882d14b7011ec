"""Evaluation and diagnostic tables: metrics, teacher-student KL gaps, output
densities, meta-net heatmaps, per-view teacher confidence, size sweeps.

Every table is a list of dicts; ``write_csv`` serialises them
deterministically ('.' decimals, LF endings, header row).
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from . import nn
from .data import VIEWS, view_inputs
from .exceptions import ParameterError, UnsupportedTaskError
from .metrics import classification_metrics
from .weighting import meta_forward

METRIC_COLUMNS = ("method", "seed", "split", "accuracy", "auc", "macro_f1", "micro_f1")
GAP_COLUMNS = ("method", "view", "mean_kl")
DENSITY_COLUMNS = ("model", "view", "bin_lo", "bin_hi", "count")
HEATMAP_COLUMNS = ("y", "z", "w", "w_v", "w_t")
SCATTER_COLUMNS = ("rank", "id", "label", "dominance", "p_multi", "p_image", "p_text")


def evaluate(net, text, image, labels):
    """Metrics of ``net`` on the multimodal view of a split."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ParameterError("cannot evaluate on an empty split")
    probs = nn.softmax_temp(nn.forward(net, view_inputs(text, image, VIEWS[0])), 1.0)
    return classification_metrics(probs, labels)


def view_gaps(teacher, model, text, image):
    """Mean KL(teacher || model) at temperature 1 for each view."""
    out = {}
    for view in VIEWS:
        X = view_inputs(text, image, view)
        t = nn.softmax_temp(nn.forward(teacher, X), 1.0)
        s = nn.softmax_temp(nn.forward(model, X), 1.0)
        out[view.value] = float(np.mean(nn.kl_div(t, s)))
    return out


def gap_report(teacher, models, text, image):
    """``models`` maps a method name to one network or a list of networks
    (seeds); gaps are averaged over the list."""
    rows = []
    for name, nets in models.items():
        nets = nets if isinstance(nets, (list, tuple)) else [nets]
        per = [view_gaps(teacher, net, text, image) for net in nets]
        for view in VIEWS:
            rows.append({
                "method": name, "view": view.value,
                "mean_kl": float(np.mean([g[view.value] for g in per])),
            })
    return rows


def _require_binary(num_classes, what):
    if num_classes != 2:
        raise UnsupportedTaskError(f"{what} report needs a binary task (C = 2), got C = {num_classes}")


def density_report(models, text, image, mask=None, bins=50):
    """Histogram of P(class 1) per model and view over the selected samples."""
    text = np.asarray(text)
    image = np.asarray(image)
    if mask is not None:
        text, image = text[mask], image[mask]
    edges = np.linspace(0.0, 1.0, bins + 1)
    rows = []
    for name, net in models.items():
        _require_binary(net.layer_dims[-1], "density")
        for view in VIEWS:
            p = nn.softmax_temp(nn.forward(net, view_inputs(text, image, view)), 1.0)[:, 1]
            counts, _ = np.histogram(p, bins=edges)
            for k in range(bins):
                rows.append({
                    "model": name, "view": view.value,
                    "bin_lo": float(edges[k]), "bin_hi": float(edges[k + 1]), "count": int(counts[k]),
                })
    return rows


def heatmap_report(meta, resolution=101):
    """Meta-net weights on the slice where the multimodal prediction is
    certain of class 1: inputs ([0, 1], [1 - y, y], [1 - z, z])."""
    _require_binary(meta.layer_dims[0] // 3, "heatmap")
    grid = np.linspace(0.0, 1.0, resolution)
    yy, zz = np.meshgrid(grid, grid, indexing="ij")
    y, z = yy.ravel(), zz.ravel()
    n = len(y)
    t_multi = np.tile([0.0, 1.0], (n, 1))
    t_image = np.stack([1.0 - y, y], axis=1)
    t_text = np.stack([1.0 - z, z], axis=1)
    w = meta_forward(meta, t_multi, t_image, t_text)
    return [
        {"y": float(y[i]), "z": float(z[i]), "w": float(w[i, 0]), "w_v": float(w[i, 1]), "w_t": float(w[i, 2])}
        for i in range(n)
    ]


def dominance_scatter(teacher, text, image, labels, dominance=None, ids=None):
    """Teacher confidence per view, rows ordered by the multimodal confidence.

    Each row reports, for all three views, the probability the teacher puts on
    the class its multimodal prediction picks.
    """
    probs = [nn.softmax_temp(nn.forward(teacher, view_inputs(text, image, v)), 1.0) for v in VIEWS]
    n = probs[0].shape[0]
    cls = np.argmax(probs[0], axis=1)
    p = [pr[np.arange(n), cls] for pr in probs]
    order = np.argsort(p[0], kind="mergesort")
    ids = np.arange(n) if ids is None else np.asarray(ids)
    dominance = np.full(n, np.nan) if dominance is None else np.asarray(dominance)
    labels = np.asarray(labels)
    return [
        {
            "rank": r, "id": int(ids[i]), "label": int(labels[i]), "dominance": float(dominance[i]),
            "p_multi": float(p[0][i]), "p_image": float(p[1][i]), "p_text": float(p[2][i]),
        }
        for r, i in enumerate(order)
    ]


def size_sweep(depths, train_and_score, methods=("small", "kd", "msd-meta"), seeds=(1,)):
    """One row per (depth, method): mean and std of the test metric over seeds.

    ``train_and_score(depth, method, seed) -> float``.
    """
    rows = []
    for depth in depths:
        if int(depth) < 0:
            raise ParameterError(f"student depth must be >= 0, got {depth}")
        for method in methods:
            scores = [float(train_and_score(int(depth), method, seed)) for seed in seeds]
            rows.append({
                "layers": int(depth), "method": method,
                "accuracy_mean": float(np.mean(scores)), "accuracy_std": float(np.std(scores)),
            })
    return rows


def metric_row(method, seed, split, m):
    return {
        "method": method, "seed": seed, "split": split, "accuracy": m.accuracy,
        "auc": m.auc, "macro_f1": m.macro_f1, "micro_f1": m.micro_f1,
    }


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_csv(path, rows, columns):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])
