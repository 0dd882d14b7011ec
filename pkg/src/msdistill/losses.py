"""Student objectives: hard-label CE, conventional KD and the three-view
modality-specific (MSD) distillation loss.

The student objective is ``lam * CE + (1 - lam) * distill`` where CE is on
the multimodal view at temperature 1 and ``distill`` is

    tau**2 / n * sum_i [ w_i  KL(t(x_i),   s(x_i))
                       + wv_i KL(t(x_i^v), s(x_i^v))
                       + wt_i KL(t(x_i^t), s(x_i^t)) ]

with ``x^v`` / ``x^t`` the image-only / text-only views. Conventional KD is
the multimodal term alone with unit weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .data import VIEWS, ModalityView, view_inputs
from .exceptions import ConfigError, ParameterError, ShapeError

MODES = ("none", "kd", "msd")


@dataclass(frozen=True)
class DistillConfig:
    tau: float = 4.0
    lam: float = 0.5
    mode: str = "msd"

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError("distill.tau must be > 0")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("distill.lam must lie in [0, 1]")
        if self.mode not in MODES:
            raise ConfigError(f"distill.mode must be one of {MODES}")


def soft_targets(teacher, X, tau):
    """Teacher soft labels ``softmax(f_T(x) / tau)``."""
    return nn.softmax_temp(nn.forward(teacher, X), tau)


@dataclass
class TeacherTargets:
    """Teacher predictions for every view, cached once per dataset.

    ``soft[v]`` is at the distillation temperature, ``plain[v]`` at 1.
    Arrays are indexed by view position in ``VIEWS``.
    """

    soft: np.ndarray   # (3, N, C)
    plain: np.ndarray  # (3, N, C)
    tau: float

    def take(self, idx):
        return TeacherTargets(self.soft[:, idx], self.plain[:, idx], self.tau)


def teacher_targets(teacher, text, image, tau):
    soft, plain = [], []
    for view in VIEWS:
        logits = nn.forward(teacher, view_inputs(text, image, view))
        soft.append(nn.softmax_temp(logits, tau))
        plain.append(nn.softmax_temp(logits, 1.0))
    return TeacherTargets(np.stack(soft), np.stack(plain), float(tau))


@dataclass
class ViewBatch:
    """A mini-batch with all three views assembled."""

    inputs: list          # three (n, D) arrays in VIEWS order
    labels: np.ndarray
    targets: TeacherTargets = None

    def __len__(self):
        return len(self.labels)

    @classmethod
    def from_arrays(cls, text, image, labels, targets=None):
        return cls([view_inputs(text, image, v) for v in VIEWS], np.asarray(labels), targets)

    def take(self, idx):
        return ViewBatch(
            [X[idx] for X in self.inputs], self.labels[idx],
            None if self.targets is None else self.targets.take(idx),
        )


def kd_distill_loss(teacher, student, X, tau):
    """``tau**2 * mean_i KL(t(x_i; tau) || s(x_i; tau))`` on one view."""
    X = np.atleast_2d(X)
    if X.shape[0] == 0:
        raise ParameterError("empty batch")
    t = soft_targets(teacher, X, tau)
    s = nn.softmax_temp(nn.forward(student, X), tau)
    return float(tau ** 2 * np.mean(nn.kl_div(t, s)))


def msd_distill_loss(teacher, student, text, image, weights, tau):
    """Weighted three-view distillation loss; ``weights`` is (n, 3)."""
    text = np.atleast_2d(text)
    image = np.atleast_2d(image)
    n = text.shape[0]
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (n, 3):
        raise ShapeError(f"need one weight triple per sample: got {weights.shape} for {n} samples")
    if n == 0:
        raise ParameterError("empty batch")
    total = 0.0
    for k, view in enumerate(VIEWS):
        X = view_inputs(text, image, view)
        t = soft_targets(teacher, X, tau)
        s = nn.softmax_temp(nn.forward(student, X), tau)
        total += np.sum(weights[:, k] * nn.kl_div(t, s))
    return float(tau ** 2 * total / n)


def student_loss(ce, distill, lam):
    if not 0.0 <= lam <= 1.0:
        raise ParameterError(f"lambda must lie in [0, 1], got {lam}")
    return lam * ce + (1.0 - lam) * distill


@dataclass
class ViewTerm:
    """Per-view pieces kept for the meta-gradient."""

    cache: nn.ForwardCache
    kl_dlogits: np.ndarray  # d(tau^2 KL_i)/d logits, unweighted, unaveraged
    kl_values: np.ndarray   # tau^2 KL_i


@dataclass
class Objective:
    loss: float
    ce: float
    distill: float
    grad: np.ndarray
    terms: list  # ViewTerm per view used; empty for mode "none"


def student_objective(student, batch, cfg, weights=None, keep_terms=False):
    """Value and exact gradient of the student objective on ``batch``.

    ``cfg.mode`` selects the objective: ``"none"`` is plain CE (the teacher is
    not consulted), ``"kd"`` the multimodal distillation term, ``"msd"`` all
    three views gated by ``weights`` (n, 3).
    """
    n = len(batch)
    if n == 0:
        raise ParameterError("empty batch")
    lam, tau = cfg.lam, cfg.tau
    if cfg.mode == "none":
        views, lam = (0,), 1.0
    elif cfg.mode == "kd":
        views, weights = (0,), np.ones((n, 1))
    else:
        views = (0, 1, 2)
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (n, 3):
            raise ShapeError(f"need (n, 3) weights, got {weights.shape}")

    grad = np.zeros(student.n_params)
    ce_value = 0.0
    distill_value = 0.0
    terms = []
    for k in views:
        cache = nn.forward_cache(student, batch.inputs[k])
        dlogits = np.zeros_like(cache.logits)
        if k == 0:
            ce_vals, ce_grad = nn.CrossEntropyLoss(batch.labels)(cache.logits)
            ce_value = float(np.mean(ce_vals))
            dlogits = lam * ce_grad
        if cfg.mode != "none":
            kl_vals, kl_grad = nn.KLDistillLoss(batch.targets.soft[k], tau)(cache.logits)
            w = weights[:, k]
            distill_value += float(np.sum(w * kl_vals)) / n
            dlogits = dlogits + (1.0 - lam) * (w[:, None] * kl_grad)
            if keep_terms:
                terms.append(ViewTerm(cache, kl_grad, kl_vals))
        g, _ = nn.backward_from_logits(student, cache, dlogits / n)
        grad = grad + g
    nn.check_finite(grad, "student gradient")
    loss = student_loss(ce_value, distill_value, lam)
    return Objective(loss, ce_value, distill_value, grad, terms)
