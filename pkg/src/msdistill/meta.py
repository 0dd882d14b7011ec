"""Online bilevel learning of the distillation weights.

One iteration:

1. virtual student step  w_hat = w - alpha * grad_w L_student(w, theta)
2. meta step             theta <- theta - beta * grad_theta L_meta(w_hat(theta))
3. real student step     w <- w - alpha * grad_w L_student(w, theta_new)

``L_meta`` is mean hard-label CE of the virtual student on a meta batch.
Because the weights enter ``L_student`` linearly, the meta-gradient needs no
second-order autodiff:

    grad_theta L_meta = -alpha (1 - lam) / n
                        * sum_{i, view} (g_{i,view} . G) * grad_theta weight_{i,view}

with ``G = grad L_meta(w_hat)`` and ``g_{i,view}`` the gradient of sample i's
``tau^2 KL`` term on that view. The dot products ``g . G`` are contracted per
sample straight from the backprop deltas.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import nn
from .exceptions import ConfigError, DivergenceError, NumericalError
from .losses import DistillConfig, student_objective
from .tracking import BatchSampler, BestTracker, Trace
from .weighting import meta_forward, meta_inputs, meta_vjp


@dataclass(frozen=True)
class MetaOptConfig:
    alpha: float = 0.05
    beta: float = 1e-3
    batch_size: int = 32
    meta_batch_size: int = 32
    iterations: int = 3000

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("meta.alpha and meta.beta must be >= 0")
        if self.batch_size <= 0 or self.meta_batch_size <= 0:
            raise ConfigError("meta batch sizes must be > 0")
        if self.iterations < 0:
            raise ConfigError("meta.iterations must be >= 0")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"unknown key 'meta.{key}'")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class MetaState:
    student: nn.DenseNet
    meta: nn.DenseNet
    t: int = 0


@dataclass
class VirtualResult:
    student_hat: nn.DenseNet
    objective: object     # losses.Objective with per-view terms kept
    weights: np.ndarray   # (n, 3) at the current theta
    meta_x: np.ndarray    # (n, 3C) meta-net inputs


def batch_meta_inputs(batch):
    """Meta-net inputs: the teacher's temperature-1 predictions on all views."""
    p = batch.targets.plain
    return meta_inputs(p[0], p[1], p[2])


def virtual_step(state, batch, distill_cfg, alpha):
    meta_x = batch_meta_inputs(batch)
    weights = _weights(state.meta, meta_x)
    obj = student_objective(state.student, batch, distill_cfg, weights, keep_terms=True)
    w_hat = state.student.with_flat(state.student.get_flat() - alpha * obj.grad)
    return VirtualResult(w_hat, obj, weights, meta_x)


def _weights(meta, meta_x):
    C = meta_x.shape[1] // 3
    return meta_forward(meta, meta_x[:, :C], meta_x[:, C:2 * C], meta_x[:, 2 * C:])


def meta_loss_and_grad(student, meta_X, meta_y):
    """Mean CE of ``student`` on the meta batch and its parameter gradient G."""
    res = nn.backward(student, meta_X, nn.CrossEntropyLoss(meta_y))
    return res.loss, res.grad


def compute_meta_gradient(state, virtual, meta_X, meta_y, distill_cfg, alpha):
    """Exact gradient of the meta loss over the meta-net parameters.

    Returns ``(grad, meta_loss)``.
    """
    meta_loss, G = meta_loss_and_grad(virtual.student_hat, meta_X, meta_y)
    terms = virtual.objective.terms
    n = virtual.weights.shape[0]
    if len(terms) != 3:
        raise RuntimeError("virtual step cache lacks per-view terms (mode must be 'msd')")
    upstream = np.zeros((n, 3))
    coef = -alpha * (1.0 - distill_cfg.lam) / n
    for k, term in enumerate(terms):
        _, deltas = nn.backward_from_logits(state.student, term.cache, term.kl_dlogits)
        upstream[:, k] = coef * nn.per_sample_dot(state.student, term.cache, deltas, G)
    grad = meta_vjp(state.meta, virtual.meta_x, upstream)
    nn.check_finite(grad, "meta-gradient")
    return grad, meta_loss


def meta_update(state, grad, beta):
    return MetaState(state.student, nn.sgd_step(state.meta, grad, beta), state.t)


def student_update(state, batch, distill_cfg, alpha):
    """Real student step on the same batch with weights from the updated meta-net.

    Returns ``(new_state, objective)``; the objective is evaluated at the
    pre-update student.
    """
    weights = _weights(state.meta, batch_meta_inputs(batch))
    obj = student_objective(state.student, batch, distill_cfg, weights)
    student = nn.sgd_step(state.student, obj.grad, alpha)
    return MetaState(student, state.meta, state.t + 1), obj


def meta_iteration(state, batch, meta_X, meta_y, distill_cfg, cfg):
    """One full iteration; returns ``(state, objective, meta_loss, meta_grad)``."""
    vr = virtual_step(state, batch, distill_cfg, cfg.alpha)
    grad, meta_loss = compute_meta_gradient(state, vr, meta_X, meta_y, distill_cfg, cfg.alpha)
    state = meta_update(state, grad, cfg.beta)
    state, obj = student_update(state, batch, distill_cfg, cfg.alpha)
    return state, obj, meta_loss, grad


@dataclass
class MetaRunResult:
    student: nn.DenseNet
    meta: nn.DenseNet
    trace: Trace
    best: BestTracker


def run_meta_training(cfg, distill_cfg, train, meta_X, meta_y, student, meta, rngs,
                      evaluate=None, eval_interval=0):
    """Run ``cfg.iterations`` online meta-learning iterations.

    ``train`` is a ``ViewBatch`` over the whole training split (teacher
    targets attached); ``meta_X``/``meta_y`` the multimodal meta split.
    ``rngs`` comes from ``tracking.run_rngs``. ``evaluate(student)`` returns
    ``(val_acc, test_acc)`` and is called at iteration 0 and every
    ``eval_interval`` iterations.
    """
    if len(meta_y) == 0:
        raise ValueError("meta split is empty")
    if distill_cfg.mode != "msd":
        distill_cfg = DistillConfig(distill_cfg.tau, distill_cfg.lam, "msd")
    train_sampler = BatchSampler(len(train), cfg.batch_size, rngs["train"])
    meta_sampler = BatchSampler(len(meta_y), cfg.meta_batch_size, rngs["meta"])
    state = MetaState(student, meta)
    trace = Trace()
    best = BestTracker()

    def maybe_eval(t):
        if evaluate is not None and eval_interval > 0 and (t % eval_interval == 0 or t == cfg.iterations):
            val_acc, test_acc = evaluate(state.student)
            trace.log_eval(t, test_acc, val_acc)
            best.update(t, val_acc, state.student)

    maybe_eval(0)
    for t in range(1, cfg.iterations + 1):
        batch = train.take(train_sampler.next())
        midx = meta_sampler.next()
        try:
            state, obj, meta_loss, grad = meta_iteration(
                state, batch, meta_X[midx], meta_y[midx], distill_cfg, cfg
            )
        except NumericalError as exc:
            raise DivergenceError(f"iteration {t}: {exc}", iteration=t) from exc
        trace.log(t, obj.loss, meta_loss, float(np.linalg.norm(grad)))
        maybe_eval(t)
    return MetaRunResult(state.student, state.meta, trace, best)
