"""Teacher and student training pipelines.

Students of every method share the same seeded batch sampler. ``msd-meta``
runs the bilevel loop from ``meta`` with plain SGD (step ``meta.alpha``).
The other methods use ``optimizer``: AdamW with a linear warmup/decay
schedule by default, or ``"sgd"`` with step ``meta.alpha``. Under SGD the
methods differ only in their objective, and ``msd-meta`` with ``beta = 0``
retraces ``msd-population`` at (0.5, 0.5, 0.5) exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .data import VIEWS, view_inputs
from .exceptions import DivergenceError, NumericalError, ParameterError
from .losses import DistillConfig, ViewBatch, student_objective, teacher_targets
from .meta import MetaOptConfig, run_meta_training
from .tracking import BatchSampler, BestTracker, Trace, run_rngs
from .weighting import (
    correctness_weights,
    importance_weights,
    init_meta_net,
    population_weights,
)

logger = logging.getLogger(__name__)

OPTIMIZERS = ("adamw", "sgd")
METHODS = ("small", "kd", "msd-population", "msd-importance", "msd-correctness", "msd-meta")


def input_dim(text_dim, image_dim):
    return text_dim + image_dim + 2


def train_teacher(text, image, labels, num_classes, hidden=(128, 128), activation="relu",
                  epochs=30, batch_size=32, lr=1e-3, weight_decay=0.01, view_dropout=True, seed=0):
    """Hard-label CE training with AdamW and a linear warmup/decay schedule.

    With ``view_dropout`` every sample is shown, per epoch, as the multimodal,
    image-only or text-only view with probability 1/3 each, which gives the
    teacher meaningful single-modality predictions.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if n == 0:
        raise ParameterError("empty training split")
    rng = np.random.default_rng([int(seed), 17])
    dims = [input_dim(text.shape[1], image.shape[1]), *hidden, num_classes]
    net = nn.init_dense(dims, rng, activation)
    views = [view_inputs(text, image, v) for v in VIEWS]
    steps_per_epoch = -(-n // batch_size)
    total = epochs * steps_per_epoch
    opt = nn.AdamW(lr=lr, weight_decay=weight_decay)
    step = 0
    for epoch in range(epochs):
        choice = rng.integers(0, 3, size=n) if view_dropout else np.zeros(n, dtype=int)
        X = np.where(choice[:, None] == 0, views[0], np.where(choice[:, None] == 1, views[1], views[2]))
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            try:
                res = nn.backward(net, X[idx], nn.CrossEntropyLoss(labels[idx]))
                net = opt.step(net, res.grad, nn.linear_warmup_decay(step, total))
            except NumericalError as exc:
                raise DivergenceError(f"teacher step {step + 1}: {exc}", iteration=step + 1) from exc
            step += 1
        logger.debug("teacher epoch %d loss %.4f", epoch, res.loss)
    return net


@dataclass
class StudentRun:
    method: str
    student: nn.DenseNet          # final iterate
    best: nn.DenseNet             # best validation-accuracy checkpoint
    best_iteration: int
    trace: Trace
    meta: nn.DenseNet = None      # msd-meta only


def _distill_config(method, tau, lam):
    mode = {"small": "none", "kd": "kd"}.get(method, "msd")
    return DistillConfig(tau, lam, mode)


def instance_weights(method, targets, labels, population=(1.0, 0.5, 0.5)):
    """(N, 3) weights for the fixed schemes, from cached teacher outputs."""
    n = len(labels)
    if method == "msd-population":
        return population_weights(population, n)
    if method == "msd-importance":
        s = targets.soft
        return importance_weights(s[0], s[1], s[2])
    if method == "msd-correctness":
        p = targets.plain
        return correctness_weights(p[0], p[1], p[2], labels)
    raise ParameterError(f"no fixed weighting for method {method!r}")


def train_student(method, train, teacher=None, *, hidden=(16,), activation="relu",
                  tau=4.0, lam=0.5, meta_cfg=MetaOptConfig(), population=(1.0, 0.5, 0.5),
                  meta_hidden=64, seed=1, val=None, test=None, eval_interval=50,
                  optimizer="adamw", lr=1e-3, weight_decay=0.01):
    """Train one student.

    ``train``, ``val`` and ``test`` are ``(text, image, labels)`` triples.
    ``val`` doubles as the meta set for ``msd-meta`` and as the checkpoint
    selection set; ``test`` only feeds the learning-curve trace.
    """
    if method not in METHODS:
        raise ParameterError(f"unknown method {method!r}; choose from {METHODS}")
    if optimizer not in OPTIMIZERS:
        raise ParameterError(f"optimizer must be one of {OPTIMIZERS}, got {optimizer!r}")
    if method != "small" and teacher is None:
        raise ParameterError(f"method {method!r} needs a teacher")
    text, image, labels = train
    labels = np.asarray(labels)
    num_classes = teacher.layer_dims[-1] if teacher is not None else int(labels.max()) + 1
    cfg = _distill_config(method, tau, lam)
    rngs = run_rngs(seed)
    dims = [input_dim(text.shape[1], image.shape[1]), *hidden, num_classes]
    student = nn.init_dense(dims, rngs["student"], activation)

    targets = teacher_targets(teacher, text, image, tau) if teacher is not None else None
    batches = ViewBatch.from_arrays(text, image, labels, targets)

    eval_sets = {}
    for name, split in (("val", val), ("test", test)):
        if split is not None:
            eval_sets[name] = (view_inputs(split[0], split[1], VIEWS[0]), np.asarray(split[2]))

    def evaluate(net):
        out = []
        for name in ("val", "test"):
            if name in eval_sets:
                X, y = eval_sets[name]
                out.append(float(np.mean(np.argmax(nn.forward(net, X), axis=1) == y)))
            else:
                out.append(float("nan"))
        return tuple(out)

    interval = eval_interval if eval_sets else 0

    if method == "msd-meta":
        if val is None or len(val[2]) == 0:
            raise ParameterError("msd-meta needs a non-empty meta (validation) split")
        meta = init_meta_net(num_classes, rngs["metanet"], meta_hidden)
        meta_X, meta_y = eval_sets["val"]
        res = run_meta_training(meta_cfg, cfg, batches, meta_X, meta_y, student, meta, rngs,
                                evaluate=evaluate, eval_interval=interval)
        best = res.best.best_model or res.student
        return StudentRun(method, res.student, best, _best_it(res.best, meta_cfg),
                          res.trace, res.meta)

    weights_all = None
    if cfg.mode == "msd":
        weights_all = instance_weights(method, targets, labels, population)

    if optimizer == "adamw":
        opt = nn.AdamW(lr=lr, weight_decay=weight_decay)

        def update(net, grad, t):
            return opt.step(net, grad, nn.linear_warmup_decay(t - 1, meta_cfg.iterations))
    else:
        def update(net, grad, t):
            return nn.sgd_step(net, grad, meta_cfg.alpha)

    sampler = BatchSampler(len(labels), meta_cfg.batch_size, rngs["train"])
    trace = Trace()
    tracker = BestTracker()

    def maybe_eval(t):
        if interval and (t % interval == 0 or t == meta_cfg.iterations):
            val_acc, test_acc = evaluate(student)
            trace.log_eval(t, test_acc, val_acc)
            tracker.update(t, val_acc, student)

    maybe_eval(0)
    for t in range(1, meta_cfg.iterations + 1):
        idx = sampler.next()
        batch = batches.take(idx)
        w = weights_all[idx] if weights_all is not None else None
        try:
            obj = student_objective(student, batch, cfg, w)
            student = update(student, obj.grad, t)
        except NumericalError as exc:
            raise DivergenceError(f"iteration {t}: {exc}", iteration=t) from exc
        trace.log(t, obj.loss)
        maybe_eval(t)
    best = tracker.best_model or student
    return StudentRun(method, student, best, _best_it(tracker, meta_cfg), trace)


def _best_it(tracker, meta_cfg):
    return meta_cfg.iterations if tracker.best_iteration is None else tracker.best_iteration
