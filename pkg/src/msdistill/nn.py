"""Dense feedforward networks with hand-written backpropagation.

Everything is float64. Networks are small plain containers (``DenseNet``);
the functions here are pure: they never mutate a network in place, optimizer
steps return a new network.

Parameter order for flat vectors ("grad vectors") is layer by layer, the
weight matrix row-major (out x in) followed by the bias vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import NumericalError, ParameterError, ShapeError

EPS = 1e-12
ACTIVATIONS = ("relu", "tanh")


@dataclass(eq=False)
class DenseNet:
    """Fully connected network: ``layer_dims = [in, hidden..., out]``.

    Hidden layers use ``activation``; the output layer is linear (logits).
    ``sigmoid_output`` only changes how the network is tagged on disk, the
    sigmoid itself is applied by the caller (see ``weighting.meta_forward``).
    """

    layer_dims: list
    weights: list
    biases: list
    activation: str = "relu"
    sigmoid_output: bool = False

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2 or any(d <= 0 for d in self.layer_dims):
            raise ShapeError(f"layer_dims must hold >= 2 positive ints, got {self.layer_dims}")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")
        n_layers = len(self.layer_dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ShapeError(
                f"expected {n_layers} weight/bias pairs, got "
                f"{len(self.weights)}/{len(self.biases)}"
            )
        self.weights = [np.asarray(W, dtype=np.float64) for W in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[k + 1], self.layer_dims[k])
            if W.shape != shape or b.shape != (shape[0],):
                raise ShapeError(
                    f"layer {k}: weight {W.shape} / bias {b.shape} do not match {shape}"
                )
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise NumericalError(f"layer {k} holds non-finite parameters")

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def n_params(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def get_flat(self):
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])

    def with_flat(self, vec):
        """Return a copy of this network holding the parameters in ``vec``."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise ShapeError(f"flat vector has shape {vec.shape}, expected ({self.n_params},)")
        weights, biases = _unflatten(vec, self.layer_dims)
        return DenseNet(self.layer_dims, weights, biases, self.activation, self.sigmoid_output)

    def copy(self):
        return DenseNet(
            list(self.layer_dims),
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
            self.sigmoid_output,
        )

    def equals(self, other):
        """Bitwise parameter equality."""
        return (
            self.layer_dims == other.layer_dims
            and self.activation == other.activation
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )

    def to_dict(self):
        d = {
            "layer_dims": list(self.layer_dims),
            "activation": self.activation,
            "weights": [W.ravel().tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }
        if self.sigmoid_output:
            d["sigmoid_output"] = True
        return d

    @classmethod
    def from_dict(cls, d):
        dims = [int(x) for x in d["layer_dims"]]
        weights = [
            np.asarray(w, dtype=np.float64).reshape(dims[k + 1], dims[k])
            for k, w in enumerate(d["weights"])
        ]
        biases = [np.asarray(b, dtype=np.float64) for b in d["biases"]]
        return cls(dims, weights, biases, d.get("activation", "relu"), bool(d.get("sigmoid_output", False)))


def _unflatten(vec, layer_dims):
    weights, biases, pos = [], [], 0
    for k in range(len(layer_dims) - 1):
        n_out, n_in = layer_dims[k + 1], layer_dims[k]
        weights.append(vec[pos:pos + n_out * n_in].reshape(n_out, n_in).copy())
        pos += n_out * n_in
        biases.append(vec[pos:pos + n_out].copy())
        pos += n_out
    return weights, biases


def init_dense(layer_dims, rng, activation="relu", zero_last=False):
    """Glorot-uniform weights, zero biases.

    With ``zero_last`` the output layer weights are zero too, so the network
    emits constant zero logits until trained.
    """
    weights, biases = [], []
    n_layers = len(layer_dims) - 1
    for k in range(n_layers):
        fan_in, fan_out = layer_dims[k], layer_dims[k + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        if zero_last and k == n_layers - 1:
            W = np.zeros_like(W)
        weights.append(W)
        biases.append(np.zeros(fan_out))
    return DenseNet(list(layer_dims), weights, biases, activation)


def save_net(net, path):
    Path(path).write_text(json.dumps(net.to_dict()) + "\n")


def load_net(path):
    return DenseNet.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- forward


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z, a, kind):
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)  # input to each layer
    preacts: list = field(default_factory=list)
    logits: np.ndarray = None


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != net.layer_dims[0]:
        raise ShapeError(f"input has shape {x.shape}, network expects {net.layer_dims[0]} features")
    return X, single


def forward_cache(net, X):
    X, _ = _as_batch(net, X)
    cache = ForwardCache()
    a = X
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        cache.inputs.append(a)
        with np.errstate(over="ignore", invalid="ignore"):  # callers check finiteness
            z = a @ W.T + b
        cache.preacts.append(z)
        a = z if k == net.n_layers - 1 else _act(z, net.activation)
    cache.logits = a
    return cache


def forward(net, x):
    """Logits for one input vector or a batch of row vectors."""
    X, single = _as_batch(net, x)
    logits = forward_cache(net, X).logits
    return logits[0] if single else logits


def backward_from_logits(net, cache, dlogits):
    """Backpropagate ``dlogits`` (d loss / d logits, one row per sample).

    Returns the flat parameter gradient of ``sum_i dlogits_i . logits_i`` and
    the per-layer deltas (d loss / d preactivation), which callers use for
    per-sample contractions without materialising per-sample gradients.
    """
    delta = np.asarray(dlogits, dtype=np.float64)
    if delta.shape != cache.logits.shape:
        raise ShapeError(f"dlogits shape {delta.shape} != logits shape {cache.logits.shape}")
    deltas = [None] * net.n_layers
    parts = [None] * net.n_layers
    for k in range(net.n_layers - 1, -1, -1):
        deltas[k] = delta
        a_in = cache.inputs[k]
        parts[k] = np.concatenate([(delta.T @ a_in).ravel(), delta.sum(axis=0)])
        if k > 0:
            da = delta @ net.weights[k]
            delta = da * _act_grad(cache.preacts[k - 1], cache.inputs[k], net.activation)
    return np.concatenate(parts), deltas


def per_sample_dot(net, cache, deltas, direction):
    """``g_i . direction`` for every sample's gradient ``g_i``, in one pass.

    ``deltas`` must come from ``backward_from_logits`` with *per-sample*
    (unaveraged) dlogits.
    """
    dW, db = _unflatten(np.asarray(direction, dtype=np.float64), net.layer_dims)
    out = np.zeros(cache.logits.shape[0])
    for k in range(net.n_layers):
        out += np.sum((deltas[k] @ dW[k]) * cache.inputs[k], axis=1) + deltas[k] @ db[k]
    return out


# ------------------------------------------------------ probability pieces


def _check_tau(tau):
    if not tau > 0:
        raise ParameterError(f"temperature must be > 0, got {tau}")


def log_softmax_temp(logits, tau=1.0):
    _check_tau(tau)
    z = np.asarray(logits, dtype=np.float64) / tau
    if not np.all(np.isfinite(z)):
        raise NumericalError("non-finite logits")
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_temp(logits, tau=1.0):
    """softmax(logits / tau) along the last axis, max-shifted."""
    _check_tau(tau)
    z = np.asarray(logits, dtype=np.float64) / tau
    if not np.all(np.isfinite(z)):
        raise NumericalError("non-finite logits")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def kl_div(p, q):
    """KL(p || q) in nats along the last axis; inputs clamped at EPS."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    pc = np.maximum(p, EPS)
    qc = np.maximum(q, EPS)
    return np.sum(p * (np.log(pc) - np.log(qc)), axis=-1)


def cross_entropy(p, y):
    """-log p[y]; ``p`` is (C,) or (n, C), ``y`` an index or index array."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y)
    C = p.shape[-1]
    if np.any(y < 0) or np.any(y >= C):
        raise ParameterError(f"class index out of range [0, {C})")
    if p.ndim == 1:
        return float(-np.log(max(p[int(y)], EPS)))
    return -np.log(np.maximum(p[np.arange(p.shape[0]), y], EPS))


def one_hot(y, num_classes):
    y = np.asarray(y)
    if np.any(y < 0) or np.any(y >= num_classes):
        raise ParameterError(f"class index out of range [0, {num_classes})")
    out = np.zeros(y.shape + (num_classes,))
    np.put_along_axis(out, y[..., None], 1.0, axis=-1)
    return out


# ----------------------------------------------------------- loss heads
# A loss head maps a logits batch to per-sample values and per-sample
# d value / d logits. Heads compose linearly through WeightedSum.


class CrossEntropyLoss:
    """Hard-label cross-entropy at temperature 1."""

    def __init__(self, labels):
        self.labels = np.asarray(labels, dtype=np.int64)

    def __call__(self, logits):
        logp = log_softmax_temp(logits, 1.0)
        n, C = logits.shape
        if self.labels.shape != (n,):
            raise ShapeError(f"{self.labels.shape[0]} labels for {n} samples")
        values = -logp[np.arange(n), self.labels]
        return values, np.exp(logp) - one_hot(self.labels, C)


class KLDistillLoss:
    """``scale * KL(target || softmax(logits / tau))`` per sample.

    ``scale`` defaults to tau**2, the usual distillation gradient rescaling.
    """

    def __init__(self, target, tau, scale=None):
        _check_tau(tau)
        self.target = np.asarray(target, dtype=np.float64)
        self.tau = float(tau)
        self.scale = self.tau ** 2 if scale is None else float(scale)

    def __call__(self, logits):
        if self.target.shape != logits.shape:
            raise ShapeError(f"target {self.target.shape} vs logits {logits.shape}")
        logq = log_softmax_temp(logits, self.tau)
        t = self.target
        values = self.scale * np.sum(t * (np.log(np.maximum(t, EPS)) - logq), axis=1)
        grad = (self.scale / self.tau) * (np.exp(logq) - t)
        return values, grad


class WeightedSum:
    """Sum of ``weight * head`` terms; weights are scalars or per-sample arrays."""

    def __init__(self, terms):
        self.terms = list(terms)

    def __call__(self, logits):
        values = np.zeros(logits.shape[0])
        grad = np.zeros_like(logits)
        for weight, head in self.terms:
            v, g = head(logits)
            w = np.asarray(weight, dtype=np.float64)
            values = values + w * v
            grad = grad + (w[:, None] if w.ndim == 1 else w) * g
        return values, grad


@dataclass
class BackwardResult:
    loss: float
    grad: np.ndarray
    per_sample: np.ndarray = None  # (n, n_params) when requested


def backward(net, X, loss, per_sample=False):
    """Mean of ``loss`` over the batch and its exact parameter gradient.

    With ``per_sample`` each sample's own gradient is also returned, computed
    by replaying the backward pass one row at a time.
    """
    X, _ = _as_batch(net, X)
    n = X.shape[0]
    if n == 0:
        raise ParameterError("empty batch")
    cache = forward_cache(net, X)
    values, dlogits = loss(cache.logits)
    grad, _ = backward_from_logits(net, cache, dlogits / n)
    check_finite(grad, "gradient")
    rows = None
    if per_sample:
        rows = np.empty((n, net.n_params))
        for i in range(n):
            sub = ForwardCache(
                [a[i:i + 1] for a in cache.inputs],
                [z[i:i + 1] for z in cache.preacts],
                cache.logits[i:i + 1],
            )
            rows[i], _ = backward_from_logits(net, sub, dlogits[i:i + 1])
    return BackwardResult(float(np.mean(values)), grad, rows)


def check_finite(arr, what="value"):
    arr = np.asarray(arr)
    bad = ~np.isfinite(arr)
    if bad.any():
        finite = arr[~bad]
        peak = float(np.max(np.abs(finite))) if finite.size else float("nan")
        raise NumericalError(
            f"{what}: {int(bad.sum())} of {arr.size} entries non-finite "
            f"(max |finite entry| = {peak:.3g})"
        )


# ------------------------------------------------------------ optimizers


def sgd_step(net, grad, lr):
    if lr < 0:
        raise ParameterError(f"learning rate must be >= 0, got {lr}")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != (net.n_params,):
        raise ShapeError(f"gradient length {grad.shape} != parameter count {net.n_params}")
    check_finite(grad, "gradient")
    return net.with_flat(net.get_flat() - lr * grad)


def linear_warmup_decay(step, total_steps, warmup_frac=0.1):
    """LR multiplier: linear ramp over the first ``warmup_frac`` of training,
    then linear decay reaching 0 at ``total_steps``. ``step`` is 0-based."""
    warmup = int(warmup_frac * total_steps)
    if warmup > 0 and step < warmup:
        return (step + 1) / warmup
    return max(0.0, (total_steps - step) / max(1, total_steps - warmup))


class AdamW:
    """Adam with decoupled weight decay (Loshchilov & Hutter)."""

    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        if lr < 0:
            raise ParameterError(f"learning rate must be >= 0, got {lr}")
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = None
        self.v = None
        self.t = 0

    def step(self, net, grad, lr_scale=1.0):
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != (net.n_params,):
            raise ShapeError(f"gradient length {grad.shape} != parameter count {net.n_params}")
        check_finite(grad, "gradient")
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        b1, b2 = self.betas
        self.t += 1
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        m_hat = self.m / (1 - b1 ** self.t)
        v_hat = self.v / (1 - b2 ** self.t)
        lr = self.lr * lr_scale
        p = net.get_flat()
        p = p - lr * self.weight_decay * p
        p = p - lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return net.with_flat(p)
