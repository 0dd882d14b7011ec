import math

import numpy as np
import pytest

from msdistill import nn
from msdistill.exceptions import ConfigError, DivergenceError
from msdistill.losses import DistillConfig, ViewBatch, teacher_targets
from msdistill.meta import (
    MetaOptConfig,
    MetaState,
    compute_meta_gradient,
    meta_iteration,
    meta_update,
    run_meta_training,
    virtual_step,
)
from msdistill.tracking import run_rngs
from msdistill.weighting import init_meta_net, meta_forward
from oracles import composed_meta_loss, fd_grad, max_rel_err, tiny_bilevel


def _state(p):
    return MetaState(p["student"], p["meta"])


def _meta_grad(p):
    state = _state(p)
    vr = virtual_step(state, p["batch"], p["cfg"], p["alpha"])
    return compute_meta_gradient(state, vr, p["meta_X"], p["meta_y"], p["cfg"], p["alpha"])


# ---------------------------------------------------------------- virtual


def test_zero_step_size_keeps_student():
    p = tiny_bilevel(0)
    vr = virtual_step(_state(p), p["batch"], p["cfg"], 0.0)
    assert vr.student_hat.equals(p["student"])


def test_pure_ce_virtual_step_ignores_meta_net():
    p = tiny_bilevel(1, lam=1.0)
    other = p["meta"].with_flat(np.random.default_rng(9).normal(size=p["meta"].n_params))
    a = virtual_step(_state(p), p["batch"], p["cfg"], 0.3).student_hat
    b = virtual_step(MetaState(p["student"], other), p["batch"], p["cfg"], 0.3).student_hat
    assert a.equals(b)


def _hand_student_grad(student, batch, weights, tau, lam):
    """Scalar-loop gradient for a one-hidden-unit tanh student."""
    (a,), (v,) = student.weights[0], student.weights[1][:, 0][None]
    b1 = student.biases[0][0]
    c = student.biases[1]
    C = len(c)
    ga, gb1 = [0.0] * len(a), 0.0
    gv, gc = [0.0] * C, [0.0] * C
    n = len(batch)
    for i in range(n):
        for k in range(3):
            u = batch.inputs[k][i]
            h = math.tanh(sum(a[j] * u[j] for j in range(len(a))) + b1)
            z = [v[q] * h + c[q] for q in range(C)]
            delta = [0.0] * C
            if k == 0:
                mz = max(z)
                e = [math.exp(zz - mz) for zz in z]
                p = [ee / sum(e) for ee in e]
                for q in range(C):
                    delta[q] += lam * (p[q] - (1.0 if q == batch.labels[i] else 0.0))
            mz = max(z)
            e = [math.exp((zz - mz) / tau) for zz in z]
            s = [ee / sum(e) for ee in e]
            t = batch.targets.soft[k][i]
            for q in range(C):
                delta[q] += (1 - lam) * weights[i][k] * tau * (s[q] - t[q])
            dh = 0.0
            for q in range(C):
                gv[q] += delta[q] * h / n
                gc[q] += delta[q] / n
                dh += delta[q] * v[q]
            dpre = dh * (1 - h * h)
            for j in range(len(a)):
                ga[j] += dpre * u[j] / n
            gb1 += dpre / n
    return np.array(ga + [gb1] + gv + gc)


def test_virtual_step_matches_hand_unrolled():
    p = tiny_bilevel(2, n=2, hidden=1, lam=0.4, tau=3.0, alpha=0.2)
    vr = virtual_step(_state(p), p["batch"], p["cfg"], 0.2)
    g = _hand_student_grad(p["student"], p["batch"], vr.weights, 3.0, 0.4)
    expected = p["student"].get_flat() - 0.2 * g
    np.testing.assert_allclose(vr.student_hat.get_flat(), expected, rtol=1e-13, atol=1e-15)


# ---------------------------------------------------------- meta-gradient


@pytest.mark.parametrize("seed", range(4))
def test_meta_gradient_matches_composed_fd(seed):
    p = tiny_bilevel(seed, lam=0.3 + 0.1 * seed)
    grad, _ = _meta_grad(p)
    num = fd_grad(lambda th: composed_meta_loss(p, th), p["meta"].get_flat())
    assert max_rel_err(grad, num) < 1e-4


def test_meta_loss_value():
    p = tiny_bilevel(5)
    _, loss = _meta_grad(p)
    assert loss == pytest.approx(composed_meta_loss(p, p["meta"].get_flat()), rel=1e-13)


def test_pure_ce_gives_zero_meta_gradient():
    p = tiny_bilevel(3, lam=1.0)
    grad, _ = _meta_grad(p)
    np.testing.assert_array_equal(grad, 0.0)


def test_zero_output_layer_blocks_gradient_into_hidden_layer():
    p = tiny_bilevel(4)
    p["meta"] = init_meta_net(2, np.random.default_rng(0), 8)
    grad, _ = _meta_grad(p)
    n_hidden = p["meta"].weights[0].size + p["meta"].biases[0].size
    np.testing.assert_array_equal(grad[:n_hidden], 0.0)
    assert np.any(grad[n_hidden:] != 0.0)


def test_missing_view_terms_is_an_internal_error():
    p = tiny_bilevel(6)
    state = _state(p)
    vr = virtual_step(state, p["batch"], p["cfg"], p["alpha"])
    vr.objective.terms = []
    with pytest.raises(RuntimeError):
        compute_meta_gradient(state, vr, p["meta_X"], p["meta_y"], p["cfg"], p["alpha"])


# ------------------------------------------------------------ iteration


def test_zero_meta_rate_keeps_theta():
    p = tiny_bilevel(7)
    cfg = MetaOptConfig(alpha=0.5, beta=0.0)
    state, *_ = meta_iteration(_state(p), p["batch"], p["meta_X"], p["meta_y"], p["cfg"], cfg)
    assert state.meta.equals(p["meta"])


def test_full_iteration_matches_reference():
    p = tiny_bilevel(8, n=2, m=2, hidden=1)
    beta = 0.3
    cfg = MetaOptConfig(alpha=p["alpha"], beta=beta)
    state, _, _, _ = meta_iteration(_state(p), p["batch"], p["meta_X"], p["meta_y"], p["cfg"], cfg)
    theta = p["meta"].get_flat()
    theta_new = theta - beta * fd_grad(lambda th: composed_meta_loss(p, th), theta)
    plain = p["batch"].targets.plain
    weights = meta_forward(p["meta"].with_flat(theta_new), plain[0], plain[1], plain[2])
    g = _hand_student_grad(p["student"], p["batch"], weights, p["cfg"].tau, p["cfg"].lam)
    np.testing.assert_allclose(state.meta.get_flat(), theta_new, rtol=1e-7, atol=1e-10)
    np.testing.assert_allclose(state.student.get_flat(), p["student"].get_flat() - p["alpha"] * g,
                               rtol=1e-7, atol=1e-10)
    assert state.t == 1


def test_meta_update_is_sgd():
    p = tiny_bilevel(9)
    g = np.ones(p["meta"].n_params)
    out = meta_update(_state(p), g, 0.1)
    np.testing.assert_allclose(out.meta.get_flat(), p["meta"].get_flat() - 0.1)


# -------------------------------------------------------------- full loop


def _loop_inputs(seed=0, n=40, m=12, C=3):
    rng = np.random.default_rng(seed)
    teacher = nn.init_dense([8, 10, C], rng, "relu")
    text, image = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
    y = rng.integers(0, C, n)
    train = ViewBatch.from_arrays(text, image, y, teacher_targets(teacher, text, image, 4.0))
    meta_X = train.inputs[0][:m]
    return train, meta_X, y[:m]


def _run(iterations=30, beta=1e-2, seed=1, alpha=0.05):
    train, meta_X, meta_y = _loop_inputs()
    rngs = run_rngs(seed)
    student = nn.init_dense([8, 6, 3], rngs["student"])
    meta = init_meta_net(3, rngs["metanet"], 16)
    cfg = MetaOptConfig(alpha=alpha, beta=beta, batch_size=8, meta_batch_size=4, iterations=iterations)
    return run_meta_training(cfg, DistillConfig(), train, meta_X, meta_y, student, meta, rngs), student, meta


def test_zero_iterations_returns_inputs():
    res, student, meta = _run(iterations=0)
    assert res.student.equals(student) and res.meta.equals(meta)
    assert res.trace.rows == []


def test_run_is_deterministic_and_finite():
    a, _, _ = _run()
    b, _, _ = _run()
    assert a.student.equals(b.student) and a.meta.equals(b.meta)
    assert [r["meta_loss"] for r in a.trace.rows] == [r["meta_loss"] for r in b.trace.rows]
    assert np.all(np.isfinite(a.trace.losses())) and len(a.trace.rows) == 30
    assert not a.meta.equals(_run(iterations=0)[0].meta)


def test_run_trace_csv_columns():
    res, _, _ = _run(iterations=3)
    lines = res.trace.to_csv().splitlines()
    assert lines[0] == "iteration,student_loss,meta_loss,meta_grad_norm,test_acc"
    assert len(lines) == 4


def test_divergence_reports_iteration():
    with pytest.raises(DivergenceError) as info:
        _run(iterations=200, alpha=1e5)
    assert 1 <= info.value.iteration <= 200


def test_empty_meta_split():
    train, meta_X, meta_y = _loop_inputs()
    rngs = run_rngs(1)
    with pytest.raises(ValueError):
        run_meta_training(MetaOptConfig(iterations=1), DistillConfig(), train, meta_X[:0], meta_y[:0],
                          nn.init_dense([8, 3], rngs["student"]), init_meta_net(3, rngs["metanet"]), rngs)


def test_config_validation():
    with pytest.raises(ConfigError):
        MetaOptConfig(batch_size=0)
    with pytest.raises(ConfigError, match="meta.gamma"):
        MetaOptConfig.from_dict({"gamma": 1})
    assert MetaOptConfig.from_dict(MetaOptConfig().to_dict()) == MetaOptConfig()
