import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from msdistill import nn
from msdistill.exceptions import ParameterError, ShapeError
from msdistill.weighting import (
    correctness_weights,
    grid_cells,
    grid_search_population,
    importance_weights,
    init_meta_net,
    meta_forward,
    meta_jacobian,
    meta_vjp,
    population_weights,
)
from oracles import fd_grad, max_rel_err


def _dists(n, C, seed):
    return nn.softmax_temp(np.random.default_rng(seed).normal(scale=2.0, size=(3, n, C)))


# --------------------------------------------------------------- population


def test_population_broadcast():
    w = population_weights((1.0, 0.5, 0.5), 10)
    assert w.shape == (10, 3) and np.all(w == [1.0, 0.5, 0.5])
    assert np.all(population_weights((0, 0, 0), 4) == 0)


def test_population_rejects_out_of_range():
    with pytest.raises(ParameterError):
        population_weights((1.2, 0, 0), 3)
    with pytest.raises(ShapeError):
        population_weights((1.0, 0.5), 3)


# --------------------------------------------------------------- importance


def test_importance_identical_views():
    p = np.array([0.3, 0.7])
    np.testing.assert_array_equal(importance_weights(p, p, p), [1.0, 0.0, 0.0])


def test_importance_worked_value():
    w = importance_weights(np.array([0.75, 0.25]), np.array([0.5, 0.5]), np.array([0.75, 0.25]))
    i_text = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)
    assert abs(i_text - 0.13081) < 1e-5
    assert w[0] == 1.0 and abs(w[1] - 0.13007) < 1e-5 and w[2] == 0.0


def test_importance_cross_assignment():
    """The image-term weight tracks the multi-vs-image-only shift."""
    multi, far, near = np.array([0.9, 0.1]), np.array([0.1, 0.9]), np.array([0.85, 0.15])
    w = importance_weights(multi, far, near)
    assert w[1] > w[2]


prob_triples = st.integers(2, 6).flatmap(
    lambda C: arrays(np.float64, (3, C), elements=st.floats(-8, 8)).map(nn.softmax_temp)
)


@settings(max_examples=150, deadline=None)
@given(prob_triples, st.randoms(use_true_random=False))
def test_importance_range_and_relabel_invariance(P, rnd):
    w = importance_weights(*P)
    assert w[0] == 1.0 and 0.0 <= w[1] < 1.0 and 0.0 <= w[2] < 1.0
    perm = list(range(P.shape[1]))
    rnd.shuffle(perm)
    np.testing.assert_allclose(importance_weights(*P[:, perm]), w, atol=1e-12)


# -------------------------------------------------------------- correctness


def test_correctness_equal_predictions():
    p = np.array([0.2, 0.5, 0.3])
    np.testing.assert_allclose(correctness_weights(p, p, p, 1), [1 / 3] * 3, atol=1e-15)


def test_correctness_inverse_proportional():
    # h = -log p[y] = (0.2, 0.4, 0.4)
    ps = [np.array([math.exp(-h), 1 - math.exp(-h)]) for h in (0.2, 0.4, 0.4)]
    np.testing.assert_allclose(correctness_weights(*ps, 0), [0.5, 0.25, 0.25], atol=1e-12)


def test_correctness_floor_on_perfect_view():
    other = np.array([math.exp(-1.0), 1 - math.exp(-1.0)])
    w = correctness_weights(np.array([1.0, 0.0]), other, other, 0)
    expected = np.array([1e6, 1.0, 1.0]) / (1e6 + 2)
    np.testing.assert_allclose(w, expected, rtol=1e-12)
    assert abs(w.sum() - 1) < 1e-12


@settings(max_examples=150, deadline=None)
@given(prob_triples, st.integers(0, 5))
def test_correctness_sums_to_one_and_positive(P, y):
    y = y % P.shape[1]
    w = correctness_weights(*P, y)
    assert abs(w.sum() - 1.0) < 1e-12 and np.all(w > 0)


def test_schemes_batch_match_rows():
    P = _dists(6, 3, 0)
    y = np.array([0, 1, 2, 0, 1, 2])
    batch_i, batch_c = importance_weights(*P), correctness_weights(*P, y)
    for i in range(6):
        np.testing.assert_allclose(batch_i[i], importance_weights(*P[:, i]), atol=1e-15)
        np.testing.assert_allclose(batch_c[i], correctness_weights(*P[:, i], y[i]), atol=1e-15)


# ----------------------------------------------------------------- meta-net


def test_meta_net_starts_uniform():
    meta = init_meta_net(3, np.random.default_rng(0))
    assert meta.layer_dims == [9, 64, 3] and meta.activation == "tanh"
    P = _dists(5, 3, 1)
    np.testing.assert_array_equal(meta_forward(meta, *P), 0.5)


def _random_meta(seed, C=2, hidden=8):
    rng = np.random.default_rng(seed)
    meta = init_meta_net(C, rng, hidden)
    return meta.with_flat(rng.normal(scale=0.8, size=meta.n_params))


def test_meta_jacobian_matches_fd():
    meta = _random_meta(2)
    P = _dists(1, 2, 3)[:, 0]
    J = meta_jacobian(meta, *P)
    for k in range(3):
        num = fd_grad(lambda v: meta_forward(meta.with_flat(v), *P)[k], meta.get_flat())
        assert max_rel_err(J[k], num) < 1e-5


def test_meta_vjp_matches_fd(rng):
    meta = _random_meta(4, C=3, hidden=5)
    P = _dists(4, 3, 5)
    U = rng.normal(size=(4, 3))
    x = np.concatenate(list(P), axis=1)
    g = meta_vjp(meta, x, U)
    num = fd_grad(lambda v: float(np.sum(U * meta_forward(meta.with_flat(v), *P))), meta.get_flat())
    assert max_rel_err(g, num) < 1e-5


def test_meta_outputs_strictly_inside_unit_cube():
    meta = _random_meta(6)
    out = meta_forward(meta, *_dists(200, 2, 7))
    assert np.all(out > 0) and np.all(out < 1)


def test_meta_symmetric_inputs_unchanged():
    meta = _random_meta(8)
    p, q = np.array([0.6, 0.4]), np.array([0.2, 0.8])
    np.testing.assert_array_equal(meta_forward(meta, p, q, q), meta_forward(meta, p, q.copy(), q.copy()))


# -------------------------------------------------------------- grid search


def test_grid_cells_lexicographic():
    cells = grid_cells([[1.0, 0.0], [0.5], [1.0, 0.0]])
    assert cells == [(0.0, 0.5, 0.0), (0.0, 0.5, 1.0), (1.0, 0.5, 0.0), (1.0, 0.5, 1.0)]
    with pytest.raises(ParameterError):
        grid_cells([[0.0], [], [0.0]])


def test_single_cell_grid():
    res = grid_search_population([[1.0], [0.0], [0.5]], lambda c: 0.3)
    assert res.best == (1.0, 0.0, 0.5) and len(res.table) == 1


def test_ties_break_to_smallest_cell():
    res = grid_search_population([[0.0, 1.0], [0.0, 1.0], [0.0]], lambda c: 0.7)
    assert res.best == (0.0, 0.0, 0.0)


def test_failing_cells_are_recorded_and_skipped():
    def score(cell):
        if cell[0] == 0.5:
            raise FloatingPointError("diverged")
        return cell[1]

    res = grid_search_population([[0.0, 0.5], [0.0, 1.0], [0.0]], score)
    assert res.best == (0.0, 1.0, 0.0)
    assert len(res.failures) == 2 and "diverged" in res.failures[0].error


def test_parallel_grid_matches_serial():
    grid = [[0.0, 0.5, 1.0]] * 3

    def score(c):
        return -((c[0] - 0.5) ** 2) - c[1] + 0.1 * c[2]

    a = grid_search_population(grid, score)
    b = grid_search_population(grid, score, n_jobs=2)
    assert a.best == b.best and [c.metric for c in a.table] == [c.metric for c in b.table]
