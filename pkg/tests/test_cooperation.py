import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coop_dmpc.cooperation import (CooperationCostSpec, Graph, combined_cost_quadratic_form, eval_combined_cost,
                                   eval_global_cost, eval_pair_cost)
from coop_dmpc.trajectory import PeriodicTrajectory, shift

from factories import random_cost_spec, random_graph, random_trajectories

SYNC = CooperationCostSpec()
SEEDS = st.integers(0, 2**32 - 1)


def P(*values):
    return PeriodicTrajectory(np.array(values, dtype=float).reshape(len(values), -1))


def test_graph_rejects_self_loop():
    with pytest.raises(ValueError, match="self-loop"):
        Graph([1, 2], [(1, 1)])


def test_graph_is_undirected():
    g = Graph([1, 2, 3], [(2, 1)])
    assert g.neighbors(1) == (2,) and g.neighbors(2) == (1,) and g.neighbors(3) == ()
    assert Graph.all_to_all([3, 1, 2]).edges() == [(1, 2), (1, 3), (2, 3)]


def test_pair_cost_examples():
    y = P(1, 2)
    assert eval_pair_cost(SYNC, (1, 2), y, y) == 0.0
    assert eval_pair_cost(SYNC, (1, 2), P(0), P(2)) == 4.0


def test_offset_cancels():
    spec = CooperationCostSpec("offset_synchronization", offsets={1: [1.0, -2.0], 2: [0.5, 0.5]})
    y_j = PeriodicTrajectory(np.arange(6.0).reshape(3, 2))
    y_i = PeriodicTrajectory(y_j.data + np.array([0.5, -2.5]))
    assert eval_pair_cost(spec, (1, 2), y_i, y_j) == 0.0


def test_pair_cost_requires_edge():
    with pytest.raises(KeyError):
        eval_pair_cost(SYNC, (1, 3), P(0), P(1), Graph([1, 2, 3], [(1, 2)]))


def test_weights_must_be_symmetric():
    with pytest.raises(ValueError):
        CooperationCostSpec(weights={(1, 2): 1.0, (2, 1): 2.0})


def test_global_cost_examples():
    g2 = Graph.all_to_all([1, 2])
    assert eval_global_cost(SYNC, g2, {1: P(0), 2: P(2)}) == 8.0
    g4 = Graph.all_to_all([1, 2, 3, 4])
    base = np.ones((5, 2))
    same = {i: PeriodicTrajectory(base) for i in g4.vertices}
    assert eval_global_cost(SYNC, g4, same) == 0.0
    eps = 1e-3
    moved = base.copy()
    moved[3, 1] += eps
    same[2] = PeriodicTrajectory(moved)
    assert eval_global_cost(SYNC, g4, same) == pytest.approx(6 * eps**2, rel=1e-9)


def test_combined_cost_examples():
    g = Graph([1, 2], [(1, 2)])
    assert eval_combined_cost(SYNC, g, 1, P(1), {2: P(1)}) == 0.0
    assert eval_combined_cost(SYNC, g, 1, P(1), {2: P(3)}) == 8.0


def test_quadratic_form_single_neighbor():
    g = Graph([1, 2], [(1, 2)])
    H, g_vec, c = combined_cost_quadratic_form(SYNC, g, 1, {2: P(1, 2, 3)}, 3, 1)
    assert np.array_equal(H, 4 * np.eye(3))
    assert c == eval_combined_cost(SYNC, g, 1, P(0, 0, 0), {2: P(1, 2, 3)})


def test_quadratic_form_without_neighbors():
    H, g_vec, c = combined_cost_quadratic_form(SYNC, Graph([1]), 1, {}, 4, 2)
    assert not H.any() and not g_vec.any() and c == 0.0


def _fleet(seed):
    rng = np.random.default_rng(seed)
    ids = list(range(1, int(rng.integers(2, 6)) + 1))
    T, p = int(rng.integers(1, 8)), int(rng.integers(1, 4))
    g = random_graph(rng, ids)
    return rng, g, random_cost_spec(rng, g, p), random_trajectories(rng, ids, T, p), T, p


@settings(max_examples=200)
@given(SEEDS)
def test_nonnegative_and_zero_on_consensus(seed):
    rng, g, spec, ys, T, p = _fleet(seed)
    assert eval_global_cost(spec, g, ys) >= 0.0
    common = rng.standard_normal((T, p))
    agreed = {i: PeriodicTrajectory(common + spec.offset(i, p)) for i in g.vertices}
    assert eval_global_cost(spec, g, agreed) <= 1e-20 * max(1.0, float(np.sum(common**2)))


@settings(max_examples=200)
@given(SEEDS)
def test_separable_over_ordered_pairs(seed):
    _, g, spec, ys, _, _ = _fleet(seed)
    pairs = sum(eval_pair_cost(spec, (i, j), ys[i], ys[j]) for i in g.vertices for j in g.neighbors(i))
    assert eval_global_cost(spec, g, ys) == pytest.approx(pairs, rel=1e-12, abs=1e-12)


@settings(max_examples=200)
@given(SEEDS, st.integers(-4, 4))
def test_shift_invariant(seed, s):
    _, g, spec, ys, _, _ = _fleet(seed)
    for i, j in g.edges():
        a = eval_pair_cost(spec, (i, j), ys[i], ys[j])
        assert eval_pair_cost(spec, (i, j), shift(ys[i], s), shift(ys[j], s)) == pytest.approx(a, rel=1e-12,
                                                                                                abs=1e-12)


@settings(max_examples=200)
@given(SEEDS, st.floats(0, 1))
def test_convex(seed, lam):
    rng, g, spec, ys, T, p = _fleet(seed)
    zs = random_trajectories(rng, g.vertices, T, p)
    mix = {i: PeriodicTrajectory(lam * ys[i].data + (1 - lam) * zs[i].data) for i in g.vertices}
    rhs = lam * eval_global_cost(spec, g, ys) + (1 - lam) * eval_global_cost(spec, g, zs)
    assert eval_global_cost(spec, g, mix) <= rhs + 1e-9 * max(1.0, rhs)


@settings(max_examples=200)
@given(SEEDS)
def test_quadratic_form_matches_evaluation_and_gradient(seed):
    rng, g, spec, ys, T, p = _fleet(seed)
    i = g.vertices[0]
    nbr = {j: ys[j] for j in g.neighbors(i)}
    H, gv, c = combined_cost_quadratic_form(spec, g, i, nbr, T, p)
    v = ys[i].flat()
    f = lambda w: eval_combined_cost(spec, g, i, PeriodicTrajectory.from_flat(w, T, p), nbr)  # noqa: E731
    assert 0.5 * v @ H @ v + gv @ v + c == pytest.approx(f(v), rel=1e-9, abs=1e-9)
    h = 1e-5
    fd = np.array([(f(v + h * e) - f(v - h * e)) / (2 * h) for e in np.eye(v.size)])
    grad = H @ v + gv
    assert np.linalg.norm(fd - grad) <= 1e-6 * max(1.0, np.linalg.norm(grad))
