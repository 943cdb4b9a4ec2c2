import time

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from coop_dmpc.qp import (DUAL_INFEASIBLE, PRIMAL_INFEASIBLE, SOLVED, NonConvex, QpProblem, QpSettings, QpSolver,
                          kkt_residuals, solve_qp)

from oracles import enumerate_active_sets, random_strictly_convex_qp


def qp(P, q, A=None, l=(), u=()):
    n = len(np.atleast_1d(q))
    A = np.zeros((0, n)) if A is None else A
    return QpProblem(np.atleast_2d(P), np.atleast_1d(q), np.atleast_2d(A).reshape(-1, n), l, u)


def test_unconstrained_scalar():
    sol = solve_qp(qp(1.0, -1.0))
    assert sol.status == SOLVED
    assert sol.z[0] == pytest.approx(1.0, abs=1e-9)


def test_equality_by_symmetry():
    sol = solve_qp(qp(np.eye(2), np.zeros(2), [[1.0, 1.0]], [2.0], [2.0]))
    assert np.allclose(sol.z, [1.0, 1.0], atol=1e-9)


def test_active_upper_bound_and_dual_sign():
    # (z - 3)^2 = 0.5 * 2 z^2 - 6 z + 9 over 0 <= z <= 1
    problem = qp(2.0, -6.0, [[1.0]], [0.0], [1.0])
    sol = solve_qp(problem)
    assert sol.z[0] == pytest.approx(1.0, abs=1e-9)
    assert sol.y[0] == pytest.approx(4.0, abs=1e-8)
    assert sol.objective + 9.0 == pytest.approx(4.0, abs=1e-8)
    res = kkt_residuals(problem, [1.0], [4.0])
    assert max(res) < 1e-12


def test_residuals_at_origin():
    res = kkt_residuals(qp(1.0, -1.0), [0.0], [])
    assert res.dual == 1.0 and res.primal == 0.0


def test_residuals_vanish_at_interior_stationary_point():
    problem = qp(np.diag([2.0, 1.0]), [-1.0, 0.5], np.eye(2), [-5, -5], [5, 5])
    assert kkt_residuals(problem, [0.5, -0.5], [0.0, 0.0]) == (0.0, 0.0, 0.0)


def test_objective_constant_is_reported():
    problem = QpProblem(np.eye(1), [-1.0], np.zeros((0, 1)), [], [], constant=3.0)
    assert solve_qp(problem).objective == pytest.approx(2.5, abs=1e-9)


def test_nonconvex_rejected():
    with pytest.raises(NonConvex):
        solve_qp(qp(np.diag([1.0, -1.0]), np.zeros(2), np.eye(2), [-1, -1], [1, 1]))


def test_primal_infeasible_detected():
    sol = solve_qp(qp(np.eye(1), [0.0], [[1.0], [1.0]], [2.0, -np.inf], [np.inf, 1.0]))
    assert sol.status == PRIMAL_INFEASIBLE


def test_dual_infeasible_detected():
    sol = solve_qp(qp(np.zeros((1, 1)), [1.0], [[0.0]], [-1.0], [1.0]))
    assert sol.status == DUAL_INFEASIBLE


def test_problem_validation():
    with pytest.raises(ValueError):
        qp(np.eye(2), np.zeros(2), [[1.0, 0.0]], [1.0], [0.0])
    with pytest.raises(ValueError):
        qp(np.array([[1.0, 1.0], [0.0, 1.0]]), np.zeros(2))


def test_problem_dict_roundtrip():
    problem = qp(np.diag([2.0, 1.0]), [-1.0, 0.5], [[1.0, 1.0]], [-np.inf], [0.5])
    back = QpProblem.from_dict(problem.to_dict())
    assert (back.P != problem.P).nnz == 0 and (back.A != problem.A).nnz == 0
    assert np.array_equal(back.l, problem.l) and np.array_equal(back.u, problem.u)


def test_deterministic_bitwise():
    rng = np.random.default_rng(7)
    problem = qp(*random_strictly_convex_qp(rng))
    a, b = solve_qp(problem), solve_qp(problem)
    assert a.z.tobytes() == b.z.tobytes() and a.y.tobytes() == b.y.tobytes() and a.iterations == b.iterations


def test_solver_reuse_with_new_vectors():
    s = QpSolver(sp.eye(1, format="csc"), sp.csc_matrix([[1.0]]), [0.0], [1.0])
    assert s.solve(np.array([-6.0]), np.array([0.0]), np.array([1.0])).z[0] == pytest.approx(1.0, abs=1e-9)
    assert s.solve(np.array([6.0]), np.array([-1.0]), np.array([1.0])).z[0] == pytest.approx(-1.0, abs=1e-9)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_scaling_objective_leaves_argmin(seed):
    P, q, A, l, u = random_strictly_convex_qp(np.random.default_rng(seed))
    a = solve_qp(qp(P, q, A, l, u))
    b = solve_qp(qp(1e3 * P, 1e3 * q, A, l, u))
    assert a.status == b.status == SOLVED
    assert np.max(np.abs(a.z - b.z)) < 1e-6


def test_matches_active_set_enumeration():
    rng = np.random.default_rng(11)
    t0 = time.perf_counter()
    for _ in range(200):
        P, q, A, l, u = random_strictly_convex_qp(rng)
        problem = qp(P, q, A, l, u)
        sol = solve_qp(problem)
        z_ref, _, f_ref = enumerate_active_sets(P, q, A, l, u)
        assert sol.status == SOLVED
        assert abs(sol.objective - f_ref) < 1e-6
        assert max(kkt_residuals(problem, sol.z, sol.y)) < 1e-8
    assert time.perf_counter() - t0 < 5.0


def test_warm_start_does_not_change_answer():
    rng = np.random.default_rng(3)
    problem = qp(*random_strictly_convex_qp(rng))
    cold = solve_qp(problem)
    warm = solve_qp(problem, warm_start=(cold.z + rng.standard_normal(cold.z.size), np.zeros(problem.m)))
    assert np.max(np.abs(cold.z - warm.z)) < 1e-6


def test_tolerance_settings_are_used():
    s = QpSettings().updated(eps_abs=1e-4, max_iter=None)
    assert s.eps_abs == 1e-4 and s.max_iter == 20000
