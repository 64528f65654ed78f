import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aquactrl.optkern import (INFEASIBLE, OPTIMAL, MipProblem, QpProblem, solve_miqp, solve_qp, solve_slp)

from conftest import enumerate_miqp, random_miqp


def test_qp_examples():
    r = solve_qp(QpProblem(np.array([[2.0]]), np.zeros(1), lb=np.array([1.0])))
    assert r.status == OPTIMAL
    assert r.x[0] == pytest.approx(1.0) and r.objective == pytest.approx(1.0)
    # (x-1)^2 + (y-2)^2 on x + y = 1
    r = solve_qp(QpProblem(2 * np.eye(2), np.array([-2.0, -4.0]), np.array([[1.0, 1.0]]), np.array([1.0]),
                           c0=5.0))
    assert np.allclose(r.x, [0.0, 1.0], atol=1e-10)
    r = solve_qp(QpProblem(np.eye(1), np.zeros(1), lb=np.array([2.0]), ub=np.array([1.0])))
    assert r.status == INFEASIBLE and "certificate" in r.info


def test_qp_infeasible_certificate():
    # x1 + x2 <= -1 with x >= 0
    p = QpProblem(np.eye(2), np.zeros(2), A_ub=np.array([[1.0, 1.0]]), b_ub=np.array([-1.0]), lb=np.zeros(2))
    r = solve_qp(p)
    assert r.status == INFEASIBLE
    assert r.info["certificate"]["elastic_objective"] == pytest.approx(1.0)


def test_qp_rejects_indefinite():
    with pytest.raises(ValueError, match="non-PSD"):
        solve_qp(QpProblem(np.diag([1.0, -1.0]), np.zeros(2)))


def _cvx(p):
    x = cp.Variable(p.n)
    cons = [x >= p.lb, x <= p.ub]
    if p.A_eq.size:
        cons.append(p.A_eq @ x == p.b_eq)
    if p.A_ub.size:
        cons.append(p.A_ub @ x <= p.b_ub)
    prob = cp.Problem(cp.Minimize(0.5 * cp.quad_form(x, cp.psd_wrap(p.P)) + p.c @ x + p.c0), cons)
    prob.solve(solver="CLARABEL")
    return prob.value


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_qp_matches_cvxpy(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 12))
    me, mi = int(rng.integers(0, 3)), int(rng.integers(0, 8))
    L = rng.normal(size=(n, int(rng.integers(0, n + 1))))
    x0 = rng.normal(size=n)
    Ae = rng.normal(size=(me, n))
    Ai = rng.normal(size=(mi, n))
    p = QpProblem(L @ L.T, rng.normal(size=n), Ae, Ae @ x0, Ai, Ai @ x0 + rng.uniform(0, 1, mi),
                  x0 - rng.uniform(0.1, 2, n), x0 + rng.uniform(0.1, 2, n))
    r = solve_qp(p)
    assert r.status == OPTIMAL
    assert p.max_violation(r.x) <= 1e-8
    assert r.objective == pytest.approx(_cvx(p), abs=1e-6 * (1 + abs(r.objective)))
    # no sampled feasible point beats it
    for _ in range(20):
        y = x0 + rng.normal(size=n) * 0.3
        if p.max_violation(y) <= 0:
            assert r.objective <= p.objective(y) + 1e-9


def test_miqp_fixed_binaries_equal_qp():
    rng = np.random.default_rng(4)
    p = random_miqp(rng)
    for b in p.binaries:
        p.qp.lb[b] = p.qp.ub[b] = 0.0
    r = solve_miqp(p)
    q = solve_qp(p.qp)
    assert r.status == q.status == OPTIMAL
    assert r.objective == pytest.approx(q.objective, abs=1e-9)


def test_miqp_three_binaries_enumeration():
    rng = np.random.default_rng(11)
    p = random_miqp(rng, max_binaries=3)
    while len(p.binaries) != 3:
        p = random_miqp(rng, max_binaries=3)
    assert solve_miqp(p).objective == pytest.approx(enumerate_miqp(p), abs=1e-6)


def test_miqp_conflicting_selection_infeasible():
    # sum of omegas = 1 but every omega forced to 0
    n = 3
    p = MipProblem(QpProblem(np.zeros((n, n)), np.ones(n), np.ones((1, n)), np.array([1.0]),
                             lb=np.zeros(n), ub=np.zeros(n)), [0, 1, 2])
    assert solve_miqp(p).status == INFEASIBLE


def test_miqp_deterministic():
    rng = np.random.default_rng(7)
    p = random_miqp(rng)
    a, b = solve_miqp(p), solve_miqp(p)
    assert np.array_equal(a.x, b.x) and a.nodes == b.nodes


def test_miqp_binary_budget():
    rng = np.random.default_rng(0)
    p = random_miqp(rng)
    p.max_binaries = 0
    with pytest.raises(ValueError, match="budget"):
        solve_miqp(p)


def _box_shell(n, lo, hi, c=None):
    return MipProblem(QpProblem(np.zeros((n, n)), np.zeros(n) if c is None else c,
                                lb=np.full(n, lo), ub=np.full(n, hi)))


def test_slp_linear_objective_one_step():
    g = np.array([1.0, -2.0, 0.5])
    shell = _box_shell(3, -1.0, 1.0)
    r = solve_slp(lambda x: g @ x, shell, np.zeros(3), trust_radius=5.0, grad=lambda x: g)
    ref = solve_miqp(_box_shell(3, -1.0, 1.0, g))
    assert r.info["accepted"] == 1
    assert np.allclose(r.x, ref.x) and r.objective == pytest.approx(ref.objective)


def test_slp_concave_max_reaches_boundary():
    # maximize (x - 0.3)^2 on [0, 1]: the far end wins
    r = solve_slp(lambda x: -(x[0] - 0.3) ** 2, _box_shell(1, 0.0, 1.0), np.array([0.5]), trust_radius=0.1)
    assert r.status == OPTIMAL and r.x[0] == pytest.approx(1.0)


def test_slp_double_well_stationary():
    f = lambda x: (x[0] ** 2 - 1.0) ** 2  # noqa: E731
    r = solve_slp(f, _box_shell(1, -2.0, 2.0), np.array([0.2]), trust_radius=0.25, max_iter=200)
    assert r.info["local"] is True
    grid = np.linspace(-2, 2, 40001)
    vals = (grid ** 2 - 1) ** 2
    near = np.abs(grid - r.x[0]) <= 0.05
    # the iterate is the best grid point in its neighbourhood
    assert f(r.x) <= vals[near].min() + 1e-6
