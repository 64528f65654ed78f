import numpy as np
import pytest
import sympy as sy
from hypothesis import given, settings, strategies as st

from aquactrl.ctrb import (EPS_RANK, approx_target_gramian, ctrb_matrix, gramian, gramian_csv, gramian_metrics,
                           kalman_decompose, numeric_rank, poly_wq_matrices, reference_denominators,
                           target_gramian, target_selector)
from aquactrl.hydsim import SegmentPlan
from aquactrl.wqsim import assemble_wq

from conftest import closed_form_state, random_staircase


def test_ctrb_matrix_examples():
    e1 = np.array([[1.0], [0.0]])
    C = ctrb_matrix(np.eye(2), e1, 3)
    assert np.array_equal(C, np.hstack([e1, e1, e1])) and numeric_rank(C) == 1
    B = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ctrb_matrix(np.eye(2) * 7, B, 1), B)
    A = np.diag([0.5, 0.5])
    assert np.allclose(ctrb_matrix(A, e1, 2), [[1.0, 0.5], [0.0, 0.0]])


def test_gramian_examples():
    B = np.array([[1.0], [2.0]])
    assert np.allclose(gramian(np.eye(2) * 3, B, 1), B @ B.T)
    W = gramian(np.diag([0.5, 0.5]), np.array([[1.0], [0.0]]), 2)
    assert np.allclose(W, [[1.25, 0.0], [0.0, 0.0]])
    assert np.trace(W) == pytest.approx(1.25) and numeric_rank(W) == 1
    e1 = np.array([[1.0], [0.0], [0.0]])
    assert np.allclose(gramian(np.eye(3), e1, 3), 3 * e1 @ e1.T)


def test_numeric_rank_examples():
    assert numeric_rank(np.eye(5), 0.5) == 5
    assert numeric_rank(np.zeros((4, 4))) == 0
    assert numeric_rank(np.diag([1.0, 1e-20]), 2.2204e-16) == 1


def test_kalman_examples():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(4, 4))
    B = rng.normal(size=(4, 1))
    kd = kalman_decompose(A, B)
    assert kd.k == 4
    assert np.allclose(np.sort_complex(np.linalg.eigvals(kd.Abar)), np.sort_complex(np.linalg.eigvals(A)))
    kd = kalman_decompose(np.array([[1.0, 1.0], [0.0, 2.0]]), np.array([[1.0], [0.0]]))
    assert kd.k == 1
    assert abs(kd.A11[0, 0]) == pytest.approx(1.0) and abs(kd.B1[0, 0]) == pytest.approx(1.0)
    assert np.abs(kd.A21).max() <= 1e-14
    kd = kalman_decompose(A, np.zeros((4, 1)))
    assert kd.k == 0
    assert np.allclose(np.sort_complex(np.linalg.eigvals(kd.A22)), np.sort_complex(np.linalg.eigvals(A)))


def test_metrics_identity_and_diag():
    rep = gramian_metrics(None, None, 1, W=np.eye(3))
    assert (rep.rank, rep.trace, rep.logdet, rep.lambda_min) == (3, 3.0, 0.0, 1.0)
    rep = gramian_metrics(None, None, 1, W=np.diag([2.0, 0.0]))
    assert rep.rank == 1 and rep.trace == 2.0
    assert rep.logdet == pytest.approx(np.log(2.0)) and rep.lambda_min == pytest.approx(2.0)
    assert "rank_pct" in gramian_csv([rep])


def test_target_gramian_examples():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(5, 5)) * 0.3
    B = rng.normal(size=(5, 2))
    W = gramian(A, B, 6)
    assert np.allclose(target_gramian(A, B, 6, np.eye(5)), W)
    e = np.zeros((1, 5))
    e[0, 3] = 1.0
    assert target_gramian(A, B, 6, e)[0, 0] == pytest.approx(W[3, 3], rel=1e-12)


def test_tank_target_brute_force(three_node):
    net = three_node
    sys_ = assemble_wq(net, closed_form_state(net, 0.5), SegmentPlan.uniform(net, 3))
    A, B = sys_.dense(), sys_.B
    C = target_selector(sys_.labels, ["TK1"])
    N = 12
    brute = 0.0
    Ak = np.eye(7)
    for _ in range(N):
        v = (C @ Ak @ B)[0, 0]
        brute += v * v
        Ak = A @ Ak
    assert target_gramian(sys_.A, B, N, C)[0, 0] == pytest.approx(brute, rel=1e-12)


def test_velocity_threshold_rank(three_node):
    # rank on {J1, segments, TK1} is full above the traverse velocity and short below it
    from aquactrl.hydsim import segments_from_velocities

    net = three_node
    for v, full in ((0.1, False), (0.5, True), (1.0, True)):
        plan = SegmentPlan.from_counts(net, segments_from_velocities([1000.0], [[v]], net.dt_wq, 2000))
        sys_ = assemble_wq(net, closed_form_state(net, v), plan)
        labs = ["J1"] + [l for l in sys_.labels if l.startswith("P1#")] + ["TK1"]
        rep = gramian_metrics(sys_.A, sys_.B, 360, tol=EPS_RANK, C=sys_.selector(labs))
        assert rep.full_rank is full


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_gramian_identity(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 31))
    m = int(rng.integers(1, 4))
    N = int(rng.integers(1, 21))
    A = rng.normal(size=(n, n)) / np.sqrt(n)
    B = rng.normal(size=(n, m))
    W = gramian(A, B, N)
    C = ctrb_matrix(A, B, N)
    assert np.linalg.norm(W - C @ C.T) <= 1e-10 * (1 + np.linalg.norm(W))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_kalman_staircase(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 12))
    k = int(rng.integers(1, n))
    A, B = random_staircase(rng, n, int(rng.integers(1, 3)), k)
    kd = kalman_decompose(A, B)
    assert kd.k == k
    assert np.linalg.norm(kd.A21) <= 1e-10
    assert numeric_rank(ctrb_matrix(kd.A11, kd.B1, kd.k), 1e-10) == kd.k


# surrogate Gramian


def _ups(state):
    class U:
        flows = state.flows
        tank_heads = state.tank_heads
        demands = state.demands
    return U


def test_surrogate_zero_flow_keeps_only_input_term(three_node):
    net = three_node
    st_ = closed_form_state(net, 0.0, q_d=0.0)
    plan = SegmentPlan.uniform(net, 3)
    C = np.zeros((1, 7))
    C[0, 1] = 1.0
    W = approx_target_gramian(net, _ups(st_), plan, C, 20)
    assert W[0, 0] == pytest.approx(net.boosters()[0].flow ** 2, rel=1e-14)


def test_surrogate_equals_exact_at_reference(three_node):
    net = three_node
    st_ = closed_form_state(net, 0.6)
    plan = SegmentPlan.uniform(net, 3)
    sys_ = assemble_wq(net, st_, plan)
    C = target_selector(sys_.labels, ["J1", "P1#2", "TK1"])
    den = reference_denominators(net, st_.flows, st_.tank_heads, st_.demands)
    W_apx = approx_target_gramian(net, _ups(st_), plan, C, 30, den)
    W = target_gramian(sys_.A, sys_.B, 30, C)
    assert np.allclose(W_apx, W, rtol=1e-12, atol=1e-15)


def _cleared_symbolic(net, N):
    qM, qP, qD, V = sy.symbols("qM qP qD V", positive=True)
    dt = sy.Float(net.dt_wq, 30)
    kb = sy.Float(net.pipes[0].decay.k_b, 30)
    kt = sy.Float(net.tanks[0].bulk_decay, 30)
    qB = sy.Float(net.boosters()[0].flow, 30)
    lam = qP / sy.Float(net.pipes[0].area, 30) * dt / sy.Float(net.pipes[0].length / 3, 30)
    A = sy.zeros(7, 7)
    A[0, 0] = 1
    A[1, 3] = qM
    A[2, 2] = (1 - kt * dt) * V
    A[2, 6] = qP * dt
    A[3, 0] = 1
    for r in (4, 5, 6):
        A[r, r] = 1 - lam - kb * dt
        A[r, 1 if r == 4 else r - 1] = lam
    B = sy.zeros(7, 1)
    B[1, 0] = qB
    term, W = B, 0
    for _ in range(N):
        W += term[2, 0] ** 2
        term = (A * term).expand()
    return (qM, qP, qD, V), sy.expand(W)


def test_surrogate_polynomial_oracle(three_node):
    net = three_node
    N = 6
    syms, W_sym = _cleared_symbolic(net, N)
    poly = sy.Poly(W_sym, *syms)
    assert poly.total_degree() <= 4 * N
    plan = SegmentPlan.uniform(net, 3)
    C = np.zeros((1, 7))
    C[0, 2] = 1.0
    for v, scale in ((0.4, 1.0), (0.4, 1.7), (0.9, 0.5)):
        st_ = closed_form_state(net, v)
        st_.flows = st_.flows * scale
        st_.demands = st_.demands * scale
        vals = dict(zip(syms, (st_.flows[1], st_.flows[0], st_.demands[0],
                               net.tanks[0].volume(st_.tank_heads[0]))))
        expect = float(W_sym.subs(vals))
        got = approx_target_gramian(net, _ups(st_), plan, C, N)[0, 0]
        assert got == pytest.approx(expect, rel=1e-10)


def test_surrogate_direction_weights(three_node):
    net = three_node
    st_ = closed_form_state(net, 0.5)
    plan = SegmentPlan.uniform(net, 3)
    A_f, _ = poly_wq_matrices(net, st_.flows, st_.tank_heads, st_.demands, plan, {"P1": (1.0, 0.0)})
    A_h, _ = poly_wq_matrices(net, st_.flows, st_.tank_heads, st_.demands, plan, {"P1": (0.5, 0.5)})
    # equal weights cancel |q|, so the pipe carries nothing
    assert A_h.toarray()[6, 5] == 0.0 and A_f.toarray()[6, 5] > 0.0
