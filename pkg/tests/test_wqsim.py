import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse

from aquactrl.hydsim import HydraulicState, SegmentPlan, segments_from_velocities, simulate_hydraulics
from aquactrl.netmodel import DecayParams, with_changes
from aquactrl.wqsim import (WqError, assemble_wq, courant, initial_state, pipe_decay_rate, simulate_wq,
                            trace_csv, wq_step)

from conftest import closed_form_matrices, closed_form_state, random_network


def test_pipe_decay_rate_examples():
    assert pipe_decay_rate(DecayParams(k_b=0.3, k_w=0.0, k_f=2.0), 1.0) == 0.3
    assert pipe_decay_rate(DecayParams(k_b=0.0, k_w=1.0, k_f=1.0), 1.0) == 1.0
    assert pipe_decay_rate(DecayParams(0.0, 0.0, 0.0), 1.0) == 0.0


def test_courant_examples():
    assert courant(1.0, 10.0, 10.0) == (1.0, True)
    assert courant(0.0, 10.0, 10.0) == (0.0, False)
    lam, ok = courant(1.5, 10.0, 10.0)
    assert lam == pytest.approx(1.5) and not ok


def test_system_matches_closed_forms(three_node):
    for v in (0.3, 0.5, 1.0):
        state = closed_form_state(three_node, v)
        A, B = closed_form_matrices(three_node, state)
        sys_ = assemble_wq(three_node, state, SegmentPlan.uniform(three_node, 3))
        assert sys_.labels == ["R1", "J1", "TK1", "M1", "P1#1", "P1#2", "P1#3"]
        assert np.abs(sys_.dense() - A).max() <= 1e-12
        assert np.abs(sys_.B - B).max() <= 1e-12


def test_state_dimension(net1):
    plan = SegmentPlan.uniform(net1, 2)
    traj = simulate_hydraulics(net1, np.full((1, 1), 0.9), horizon=3600)
    sys_ = assemble_wq(net1, traj[0], plan, check_courant=False)
    n = net1.n_R + net1.n_J + net1.n_TK + 2 * net1.n_P + net1.n_M + len(net1.valves)
    assert sys_.n_x == n and np.all(np.isfinite(sys_.dense()))


def _zero_decay(net):
    pipes = tuple(dataclasses.replace(p, decay=DecayParams(0.0, 0.0, 0.0)) for p in net.pipes)
    tanks = tuple(dataclasses.replace(t, bulk_decay=0.0) for t in net.tanks)
    return with_changes(net, pipes=pipes, tanks=tanks)


def test_zero_flow_zero_decay_is_identity(three_node):
    net = _zero_decay(three_node)
    st_ = HydraulicState(0.0, np.array([912.0]), np.array([912.0]), np.zeros(2), np.zeros(1), np.zeros(1))
    sys_ = assemble_wq(net, st_, SegmentPlan.uniform(net, 4))
    assert np.array_equal(sys_.dense(), np.eye(sys_.n_x))


def test_unit_courant_is_pure_shift(three_node):
    net = _zero_decay(three_node)
    n_s = 10
    v = (net.pipes[0].length / n_s) / net.dt_wq
    sys_ = assemble_wq(net, closed_form_state(net, v), SegmentPlan.uniform(net, n_s))
    idx = sys_.index
    A = sys_.dense()
    for s in range(2, n_s + 1):
        row = A[idx[f"P1#{s}"]]
        assert row[idx[f"P1#{s - 1}"]] == pytest.approx(1.0, abs=1e-15)
        assert np.count_nonzero(np.abs(row) > 1e-15) == 1
    assert A[idx["P1#1"], idx["J1"]] == pytest.approx(1.0, abs=1e-15)


def test_courant_violation_raises(three_node):
    with pytest.raises(WqError, match="Courant"):
        assemble_wq(three_node, closed_form_state(three_node, 5.0), SegmentPlan.uniform(three_node, 100))


def test_wq_step_examples(three_node):
    st_ = closed_form_state(three_node, 0.5)
    sys_ = assemble_wq(three_node, st_, SegmentPlan.uniform(three_node, 3))
    x = np.zeros(sys_.n_x)
    out = wq_step(sys_, x, [2.0])
    assert np.array_equal(out, sys_.B[:, 0] * 2.0)
    ident = dataclasses.replace(sys_, A=sparse.identity(sys_.n_x, format="csr"))
    x = np.arange(sys_.n_x, dtype=float)
    assert np.array_equal(wq_step(ident, x, [0.0]), x)
    with pytest.raises(ValueError, match="dimension"):
        wq_step(sys_, np.zeros(3), [0.0])


def test_step_matches_symbolic(three_node):
    st_ = closed_form_state(three_node, 0.7)
    A, B = closed_form_matrices(three_node, st_)
    sys_ = assemble_wq(three_node, st_, SegmentPlan.uniform(three_node, 3))
    x = np.linspace(0.1, 1.3, 7)
    assert np.allclose(wq_step(sys_, x, [1.5]), A @ x + B[:, 0] * 1.5, rtol=0, atol=1e-13)


def test_tank_held_at_setpoint(three_node):
    # pick the tank inflow concentration that offsets decay exactly
    net = three_node
    st_ = closed_form_state(net, 0.5)
    sys_ = assemble_wq(net, st_, SegmentPlan.uniform(net, 3))
    i = sys_.index["TK1"]
    A = sys_.dense()
    c_star = 1.0
    c_in = (1 - A[i, i]) * c_star / A[i, sys_.index["P1#3"]]
    x = np.zeros(sys_.n_x)
    x[i] = c_star
    for _ in range(50):
        x[sys_.index["P1#3"]] = c_in
        x = wq_step(sys_, x, [0.0])
        assert x[i] == pytest.approx(c_star, rel=1e-13)


def test_plug_flow_advects_one_segment(three_node):
    net = _zero_decay(three_node)
    j = dataclasses.replace(net.junctions[0], demand_base=0.0)
    net = with_changes(net, junctions=(j,))
    n_s = 5
    v = (net.pipes[0].length / n_s) / net.dt_wq
    st_ = closed_form_state(net, v, q_d=0.0)
    sys_ = assemble_wq(net, st_, SegmentPlan.uniform(net, n_s))
    idx = sys_.index
    x = np.zeros(sys_.n_x)
    profile = np.array([5.0, 4.0, 3.0, 2.0, 1.0])
    for s in range(n_s):
        x[idx[f"P1#{s + 1}"]] = profile[s]
    x1 = wq_step(sys_, x, [0.0])
    got = np.array([x1[idx[f"P1#{s + 1}"]] for s in range(n_s)])
    assert np.allclose(got[1:], profile[:-1], atol=1e-14)


def test_day_has_8640_steps(three_node):
    traj = simulate_hydraulics(three_node, np.full((24, 1), 0.9))
    vel = [np.abs(s.pipe_velocity(three_node)) for s in traj]
    plan = SegmentPlan.from_counts(three_node, segments_from_velocities([1000.0], vel, three_node.dt_wq))
    tr = simulate_wq(three_node, traj, plan, np.zeros((8640, 1)), record_every=360)
    assert tr.inputs.shape == (8640, 1)
    assert tr.times[-1] == 86400.0 and len(tr.times) == 25
    text = trace_csv(tr, sensors_only=True)
    assert "t_s,sensor,mg_per_L" in text


def _random_case(seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng)
    traj = simulate_hydraulics(net, np.zeros((1, 0)))
    vel = np.abs(traj[0].pipe_velocity(net))
    plan = SegmentPlan.from_counts(net, segments_from_velocities([p.length for p in net.pipes], [vel],
                                                                 net.dt_wq, n_max=25))
    return rng, net, traj, plan


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_maximum_principle_without_injection(seed):
    rng, net, traj, plan = _random_case(seed)
    x0 = rng.uniform(0, 3, size=initial_state(net, plan).size)
    tr = simulate_wq(net, traj, plan, np.zeros((720, 1)), x0=x0)
    assert tr.states.min() >= 0.0
    assert tr.states.max() <= x0.max() + 1e-12


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_nonnegative_with_injection(seed):
    rng, net, traj, plan = _random_case(seed)
    u = rng.uniform(0, 5, size=(720, 1))
    tr = simulate_wq(net, traj, plan, u)
    assert tr.states.min() >= 0.0
