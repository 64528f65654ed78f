import dataclasses

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import bisect

from aquactrl.hydsim import (ClosedValveError, PumpOffError, SegmentPlan, advance_tanks, pipe_headloss,
                             pump_headgain, segments_from_velocities, simulate_hydraulics, size_segments,
                             solve_hydraulic_step, tank_net_inflow, trajectory_csv, valve_headloss)
from aquactrl.netmodel import Pump, demand_at_step, parse_network, with_changes

from conftest import two_reservoir_doc

REF_PUMP = Pump("M", "a", "b", shutoff_head=393.7, alpha=3.7e-6, nu=2.59)


def test_pipe_headloss_examples():
    assert pipe_headloss(0.0, 1.0) == 0.0
    assert pipe_headloss(1.0, 1.0, 1.852) == 1.0
    mpmath.mp.dps = 40
    exact = mpmath.mpf("0.5") * 2 * mpmath.power(2, mpmath.mpf("0.852"))
    assert pipe_headloss(2.0, 0.5, 1.852) == pytest.approx(float(exact), rel=1e-14)


def test_pump_headgain_examples():
    assert pump_headgain(0.0, 1.0, REF_PUMP) == pytest.approx(-393.7, abs=1e-12)
    with pytest.raises(PumpOffError, match="pump off"):
        pump_headgain(1.0, 0.0, REF_PUMP)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 1.0), st.floats(0.1, 1.0), st.floats(0.0, 1.0))
def test_pump_affinity_scaling(s1, s2, frac):
    ratio = frac * REF_PUMP.max_flow(1.0)
    g1 = pump_headgain(ratio * s1, s1, REF_PUMP)
    g2 = pump_headgain(ratio * s2, s2, REF_PUMP)
    assert g1 / s1 ** 2 == pytest.approx(g2 / s2 ** 2, rel=1e-10, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 1.0), st.floats(0.0, 1.0))
def test_pump_gain_nonpositive(s, frac):
    assert pump_headgain(frac * REF_PUMP.max_flow(s), s, REF_PUMP) <= 1e-9


def test_valve_headloss_examples():
    assert valve_headloss(0.0, 2.0) == 0.0
    assert valve_headloss(3.0, 2.0) == 18.0
    assert valve_headloss(-3.0, 2.0) == -18.0
    with pytest.raises(ClosedValveError):
        valve_headloss(1.0, 2.0, is_open=False)


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 50), st.floats(0.01, 100), st.floats(1.1, 2.5))
def test_head_laws_odd(qv, r, mu):
    assert pipe_headloss(-qv, r, mu) == pytest.approx(-pipe_headloss(qv, r, mu), rel=1e-12, abs=1e-300)
    assert valve_headloss(-qv, r) == pytest.approx(-valve_headloss(qv, r), rel=1e-12, abs=1e-300)


def test_two_reservoirs_analytic():
    net = parse_network(two_reservoir_doc(110.0, 100.0, 10.0))
    st_ = solve_hydraulic_step(net, [], [], [])
    assert st_.flows[0] == pytest.approx((10.0 / 10.0) ** (1 / 1.852), abs=1e-8)
    net = parse_network(two_reservoir_doc(130.0, 100.0, 10.0))
    st_ = solve_hydraulic_step(net, [], [], [])
    assert st_.flows[0] == pytest.approx(3.0 ** (1 / 1.852), rel=1e-9)


def test_idle_network_flows_zero(three_node):
    net = three_node
    st_ = solve_hydraulic_step(net, [0.0], np.zeros(net.n_J), [912.0])
    assert np.all(st_.flows == 0.0)
    # J1 connects only to TK1 when the pump is off
    assert st_.junction_heads[0] == pytest.approx(912.0, abs=1e-8)


def test_three_node_bisection_oracle(three_node):
    net = three_node
    pump, pipe = net.pumps[0], net.pipes[0]
    d = demand_at_step(net, 0)[0]
    w = 912.0
    h_r = net.reservoirs[0].head

    def balance(qp):
        qm = qp + d
        return h_r + pump.shutoff_head - pump.alpha * qm ** pump.nu - pipe.resistance * qp * abs(qp) ** 0.852 - w

    q_oracle = bisect(balance, -d + 1e-12, pump.max_flow(), xtol=1e-14, maxiter=500)
    st_ = solve_hydraulic_step(net, [1.0], [d], [w])
    lidx = net.link_index()
    assert st_.flows[lidx["P1"]] == pytest.approx(q_oracle, abs=1e-8)
    assert st_.flows[lidx["M1"]] == pytest.approx(q_oracle + d, abs=1e-8)


def _junction_residual(net, st_):
    res = -np.asarray(st_.demands, dtype=float).copy()
    jidx = net.junction_index()
    for q_l, link in zip(st_.flows, net.links):
        if link.end in jidx:
            res[jidx[link.end]] += q_l
        if link.start in jidx:
            res[jidx[link.start]] -= q_l
    return res


def _head_residual(net, st_):
    worst = 0.0
    for q_l, link in zip(st_.flows, net.links):
        dh = st_.head(net, link.start) - st_.head(net, link.end)
        if link in net.pipes:
            worst = max(worst, abs(dh - pipe_headloss(q_l, link.resistance, link.exponent)))
        elif link in net.pumps:
            s = st_.speeds[net.pumps.index(link)]
            if s > 0 and q_l > 0:
                worst = max(worst, abs(dh - pump_headgain(q_l, s, link)))
    return worst


def test_net1_mass_and_head_residuals(net1):
    traj = simulate_hydraulics(net1, np.full((6, 1), 0.9), horizon=6 * 3600)
    for st_ in traj:
        assert np.max(np.abs(_junction_residual(net1, st_))) <= 1e-8
        assert _head_residual(net1, st_) <= 1e-8


def test_off_pump_carries_no_flow(net1):
    traj = simulate_hydraulics(net1, np.zeros((2, 1)), horizon=2 * 3600)
    m = net1.link_index()[net1.pumps[0].id]
    assert all(st_.flows[m] == 0.0 for st_ in traj)


def test_advance_tanks_examples(three_node):
    net = three_node
    st_ = solve_hydraulic_step(net, [0.0], np.zeros(1), [912.0])
    heads, flags = advance_tanks(net, st_)
    assert heads[0] == 912.0 and flags == []
    tk = dataclasses.replace(net.tanks[0], area=100.0)
    small = with_changes(net, tanks=(tk,))
    st_ = dataclasses.replace(st_, flows=np.array([1.0, 1.0]))
    heads, _ = advance_tanks(small, st_)
    assert heads[0] - 912.0 == pytest.approx(36.0, abs=1e-12)


def test_draining_tank_at_minimum_flagged(three_node):
    net = three_node
    tk = net.tanks[0]
    d = demand_at_step(net, 0)
    st_ = solve_hydraulic_step(net, [0.0], d, [tk.h_min])
    _, flags = advance_tanks(net, st_)
    assert any("TK1" in f for f in flags)


def test_tank_volume_bookkeeping(three_node):
    net = three_node
    traj = simulate_hydraulics(net, np.full((4, 1), 0.9), horizon=4 * 3600)
    tk = net.tanks[0]
    for a, b in zip(traj.states, traj.states[1:]):
        dv = tk.volume(b.tank_heads[0]) - tk.volume(a.tank_heads[0])
        expect = net.dt_hydraulic * tank_net_inflow(net, a)[0]
        assert dv == pytest.approx(expect, rel=1e-10, abs=1e-10)


def test_constant_idle_trajectory(three_node):
    j = dataclasses.replace(three_node.junctions[0], demand_base=0.0)
    net = with_changes(three_node, junctions=(j,))
    traj = simulate_hydraulics(net, np.zeros((5, 1)), horizon=5 * 3600)
    assert all(np.array_equal(s.tank_heads, traj[0].tank_heads) for s in traj)


def test_three_node_day_has_24_states(three_node):
    traj = simulate_hydraulics(three_node, np.full((24, 1), 0.9))
    assert len(traj) == 24


def test_filling_tank_head_monotone(three_node):
    traj = simulate_hydraulics(three_node, np.full((5, 1), 1.0), horizon=5 * 3600)
    heads = [s.tank_heads[0] for s in traj]
    flows = [s.flows[three_node.link_index()["P1"]] for s in traj]
    assert all(f > 0 for f in flows)
    assert all(b > a for a, b in zip(heads, heads[1:]))


def test_schedule_length_checked(three_node):
    with pytest.raises(ValueError):
        simulate_hydraulics(three_node, np.zeros((3, 1)), horizon=5 * 3600)


def test_trajectory_csv_columns(three_node):
    traj = simulate_hydraulics(three_node, np.zeros((2, 1)), horizon=2 * 3600)
    lines = [l for l in trajectory_csv(three_node, traj).splitlines() if not l.startswith("#")]
    assert lines[0].split(",")[:2] == ["t_s", "head:R1"]
    assert "speed:M1" in lines[0] and len(lines) == 3


def test_segment_sizing_examples():
    assert segments_from_velocities([1000.0], [[1.0]], 10.0) == [100]
    assert segments_from_velocities([1000.0], [[1.0], [2.0]], 10.0) == [50]
    assert segments_from_velocities([1000.0], [[0.0]], 10.0, n_max=200) == [200]


def test_size_segments_courant_bound(net1):
    plan, vel = size_segments(net1, 20, seed=3, return_velocities=True)
    dx = np.array(plan.dx)
    lam = np.abs(np.asarray(vel)) * net1.dt_wq / dx[None, :]
    assert lam.max() <= 1.0 + 1e-12
    assert isinstance(plan, SegmentPlan) and min(plan.counts) >= 1


def test_size_segments_rejects_zero():
    with pytest.raises(ValueError):
        size_segments(None, 0)
