"""Linear chlorine transport model built from a solved hydraulic step.

The state vector stacks, in order, reservoirs, junctions, tanks, pumps,
valves and pipe segments. Pipe segments are numbered from the pipe's start
node. The matrices are held constant over all water-quality steps of one
hydraulic step.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .hydsim import HydraulicState, HydraulicTrajectory, SegmentPlan
from .netmodel import DecayParams, Network, Pipe, Pump, Valve
from ._io import csv_text


class WqError(ValueError):
    """Assembly failure (unstable Courant number, missing state)."""


def pipe_decay_rate(d: DecayParams, r_P: float) -> float:
    """Pipe decay rate ``k_b + 2 k_w k_f / (r_P (k_w + k_f))`` in 1/s."""
    if d.k_w + d.k_f == 0:
        return d.k_b
    return d.k_b + 2.0 * d.k_w * d.k_f / (r_P * (d.k_w + d.k_f))


def courant(v: float, dt: float, dx: float) -> tuple[float, bool]:
    """Courant number ``v dt / dx`` and whether ``0 < lambda <= 1``."""
    lam = abs(v) * dt / dx
    return lam, bool(0.0 < lam <= 1.0 + 1e-12)


@dataclass
class WqSystem:
    """Time-invariant (within one hydraulic step) system ``x' = A x + B u``, ``y = C x``."""

    A: sp.csr_matrix
    B: np.ndarray
    C: np.ndarray
    labels: list
    dt: float
    step: int = 0
    flags: list = field(default_factory=list)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def index(self) -> dict:
        return {lab: i for i, lab in enumerate(self.labels)}

    def dense(self) -> np.ndarray:
        return self.A.toarray()

    def selector(self, labels: Sequence[str]) -> np.ndarray:
        """0/1 matrix picking the given state labels."""
        idx = self.index
        S = np.zeros((len(labels), self.n_x))
        for r, lab in enumerate(labels):
            if lab not in idx:
                raise KeyError(f"unknown state label '{lab}'")
            S[r, idx[lab]] = 1.0
        return S


def state_labels(net: Network, plan: SegmentPlan) -> list:
    labels = [r.id for r in net.reservoirs] + [j.id for j in net.junctions] + [t.id for t in net.tanks]
    labels += [m.id for m in net.pumps] + [v.id for v in net.valves]
    for p, n in zip(net.pipes, plan.counts):
        labels += [f"{p.id}#{k + 1}" for k in range(n)]
    return labels


def _node_state_index(net: Network) -> dict:
    out = {}
    k = 0
    for n in net.reservoirs + net.junctions + net.tanks:
        out[n.id] = k
        k += 1
    return out


def assemble_wq(net: Network, state: HydraulicState, plan: SegmentPlan, boosters=None, sensors=None,
                dt: float | None = None, check_courant: bool = True) -> WqSystem:
    """Assemble ``A``, ``B``, ``C`` for one hydraulic step.

    Parameters
    ----------
    net : Network
    state : HydraulicState
        Solved hydraulics; flows and tank heads are frozen over the step.
    plan : SegmentPlan
        Segment counts per pipe.
    boosters : list of Booster, optional
        Defaults to the network's boosters. Input ``u_i`` is the injected
        concentration of booster ``i``.
    sensors : list of str, optional
        Node ids observed by ``C``; defaults to the network's sensors.
    dt : float, optional
        Water-quality step, defaults to ``net.dt_wq``.

    Returns
    -------
    WqSystem

    Raises
    ------
    WqError
        If a pipe's Courant number exceeds one.
    """
    if state is None or state.flows is None:
        raise WqError("unsolved hydraulic state")
    dt = net.dt_wq if dt is None else dt
    boosters = net.boosters() if boosters is None else list(boosters)
    sensors = net.sensors() if sensors is None else list(sensors)
    labels = state_labels(net, plan)
    n = len(labels)
    node_idx = _node_state_index(net)
    n_nodes = len(node_idx)
    link_state = {}
    k = n_nodes
    for link in net.pumps + net.valves:
        link_state[link.id] = k
        k += 1
    seg_start = {}
    for p, ns in zip(net.pipes, plan.counts):
        seg_start[p.id] = k
        k += ns
    assert k == n

    flows = state.flows
    lidx = net.link_index()
    rows, cols, vals = [], [], []
    flags = []

    def put(i, j, v):
        if v != 0.0:
            rows.append(i)
            cols.append(j)
            vals.append(v)

    # inflow / outflow bookkeeping per node: (state index delivering water, flow)
    inflow = {nid: [] for nid in node_idx}
    outflow = {nid: 0.0 for nid in node_idx}
    for link in net.links:
        q = flows[lidx[link.id]]
        if q == 0.0:
            continue
        up, down = (link.start, link.end) if q > 0 else (link.end, link.start)
        if isinstance(link, Pipe):
            first = seg_start[link.id]
            ns = plan.counts[net.pipes.index(link)]
            src = first + ns - 1 if q > 0 else first
        else:
            src = link_state[link.id]
        inflow[down].append((src, abs(q)))
        outflow[up] += abs(q)

    # reservoirs
    for r in net.reservoirs:
        i = node_idx[r.id]
        put(i, i, 1.0)

    B = np.zeros((n, len(boosters)))
    booster_col = {b.node: c for c, b in enumerate(boosters)}

    # junctions: flow-weighted mixing
    for jn, d in zip(net.junctions, state.demands):
        i = node_idx[jn.id]
        denom = d + outflow[jn.id]
        if denom <= 0.0:
            put(i, i, 1.0)
            continue
        for src, q in inflow[jn.id]:
            put(i, src, q / denom)
        if jn.id in booster_col:
            b = boosters[booster_col[jn.id]]
            B[i, booster_col[jn.id]] = b.flow / denom

    # tanks: volume-weighted mass balance with bulk decay
    for t_i, tk in enumerate(net.tanks):
        i = node_idx[tk.id]
        V = tk.volume(state.tank_heads[t_i])
        q_in = sum(q for _, q in inflow[tk.id])
        q_out = outflow[tk.id]
        V_next = V + dt * (q_in - q_out)
        if V_next <= 1e-9:
            flags.append(f"tank {tk.id} empty")
            if q_in > 0:
                for src, q in inflow[tk.id]:
                    put(i, src, q / q_in)
            else:
                put(i, i, 1.0)
            continue
        put(i, i, ((1.0 - tk.bulk_decay * dt) * V - q_out * dt) / V_next)
        for src, q in inflow[tk.id]:
            put(i, src, q * dt / V_next)
        if tk.id in booster_col:
            b = boosters[booster_col[tk.id]]
            B[i, booster_col[tk.id]] = b.volume / V_next

    # pumps and valves copy their upstream node
    for link in net.pumps + net.valves:
        i = link_state[link.id]
        q = flows[lidx[link.id]]
        if q > 0:
            put(i, node_idx[link.start], 1.0)
        elif q < 0:
            put(i, node_idx[link.end], 1.0)
        else:
            put(i, i, 1.0)

    # pipe segments: explicit upwind
    for p_i, (p, ns) in enumerate(zip(net.pipes, plan.counts)):
        q = flows[lidx[p.id]]
        kp = pipe_decay_rate(p.decay, p.radius)
        dx = p.length / ns
        lam = abs(q) / p.area * dt / dx
        if check_courant and lam > 1.0 + 1e-12:
            raise WqError(f"unstable Courant number {lam:.4g} in pipe {p.id}")
        if lam + kp * dt > 1.0 + 1e-12:
            flags.append(f"pipe {p.id}: lambda + k dt exceeds one")
        first = seg_start[p.id]
        diag = 1.0 - lam - kp * dt
        for s in range(ns):
            i = first + s
            put(i, i, diag)
            if lam == 0.0:
                continue
            if q > 0:
                up = node_idx[p.start] if s == 0 else i - 1
            else:
                up = node_idx[p.end] if s == ns - 1 else i + 1
            put(i, up, lam)

    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    C = np.zeros((len(sensors), n))
    for r, sid in enumerate(sensors):
        C[r, node_idx[sid]] = 1.0
    return WqSystem(A=A, B=B, C=C, labels=labels, dt=dt, step=state.step, flags=flags)


def wq_step(sys: WqSystem, x, u) -> np.ndarray:
    """One water-quality step ``A x + B u``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.shape != (sys.n_x,):
        raise ValueError(f"dimension mismatch: x has shape {x.shape}, expected ({sys.n_x},)")
    if u.shape != (sys.n_u,):
        raise ValueError(f"dimension mismatch: u has shape {u.shape}, expected ({sys.n_u},)")
    return sys.A @ x + sys.B @ u


@dataclass
class WqTrace:
    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    labels: list
    sensors: list
    inputs: np.ndarray | None = None


def initial_state(net: Network, plan: SegmentPlan) -> np.ndarray:
    """Initial concentrations from node settings; links start at zero."""
    x = np.zeros(len(state_labels(net, plan)))
    for i, n in enumerate(net.reservoirs + net.junctions + net.tanks):
        x[i] = n.concentration
    return x


def simulate_wq(net: Network, hyd: HydraulicTrajectory, plan: SegmentPlan, u, x0=None,
                record_every: int = 1, boosters=None, sensors=None) -> WqTrace:
    """Iterate the water-quality model across a hydraulic trajectory.

    Parameters
    ----------
    u : ndarray of shape (n_wq_steps, n_u), or callable ``u(k, t, x) -> ndarray``
        Booster concentrations for every water-quality step.
    x0 : ndarray, optional
        Initial state, defaults to :func:`initial_state`.
    record_every : int
        Keep every ``record_every``-th state (the initial state is always kept).
    """
    per = net.wq_steps_per_hydraulic
    total = per * len(hyd)
    x = initial_state(net, plan) if x0 is None else np.array(x0, dtype=float)
    times, xs, ys, us = [0.0], [x.copy()], [], []
    sys = None
    for h, st in enumerate(hyd):
        sys = assemble_wq(net, st, plan, boosters, sensors)
        if h == 0:
            ys.append(sys.C @ x)
        for j in range(per):
            k = h * per + j
            uk = u(k, k * net.dt_wq, x) if callable(u) else np.asarray(u)[k]
            uk = np.asarray(uk, dtype=float).reshape(sys.n_u)
            x = wq_step(sys, x, uk)
            us.append(uk)
            if (k + 1) % record_every == 0 or k + 1 == total:
                times.append((k + 1) * net.dt_wq)
                xs.append(x.copy())
                ys.append(sys.C @ x)
    labels = sys.labels if sys is not None else state_labels(net, plan)
    sens = net.sensors() if sensors is None else list(sensors)
    return WqTrace(np.array(times), np.array(xs), np.array(ys), labels, sens, np.array(us))


def trace_csv(trace: WqTrace, config=None, sensors_only: bool = False) -> str:
    """Long-format CSV ``t_s, state, mg_per_L`` (or ``t_s, sensor, mg_per_L``)."""
    rows = []
    if sensors_only:
        for t, y in zip(trace.times, trace.outputs):
            for sid, v in zip(trace.sensors, y):
                rows.append((float(t), sid, float(v)))
        return csv_text(["t_s", "sensor", "mg_per_L"], rows, config)
    for t, x in zip(trace.times, trace.states):
        for lab, v in zip(trace.labels, x):
            rows.append((float(t), lab, float(v)))
    return csv_text(["t_s", "state", "mg_per_L"], rows, config)
