"""Steady-state hydraulics per step, tank advancement and segment sizing.

Sign conventions: every link carries positive flow from its ``start`` node to
its ``end`` node and its head relation reads ``h_start - h_end = f(q)``. For a
pump ``f`` is the (nonpositive) head gain of :func:`pump_headgain`.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .netmodel import Network, Pipe, Pump, Valve, demand_at_step
from ._io import csv_text

log = logging.getLogger(__name__)

Q_EPS = 1e-10  # flows below this are treated as zero in Jacobians


class HydraulicError(RuntimeError):
    """Raised when a hydraulic step cannot be solved."""


class PumpOffError(ValueError):
    """Pump gain requested at zero speed."""


class ClosedValveError(ValueError):
    """Head loss requested for a closed valve."""


# ---------------------------------------------------------------------------
# component laws


def pipe_headloss(q, r: float, mu: float = 1.852):
    """Hazen-Williams style head loss ``r q |q|^(mu-1)``.

    Parameters
    ----------
    q : float or ndarray
        Flow (ft^3/s), positive from start to end node.
    r : float
        Resistance coefficient.
    mu : float
        Flow exponent, 1.852 for Hazen-Williams.

    Returns
    -------
    float or ndarray
        ``h_start - h_end`` in ft.
    """
    q = np.asarray(q, dtype=float)
    out = r * q * np.abs(q) ** (mu - 1.0)
    return out if out.ndim else float(out)


def pump_headgain(q, s: float, pump: Pump):
    """Head relation of a running pump, ``-s^2 (h0 - alpha (q/s)^nu)``.

    The returned value is ``h_start - h_end`` and is nonpositive on the
    operating domain ``0 <= q <= s (h0/alpha)^(1/nu)``.

    Raises
    ------
    PumpOffError
        If ``s == 0``; the law contains ``1/s`` and the caller must branch on
        the pump being off.
    """
    if s <= 0:
        raise PumpOffError("pump off - gain undefined; caller must branch")
    q = np.asarray(q, dtype=float)
    out = -(s ** 2) * (pump.shutoff_head - pump.alpha * (np.abs(q) / s) ** pump.nu)
    return out if out.ndim else float(out)


def valve_headloss(q, m: float, is_open: bool = True):
    """Minor-loss law ``m q |q|`` of an open valve.

    Raises
    ------
    ClosedValveError
        A closed valve decouples its endpoints and has no flow equation.
    """
    if not is_open:
        raise ClosedValveError("decoupled endpoints - no flow equation")
    q = np.asarray(q, dtype=float)
    out = m * q * np.abs(q)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# states


@dataclass
class HydraulicState:
    """Solved heads, flows and speeds of one hydraulic step."""

    t: float
    tank_heads: np.ndarray
    junction_heads: np.ndarray
    flows: np.ndarray
    speeds: np.ndarray
    demands: np.ndarray
    step: int = 0
    iterations: int = 0
    flags: list = field(default_factory=list)

    def link_flow(self, net: Network, link_id: str) -> float:
        return float(self.flows[net.link_index()[link_id]])

    def head(self, net: Network, node_id: str) -> float:
        kind = net.node_kind(node_id)
        if kind == "J":
            return float(self.junction_heads[net.junction_index()[node_id]])
        if kind == "TK":
            return float(self.tank_heads[net.tank_index()[node_id]])
        return next(r.head for r in net.reservoirs if r.id == node_id)

    def pipe_velocity(self, net: Network) -> np.ndarray:
        """Mean velocity (ft/s) in each pipe, signed by flow direction."""
        return np.array([self.flows[i] / p.area for i, p in enumerate(net.pipes)])


@dataclass
class HydraulicTrajectory:
    states: list

    def __len__(self):
        return len(self.states)

    def __getitem__(self, k):
        return self.states[k]

    def __iter__(self):
        return iter(self.states)


@dataclass(frozen=True)
class SegmentPlan:
    """Number of upwind segments per pipe, in pipe order."""

    counts: tuple
    lengths: tuple

    @property
    def dx(self) -> tuple:
        return tuple(L / n for L, n in zip(self.lengths, self.counts))

    @classmethod
    def uniform(cls, net: Network, n: int) -> "SegmentPlan":
        return cls(tuple(int(n) for _ in net.pipes), tuple(p.length for p in net.pipes))

    @classmethod
    def from_counts(cls, net: Network, counts) -> "SegmentPlan":
        counts = tuple(int(c) for c in counts)
        if len(counts) != net.n_P or min(counts, default=1) < 1:
            raise ValueError("segment counts must be >= 1, one per pipe")
        return cls(counts, tuple(p.length for p in net.pipes))


# ---------------------------------------------------------------------------
# per-step solve


def _link_law(link, q: float, speed: float | None):
    """Return (f(q), f'(q)) for an active link."""
    aq = abs(q)
    if isinstance(link, Pipe):
        f = link.resistance * q * aq ** (link.exponent - 1)
        df = link.exponent * link.resistance * max(aq, Q_EPS) ** (link.exponent - 1)
    elif isinstance(link, Valve):
        m = max(link.minor_loss, 1e-6)
        f = m * q * aq
        df = 2 * m * max(aq, Q_EPS)
    else:
        s = speed
        c = link.alpha * s ** (2 - link.nu)
        f = -(s ** 2) * link.shutoff_head + c * q * aq ** (link.nu - 1)
        df = link.nu * c * max(aq, Q_EPS) ** (link.nu - 1)
    return f, max(df, 1e-12)


def solve_hydraulic_step(net: Network, speeds, demands, tank_heads, step: int = 0,
                         tol: float = 1e-8, max_iter: int = 50, t: float | None = None) -> HydraulicState:
    """Solve junction mass balance and link head laws for one hydraulic step.

    Newton iteration on junction heads with link flows eliminated through the
    Schur complement of the (flow, head) Jacobian. Steps are halved while the
    residual grows. Off pumps and closed valves carry no flow; a running pump
    whose required lift exceeds its shutoff head is shut by its check valve.

    Parameters
    ----------
    net : Network
    speeds : array_like
        Relative pump speeds, one per pump, within ``[0, s_max]``.
    demands : array_like
        Junction demands (ft^3/s).
    tank_heads : array_like
        Tank heads (ft), held fixed during the step.
    step : int
        Hydraulic step index, used for valve schedules.

    Returns
    -------
    HydraulicState

    Raises
    ------
    HydraulicError
        ``"no convergence"`` or ``"disconnected demand node"``.
    """
    speeds = np.asarray(speeds, dtype=float).reshape(net.n_M)
    demands = np.asarray(demands, dtype=float).reshape(net.n_J)
    tank_heads = np.asarray(tank_heads, dtype=float).reshape(net.n_TK)
    for m, s in zip(net.pumps, speeds):
        if s < -1e-12 or s > m.s_max + 1e-12:
            raise ValueError(f"pump {m.id}: speed {s} outside [0, {m.s_max}]")

    jidx = net.junction_index()
    fixed = {r.id: r.head for r in net.reservoirs}
    for i, tk in enumerate(net.tanks):
        fixed[tk.id] = tank_heads[i]
    links = net.links
    nL = len(links)
    pump_offset = net.n_P

    active = np.ones(nL, dtype=bool)
    for i, m in enumerate(net.pumps):
        if speeds[i] <= 0:
            active[pump_offset + i] = False
    for i, v in enumerate(net.valves):
        if not v.is_open(step):
            active[pump_offset + net.n_M + i] = False

    flows = np.zeros(nL)
    heads = np.array([j.elevation for j in net.junctions], dtype=float)
    total_iter = 0
    for _status_round in range(2 * net.n_M + 2):
        heads, flows, it, floating = _newton(net, links, active, speeds, demands, fixed, jidx,
                                             heads, tol, max_iter)
        total_iter += it
        changed = False
        for i, m in enumerate(net.pumps):
            li = pump_offset + i
            if speeds[i] <= 0:
                continue
            h_s = heads[jidx[m.start]] if m.start in jidx else fixed[m.start]
            h_e = heads[jidx[m.end]] if m.end in jidx else fixed[m.end]
            lift = h_e - h_s
            if active[li] and flows[li] < -tol:
                active[li] = False
                changed = True
            elif not active[li] and lift < speeds[i] ** 2 * m.shutoff_head - tol:
                active[li] = True
                changed = True
        if not changed:
            break
    flows[~active] = 0.0
    flows[np.abs(flows) < 1e-14] = 0.0
    flags = []
    if floating:
        flags.append("floating junctions set to elevation: " + ",".join(floating))
    return HydraulicState(
        t=float(step * net.dt_hydraulic if t is None else t),
        tank_heads=tank_heads.copy(),
        junction_heads=heads,
        flows=flows,
        speeds=speeds.copy(),
        demands=demands.copy(),
        step=step,
        iterations=total_iter,
        flags=flags,
    )


def _components(net, links, active, jidx):
    """Label junction components reachable through active links; find which touch a fixed head."""
    parent = list(range(net.n_J))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    anchored = set()
    anchored_nodes = []
    for li, link in enumerate(links):
        if not active[li]:
            continue
        a, b = link.start, link.end
        if a in jidx and b in jidx:
            ra, rb = find(jidx[a]), find(jidx[b])
            if ra != rb:
                parent[ra] = rb
        elif a in jidx:
            anchored_nodes.append(jidx[a])
        elif b in jidx:
            anchored_nodes.append(jidx[b])
    for n in anchored_nodes:
        anchored.add(find(n))
    return [find(i) in anchored for i in range(net.n_J)]


def _newton(net, links, active, speeds, demands, fixed, jidx, heads0, tol, max_iter):
    nJ = net.n_J
    nL = len(links)
    is_anchored = np.array(_components(net, links, active, jidx), dtype=bool)
    floating = []
    for i, j in enumerate(net.junctions):
        if not is_anchored[i]:
            if demands[i] > 0:
                raise HydraulicError(f"disconnected demand node {j.id}")
            floating.append(j.id)
    live = np.array([active[li] and (
        (links[li].start not in jidx or is_anchored[jidx[links[li].start]]) and
        (links[li].end not in jidx or is_anchored[jidx[links[li].end]])) for li in range(nL)], dtype=bool)
    unk = np.flatnonzero(is_anchored)
    pos = {j: k for k, j in enumerate(unk)}
    nu = len(unk)

    # incidence: dh_link = h_start - h_end = Ainc @ h_unk + h_fixed_part
    Ainc = np.zeros((nL, nu))
    hfix = np.zeros(nL)
    speed_of = {}
    for li, link in enumerate(links):
        if isinstance(link, Pump):
            speed_of[li] = speeds[li - net.n_P]
        if not live[li]:
            continue
        for node, sgn in ((link.start, 1.0), (link.end, -1.0)):
            if node in jidx:
                Ainc[li, pos[jidx[node]]] += sgn
            else:
                hfix[li] += sgn * fixed[node]

    heads = np.array(heads0, dtype=float)
    for i, j in enumerate(net.junctions):
        if not is_anchored[i]:
            heads[i] = j.elevation
    # flow initial guess: 1 ft/s in pipes, mid-curve for pumps
    q = np.zeros(nL)
    for li, link in enumerate(links):
        if not live[li]:
            continue
        if isinstance(link, Pipe):
            q[li] = link.area
        elif isinstance(link, Pump):
            q[li] = 0.5 * link.max_flow(speed_of[li])
        else:
            q[li] = 0.1
    d = demands[unk]
    L = np.flatnonzero(live)
    A = Ainc[L]

    def residual(qv, h):
        f = np.array([_link_law(links[li], qv[li], speed_of.get(li))[0] for li in L])
        e = f - (A @ h + hfix[L])
        mres = A.T @ qv[L] + d
        return e, mres

    h = heads[unk].copy()
    # start from a head field consistent with fixed heads
    if len(fixed):
        h[:] = np.mean(list(fixed.values()))
    if L.size == 0:
        return heads, np.zeros(nL), 0, floating
    e, mres = residual(q, h)
    err = max(np.max(np.abs(e), initial=0.0), np.max(np.abs(mres), initial=0.0))
    for it in range(1, max_iter + 1):
        D = np.array([_link_law(links[li], q[li], speed_of.get(li))[1] for li in L])
        Dinv = 1.0 / D
        S = A.T @ (Dinv[:, None] * A)
        rhs = A.T @ (Dinv * e) - mres
        if nu == 0:
            dh = np.zeros(0)  # only links between fixed heads
        else:
            try:
                dh = np.linalg.solve(S, rhs)
            except np.linalg.LinAlgError:
                dh = np.linalg.lstsq(S, rhs, rcond=None)[0]
        dq = Dinv * (A @ dh - e)
        step = 1.0
        while True:
            qn = q.copy()
            qn[L] = q[L] + step * dq
            hn = h + step * dh
            en, mn = residual(qn, hn)
            errn = max(np.max(np.abs(en), initial=0.0), np.max(np.abs(mn), initial=0.0))
            if errn <= err or step < 1e-4:
                break
            step *= 0.5
        q, h, e, mres, err = qn, hn, en, mn, errn
        if err <= tol:
            heads[unk] = h
            return heads, q, it, floating
    raise HydraulicError(f"no convergence after {max_iter} iterations (residual {err:.3e})")


# ---------------------------------------------------------------------------
# tanks and trajectories


def tank_net_inflow(net: Network, state: HydraulicState) -> np.ndarray:
    """Net inflow (ft^3/s) into each tank."""
    tidx = net.tank_index()
    out = np.zeros(net.n_TK)
    for li, link in enumerate(net.links):
        q = state.flows[li]
        if link.end in tidx:
            out[tidx[link.end]] += q
        if link.start in tidx:
            out[tidx[link.start]] -= q
    return out


def advance_tanks(net: Network, state: HydraulicState, dt: float | None = None):
    """Tank heads after one hydraulic step.

    Returns
    -------
    heads : ndarray
        ``w + dt/A * (inflow - outflow)``.
    flags : list of str
        Tanks leaving ``[h_min, h_max]``; the caller decides how to react.
    """
    dt = net.dt_hydraulic if dt is None else dt
    inflow = tank_net_inflow(net, state)
    heads = state.tank_heads.copy()
    flags = []
    for i, tk in enumerate(net.tanks):
        heads[i] = heads[i] + dt / tk.area * inflow[i]
        if heads[i] < tk.h_min - 1e-9:
            flags.append(f"tank {tk.id} below minimum head")
        elif heads[i] > tk.h_max + 1e-9:
            flags.append(f"tank {tk.id} above maximum head")
        elif inflow[i] < 0 and heads[i] <= tk.h_min + 1e-9:
            flags.append(f"tank {tk.id} at minimum head while draining")
    return heads, flags


def simulate_hydraulics(net: Network, schedule, horizon: float | None = None, **solve_kw) -> HydraulicTrajectory:
    """Chain per-step solves through the tank update.

    Parameters
    ----------
    schedule : array_like, shape (n_steps, n_M)
        Pump speeds per hydraulic step.
    horizon : float, optional
        Defaults to ``net.horizon``.
    """
    horizon = net.horizon if horizon is None else horizon
    n_steps = int(round(horizon / net.dt_hydraulic))
    sched = np.asarray(schedule, dtype=float).reshape(-1, net.n_M) if net.n_M else np.zeros((n_steps, 0))
    if sched.shape[0] != n_steps:
        raise ValueError(f"schedule has {sched.shape[0]} steps, horizon needs {n_steps}")
    w = np.array([t.h_init for t in net.tanks], dtype=float)
    states = []
    for k in range(n_steps):
        try:
            st = solve_hydraulic_step(net, sched[k], demand_at_step(net, k), w, step=k, **solve_kw)
        except HydraulicError as exc:
            raise HydraulicError(f"step {k}: {exc}") from exc
        w, flags = advance_tanks(net, st)
        st.flags.extend(flags)
        states.append(st)
    return HydraulicTrajectory(states)


def trajectory_csv(net: Network, traj: HydraulicTrajectory, config=None) -> str:
    """CSV with columns ``t_s, head:<node>, flow:<link>, speed:<pump>``."""
    header = ["t_s"]
    header += [f"head:{n.id}" for n in net.nodes]
    header += [f"flow:{l.id}" for l in net.links]
    header += [f"speed:{m.id}" for m in net.pumps]
    rows = []
    for st in traj:
        row = [st.t]
        row += [r.head for r in net.reservoirs]
        row += list(map(float, st.junction_heads)) + list(map(float, st.tank_heads))
        row += list(map(float, st.flows)) + list(map(float, st.speeds))
        rows.append(row)
    return csv_text(header, rows, config)


# ---------------------------------------------------------------------------
# segment sizing


def segments_from_velocities(lengths, velocities, dt: float, n_max: int = 200) -> list[int]:
    """Segment count per scenario: ``max(1, floor(L/(v dt)))`` capped at ``n_max``.

    Parameters
    ----------
    lengths : array_like, shape (n_P,)
    velocities : array_like, shape (n_scenarios, n_P)
        Velocity magnitudes; zero means the cap applies.

    Returns
    -------
    list of int
        Minimum over scenarios for each pipe.
    """
    lengths = np.asarray(lengths, dtype=float)
    vel = np.abs(np.atleast_2d(np.asarray(velocities, dtype=float)))
    out = []
    for i, L in enumerate(lengths):
        best = n_max
        for v in vel[:, i]:
            if v <= 0:
                n = n_max
            else:
                n = min(n_max, max(1, math.floor(L / (v * dt) * (1 + 1e-12))))
            best = min(best, n)
        out.append(int(best))
    return out


def size_segments(net: Network, scenario_count: int, seed: int = 0, n_max: int = 200,
                  return_velocities: bool = False):
    """Offline pipe discretization from randomized hydraulic scenarios.

    Each scenario draws pump speeds uniformly in ``[0, s_max]``, a demand
    pattern step and tank heads within their bounds, then solves the step. The
    count for each pipe is the minimum over scenarios, which keeps the Courant
    number at or below one in every sampled scenario.
    """
    if scenario_count < 1:
        raise ValueError("scenario_count must be >= 1")
    rng = np.random.default_rng(seed)
    vels = []
    for _ in range(scenario_count):
        speeds = np.array([rng.uniform(0, m.s_max) for m in net.pumps])
        k = int(rng.integers(0, max(net.n_steps, 1)))
        w = np.array([rng.uniform(t.h_min, t.h_max) for t in net.tanks])
        try:
            st = solve_hydraulic_step(net, speeds, demand_at_step(net, k), w, step=k)
        except HydraulicError as exc:
            log.debug("sizing scenario skipped: %s", exc)
            continue
        vels.append(np.abs(st.pipe_velocity(net)))
    if not vels:
        vels = [np.zeros(net.n_P)]
    counts = segments_from_velocities([p.length for p in net.pipes], vels, net.dt_wq, n_max)
    plan = SegmentPlan.from_counts(net, counts)
    if return_velocities:
        return plan, np.array(vels)
    return plan
