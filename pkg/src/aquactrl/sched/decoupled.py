"""Per-step hydraulic MIQP with convex surrogates and tangent refresh."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..netmodel import Network, Pipe, Valve
from ..optkern import INFEASIBLE, OPTIMAL, MipProblem, QpProblem, SolveStatus, solve_miqp
from .fits import PowerFit, PumpCurveFit
from .pwl import PwlPlan

log = logging.getLogger(__name__)

BIG_M = 1.0e4  # ft; deactivates pump head rows when the pump is off
TIE_WEIGHT = 1e-9  # $ per unit speed; prefers the lexicographically smallest speed vector among ties


class ScheduleError(RuntimeError):
    """A step has no feasible schedule."""


class CoupledInfeasible(ScheduleError):
    """A coupled step failed and fallback to the decoupled problem is disabled."""


@dataclass
class DecisionVector:
    """Solution of one hydraulic step.

    ``w`` holds tank heads at the start of the step, ``w_next`` after it. Pipe
    segment weights and selection binaries are stored per link id.
    """

    step: int
    w: np.ndarray
    w_next: np.ndarray
    heads: np.ndarray  # junction heads l
    flows: np.ndarray  # z, one per link
    speeds: np.ndarray  # s
    on: np.ndarray  # y
    demands: np.ndarray
    zeta: dict = field(default_factory=dict)
    omega: dict = field(default_factory=dict)
    directions: dict = field(default_factory=dict)

    @property
    def tank_heads(self) -> np.ndarray:
        return self.w


@dataclass
class StepProblem:
    """Variable layout and data for the MIQP of one hydraulic step."""

    net: Network
    step: int
    w: np.ndarray
    demands: np.ndarray
    curves: list
    powers: list
    pwl: PwlPlan
    tank_bounds: tuple
    s_lin: np.ndarray
    idx: dict
    n: int
    mip: MipProblem = None
    dt_hours: float = 1.0
    tariff: float = 1.0
    force_on: float = 0.0

    def decode(self, x) -> DecisionVector:
        net, idx = self.net, self.idx
        zeta, omega, dirs = {}, {}, {}
        for lid, (zi, oi) in idx["pwl"].items():
            zeta[lid] = x[zi].copy()
            omega[lid] = np.round(x[oi]).copy()
            nr = self.pwl[lid].n_reverse
            dirs[lid] = (float(omega[lid][nr:].sum()), float(omega[lid][:nr].sum()))
        return DecisionVector(self.step, self.w.copy(), x[idx["w_next"]].copy(), x[idx["l"]].copy(),
                              x[idx["z"]].copy(), x[idx["s"]].copy(), np.round(x[idx["y"]]).copy(),
                              self.demands.copy(), zeta, omega, dirs)

    def encode(self, dv: DecisionVector) -> np.ndarray:
        x = np.zeros(self.n)
        idx = self.idx
        x[idx["l"]] = dv.heads
        x[idx["z"]] = dv.flows
        x[idx["s"]] = dv.speeds
        x[idx["y"]] = dv.on
        x[idx["w_next"]] = dv.w_next
        for lid, (zi, oi) in idx["pwl"].items():
            x[zi] = dv.zeta[lid]
            x[oi] = dv.omega[lid]
        return x

    def cost(self, x) -> float:
        """Surrogate energy cost of the step in $, re-evaluated from the power fits."""
        total = 0.0
        for m, pw in enumerate(self.powers):
            q = x[self.idx["z"][self.net.n_P + m]]
            s = x[self.idx["s"][m]]
            y = x[self.idx["y"][m]]
            total += pw(q, s, on=y)
        return float(self.tariff * self.dt_hours * total)

    def binary_count(self) -> int:
        return len(self.mip.binaries)


def _layout(net: Network, pwl: PwlPlan, step: int):
    idx = {}
    k = 0

    def take(m):
        nonlocal k
        r = np.arange(k, k + m)
        k += m
        return r

    idx["l"] = take(net.n_J)
    idx["z"] = take(net.n_L)
    idx["pwl"] = {}
    for link in list(net.pipes) + list(net.valves):
        if link.id in pwl.links and (not isinstance(link, Valve) or link.is_open(step)):
            m = len(pwl[link.id].segments)
            idx["pwl"][link.id] = (take(m), take(m))
    idx["s"] = take(net.n_M)
    idx["y"] = take(net.n_M)
    idx["w_next"] = take(net.n_TK)
    return idx, k


def build_decoupled(net: Network, step: int, w, demands, curves, powers, pwl: PwlPlan, s_lin=None,
                    tank_bounds=None, tariff: float = 1.0, max_binaries: int = 64,
                    force_on: float = 0.0) -> StepProblem:
    """Assemble the step MIQP.

    Parameters
    ----------
    w : array_like
        Tank heads at the start of the step.
    curves, powers : list
        Per-pump :class:`PumpCurveFit` and :class:`PowerFit` (unit tariff).
    s_lin : array_like, optional
        Speeds at which the concave ``beta3 s^2`` term is linearized;
        defaults to ``s_max``.
    tank_bounds : (lo, hi), optional
        Bounds on ``w_next``; the tank limits by default.
    tariff : float
        Price multiplier for this step, $/kWh.
    force_on : float
        When positive, fix every pump binary to one and require a flow of at
        least this fraction of the full-speed runout flow.

    Notes
    -----
    Pump rows: ``0 <= q <= q_max(s_max) s / s_max``, ``s <= s_max y``, and
    ``h_end - h_start <= G_lin(q, s) + M (1 - y)``, ``h_start - h_end <= M (1 - y)``.
    The quadratic ``beta1 q^2`` is replaced by its tangent at mid-range flow
    and ``beta3 s^2`` by its tangent at ``s_lin``, so the head row is linear.
    """
    w = np.asarray(w, dtype=float)
    demands = np.asarray(demands, dtype=float)
    s_lin = np.array([m.s_max for m in net.pumps]) if s_lin is None else np.asarray(s_lin, dtype=float)
    idx, n = _layout(net, pwl, step)
    jidx = net.junction_index()
    tidx = net.tank_index()
    res_head = {r.id: r.head for r in net.reservoirs}
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    eq_rows, eq_rhs, ub_rows, ub_rhs = [], [], [], []

    def row():
        return np.zeros(n)

    def head_terms(r, node, sign):
        """Add ``sign * h(node)`` to ``r``; return the constant moved to the right side."""
        if node in jidx:
            r[idx["l"][jidx[node]]] += sign
            return 0.0
        if node in tidx:
            return -sign * w[tidx[node]]
        return -sign * res_head[node]

    for j, jn in enumerate(net.junctions):
        lb[idx["l"][j]] = jn.head_min if jn.head_min is not None else -np.inf
        ub[idx["l"][j]] = jn.head_max if jn.head_max is not None else np.inf

    # nodal balance and tank dynamics
    bal = {jn.id: row() for jn in net.junctions}
    tk = {t.id: row() for t in net.tanks}
    for li, link in enumerate(net.links):
        zi = idx["z"][li]
        if link.end in bal:
            bal[link.end][zi] += 1.0
        if link.start in bal:
            bal[link.start][zi] -= 1.0
        if link.end in tk:
            tk[link.end][zi] += 1.0
        if link.start in tk:
            tk[link.start][zi] -= 1.0
    for j, jn in enumerate(net.junctions):
        eq_rows.append(bal[jn.id])
        eq_rhs.append(demands[j])
    dt_h = net.dt_hydraulic
    lo_b, hi_b = tank_bounds if tank_bounds is not None else (None, None)
    for i, t in enumerate(net.tanks):
        r = -dt_h / t.area * tk[t.id]
        r[idx["w_next"][i]] = 1.0
        eq_rows.append(r)
        eq_rhs.append(w[i])
        lb[idx["w_next"][i]] = t.h_min if lo_b is None else np.atleast_1d(lo_b)[i]
        ub[idx["w_next"][i]] = t.h_max if hi_b is None else np.atleast_1d(hi_b)[i]

    binaries = []
    # pipes and valves
    for li, link in enumerate(net.links):
        zi = idx["z"][li]
        if isinstance(link, Pipe):
            lb[zi], ub[zi] = link.flow_box() if link.id not in pwl.links else (
                pwl[link.id].segments[0].q_min, pwl[link.id].segments[-1].q_max)
        if isinstance(link, Valve) and not link.is_open(step):
            lb[zi] = ub[zi] = 0.0
            continue
        if link.id not in idx["pwl"]:
            continue
        zeta_i, omega_i = idx["pwl"][link.id]
        lp = pwl[link.id]
        lb[zi], ub[zi] = lp.segments[0].q_min, lp.segments[-1].q_max
        r = row()
        rhs = head_terms(r, link.start, 1.0) + head_terms(r, link.end, -1.0)
        for seg, a, o in zip(lp.segments, zeta_i, omega_i):
            r[a] -= seg.slope
            r[o] -= seg.intercept
        eq_rows.append(r)
        eq_rhs.append(rhs)
        r = row()
        r[zi] = 1.0
        r[zeta_i] = -1.0
        eq_rows.append(r)
        eq_rhs.append(0.0)
        r = row()
        r[omega_i] = 1.0
        eq_rows.append(r)
        eq_rhs.append(1.0)
        for seg, a, o in zip(lp.segments, zeta_i, omega_i):
            r = row()
            r[a], r[o] = 1.0, -seg.q_max
            ub_rows.append(r)
            ub_rhs.append(0.0)
            r = row()
            r[a], r[o] = -1.0, seg.q_min
            ub_rows.append(r)
            ub_rhs.append(0.0)
            lb[a], ub[a] = min(0.0, seg.q_min), max(0.0, seg.q_max)
            lb[o], ub[o] = 0.0, 1.0
            binaries.append(int(o))

    # pumps
    P = np.zeros((n, n))
    c = np.zeros(n)
    c0 = 0.0
    for m, pump in enumerate(net.pumps):
        zi = idx["z"][net.n_P + m]
        si, yi = idx["s"][m], idx["y"][m]
        qmax = pump.max_flow(pump.s_max)
        lb[zi], ub[zi] = force_on * qmax, qmax
        lb[si], ub[si] = 0.0, pump.s_max
        lb[yi], ub[yi] = (1.0 if force_on > 0 else 0.0), 1.0
        binaries.append(int(yi))
        r = row()
        r[zi], r[si] = 1.0, -qmax / pump.s_max
        ub_rows.append(r)
        ub_rhs.append(0.0)
        r = row()
        r[si], r[yi] = 1.0, -pump.s_max
        ub_rows.append(r)
        ub_rhs.append(0.0)
        fit: PumpCurveFit = curves[m]
        qbar = 0.5 * qmax
        sbar = float(s_lin[m])
        # h_e - h_s - (2 b1 qbar + b2) q - 2 b3 sbar s + M y <= b4 - b1 qbar^2 - b3 sbar^2 + M
        r = row()
        rhs = head_terms(r, pump.end, 1.0) + head_terms(r, pump.start, -1.0)
        r[zi] -= 2 * fit.beta1 * qbar + fit.beta2
        r[si] -= 2 * fit.beta3 * sbar
        r[yi] += BIG_M
        ub_rows.append(r)
        ub_rhs.append(rhs + fit.beta4 - fit.beta1 * qbar ** 2 - fit.beta3 * sbar ** 2 + BIG_M)
        r = row()
        rhs = head_terms(r, pump.start, 1.0) + head_terms(r, pump.end, -1.0)
        r[yi] += BIG_M
        ub_rows.append(r)
        ub_rhs.append(rhs + BIG_M)
        # energy over the step
        pw: PowerFit = powers[m]
        k = tariff * dt_h / 3600.0
        t1, t2, t3, t4, t5, t6 = pw.theta
        c[yi] += k * t1
        c[zi] += k * t2
        c[si] += k * t4 + TIE_WEIGHT * 2.0 ** (-m)
        P[zi, zi] += 2 * k * t3
        P[si, si] += 2 * k * t5
        P[zi, si] += k * t6
        P[si, zi] += k * t6

    def stack(rows_, rhs_):
        if rows_:
            return np.array(rows_), np.array(rhs_, dtype=float)
        return np.zeros((0, n)), np.zeros(0)

    A_eq, b_eq = stack(eq_rows, eq_rhs)
    A_ub, b_ub = stack(ub_rows, ub_rhs)
    qp = QpProblem(P, c, A_eq, b_eq, A_ub, b_ub, lb, ub, c0)
    mip = MipProblem(qp, tuple(binaries), max_binaries=max_binaries)
    return StepProblem(net, step, w, demands, list(curves), list(powers), pwl, tank_bounds, s_lin, idx, n,
                       mip, dt_h / 3600.0, tariff, force_on)


def rebuild(sp: StepProblem, s_lin) -> StepProblem:
    """Same step with the speed tangent moved to ``s_lin``."""
    return build_decoupled(sp.net, sp.step, sp.w, sp.demands, sp.curves, sp.powers, sp.pwl, s_lin,
                           sp.tank_bounds, sp.tariff, sp.mip.max_binaries, sp.force_on)


def force_pumps_on(sp: StepProblem, fraction: float = 0.5) -> StepProblem:
    """Copy of the step problem with every pump running at ``fraction`` of runout flow or more."""
    return build_decoupled(sp.net, sp.step, sp.w, sp.demands, sp.curves, sp.powers, sp.pwl, sp.s_lin,
                           sp.tank_bounds, sp.tariff, sp.mip.max_binaries, force_on=fraction)


def tangent_speeds(sp: StepProblem, x) -> np.ndarray:
    """Next tangent points: the solved speed for running pumps, ``s_max`` otherwise."""
    s = x[sp.idx["s"]]
    y = x[sp.idx["y"]]
    return np.array([si if yi > 0.5 and si > 1e-9 else m.s_max
                     for si, yi, m in zip(s, y, sp.net.pumps)])


def solve_decoupled(sp: StepProblem, max_ccp: int = 30, tol: float = 1e-10):
    """Solve the step MIQP, refreshing the speed tangent until it settles.

    Returns
    -------
    (StepProblem, SolveStatus)
        The problem at the final tangent and its solution.
    """
    res = None
    for it in range(max_ccp):
        res = solve_miqp(sp.mip)
        if res.x is None:
            return sp, res
        s_new = tangent_speeds(sp, res.x)
        if np.all(np.abs(s_new - sp.s_lin) <= tol):
            res.info["ccp_iterations"] = it + 1
            return sp, res
        sp = rebuild(sp, s_new)
    res.info["ccp_iterations"] = max_ccp
    return sp, res

