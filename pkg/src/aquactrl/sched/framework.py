"""Multi-step scheduling loop with mode selection, fallbacks and outputs."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .._io import csv_text, json_text
from ..hydsim import SegmentPlan, size_segments
from ..netmodel import Network, demand_at_step
from ..optkern import ITERATION_LIMIT, OPTIMAL
from .coupled import GramianEvaluator, solve_energy_driven, solve_rank_informed, solve_trace_lambda
from .decoupled import (CoupledInfeasible, DecisionVector, ScheduleError, StepProblem, build_decoupled, force_pumps_on,
                        solve_decoupled)
from .fits import fit_power, fit_pump_curve
from .pwl import pwl_pipes

log = logging.getLogger(__name__)

MODES = ("decoupled", "rank", "energy", "trace_lambda")
PUMP_LABELS = ("On", "Off", "Bypass", "CheckValveShut")


@dataclass
class FrameworkConfig:
    """Settings for :func:`run_framework`.

    ``mode`` applies to every step unless ``modes`` gives one per step.
    ``tariff`` is $/kWh, scalar or one value per step.
    """

    mode: str = "decoupled"
    modes: Sequence[str] | None = None
    targets: Sequence[str] = ()
    energy_targets: Sequence[Sequence[str]] = ()
    l_r: int = 1
    l_floor: int = 0
    theta3: float = 10.0
    theta1: float = 0.0
    theta2: float = 0.0
    thetas: Sequence[float] = ()
    max_halvings: int = 8
    n_pw: int = 3
    split_at_zero: bool = True
    tariff: float | Sequence[float] = 0.1
    tank_min: Sequence[float] | None = None
    tank_max: Sequence[float] | None = None
    segment_counts: Sequence[int] | None = None
    scenario_count: int = 50
    seed: int = 0
    n_max: int = 200
    gramian_steps: int | None = None
    literal_denominators: bool = False
    steps: int | None = None
    slp_iterations: int = 30
    trust_radius: float = 0.5
    fallback: bool = True  # False: one attempt per step, no level reduction, raise on failure

    def mode_at(self, k: int) -> str:
        m = self.modes[k] if self.modes is not None else self.mode
        if m not in MODES:
            raise ValueError(f"unknown mode '{m}'")
        return m

    def tariff_at(self, k: int) -> float:
        if np.ndim(self.tariff) == 0:
            return float(self.tariff)
        return float(self.tariff[k])

    def as_dict(self) -> dict:
        d = asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


@dataclass
class StepRecord:
    step: int
    mode: str
    mode_used: str
    status: str
    decision: DecisionVector
    cost: float
    objective: float
    labels: list
    level: float | None = None


@dataclass
class ScheduleResult:
    net: Network
    config: FrameworkConfig
    plan: SegmentPlan
    records: list
    events: list = field(default_factory=list)

    @property
    def total_cost(self) -> float:
        return float(sum(r.cost for r in self.records))

    @property
    def speeds(self) -> np.ndarray:
        """Applied speeds, one row per step (zero unless the pump is On)."""
        out = np.zeros((len(self.records), self.net.n_M))
        for k, r in enumerate(self.records):
            for m, lab in enumerate(r.labels):
                out[k, m] = r.decision.speeds[m] if lab == "On" else 0.0
        return out

    @property
    def tank_heads(self) -> np.ndarray:
        rows = [r.decision.w for r in self.records]
        if self.records:
            rows.append(self.records[-1].decision.w_next)
        return np.array(rows)


def classify_pump_states(dv: DecisionVector, net: Network, tol: float = 1e-6) -> list:
    """Label each pump from speed, flow and head increase across it.

    Bypass: flow with no head increase, whatever the reported speed (a
    nonzero speed there is a pseudo speed). On: running with flow.
    CheckValveShut: no flow against a head increase. Off: none of these.
    """
    labels = []
    for m in range(net.n_M):
        q = dv.flows[net.n_P + m]
        s = dv.speeds[m]
        dh = head_gain(dv, net, m)
        if q > tol and abs(dh) <= tol:
            labels.append("Bypass")
        elif q > tol and s > tol:
            labels.append("On")
        elif q > tol:
            labels.append("Bypass")
        elif dh > tol:
            labels.append("CheckValveShut")
        else:
            labels.append("Off")
    return labels


def _bounds(cfg: FrameworkConfig, net: Network):
    if cfg.tank_min is None and cfg.tank_max is None:
        return None
    lo = [t.h_min for t in net.tanks] if cfg.tank_min is None else list(cfg.tank_min)
    hi = [t.h_max for t in net.tanks] if cfg.tank_max is None else list(cfg.tank_max)
    return (np.array(lo, dtype=float), np.array(hi, dtype=float))


def coupled_starts(sp: StepProblem, dec, fraction: float = 0.5) -> list:
    """SLP initial points: the decoupled optimum, then the optimum with all pumps on.

    The second start matters when the decoupled flows leave a target
    unreachable: the Gramian is then flat in every direction binary and the
    SLP cannot leave that point on its own. It is added whenever some pump is
    off or runs below ``fraction`` of its runout flow.
    """
    starts = [dec.x]
    if not sp.net.n_M:
        return starts
    q = dec.x[sp.idx["z"]][sp.net.n_P:sp.net.n_P + sp.net.n_M]
    low = [qi < fraction * m.max_flow() - 1e-9 for qi, m in zip(q, sp.net.pumps)]
    if np.any(dec.x[sp.idx["y"]] < 0.5) or any(low):
        _, on = solve_decoupled(force_pumps_on(sp, fraction))
        if on.x is not None:
            starts.append(on.x)
    return starts


def _best(runs):
    ok = [r for r in runs if r.x is not None and r.status in (OPTIMAL, ITERATION_LIMIT)]
    return min(ok, key=lambda r: r.objective) if ok else None


def prepare(net: Network, cfg: FrameworkConfig):
    """Offline pieces: pump fits, PWL chords and the segment plan."""
    curves = [fit_pump_curve(m) for m in net.pumps]
    powers = [fit_power(m) for m in net.pumps]
    pwl = pwl_pipes(net, cfg.n_pw, split_at_zero=cfg.split_at_zero)
    if cfg.segment_counts is not None:
        plan = SegmentPlan.from_counts(net, cfg.segment_counts)
    else:
        plan = size_segments(net, cfg.scenario_count, cfg.seed, cfg.n_max)
    return curves, powers, pwl, plan


def run_framework(net: Network, cfg: FrameworkConfig | None = None, w0=None) -> ScheduleResult:
    """Solve the schedule one hydraulic step at a time.

    Every step first solves the decoupled MIQP; its optimum seeds the coupled
    SLP and provides the reference denominators. Rank mode lowers ``l_r`` by
    one after an infeasible attempt; energy mode halves every weight. When the
    floor is reached the decoupled solution is used and an event is recorded.
    Tank heads chain from each step's ``w_next``.

    Raises
    ------
    ScheduleError
        If the decoupled problem of some step is infeasible.
    CoupledInfeasible
        If a coupled step fails while ``cfg.fallback`` is False.
    """
    cfg = FrameworkConfig() if cfg is None else cfg
    curves, powers, pwl, plan = prepare(net, cfg)
    bounds = _bounds(cfg, net)
    w = np.array([t.h_init for t in net.tanks]) if w0 is None else np.asarray(w0, dtype=float)
    n_steps = net.n_steps if cfg.steps is None else int(cfg.steps)
    records, events = [], []
    for k in range(n_steps):
        mode = cfg.mode_at(k)
        demands = demand_at_step(net, k)
        sp = build_decoupled(net, k, w, demands, curves, powers, pwl, tank_bounds=bounds, tariff=cfg.tariff_at(k))
        sp, dec = solve_decoupled(sp)
        if dec.x is None:
            raise ScheduleError(f"decoupled problem infeasible at step {k} ({dec.status})")
        chosen, used, status, level = dec, "decoupled", dec.status, None
        if mode == "rank":
            ev = GramianEvaluator(sp, plan, cfg.targets, cfg.gramian_steps, dec.x, cfg.literal_denominators)
            starts = coupled_starts(sp, dec)
            level = cfg.l_r
            if not cfg.fallback:
                levels = [cfg.l_r]
            elif level > len(ev.targets):
                events.append({"step": k, "mode": "rank", "level": level, "event": "infeasible",
                               "reason": f"level exceeds {len(ev.targets)} targets"})
                level = len(ev.targets)
                levels = list(range(level, cfg.l_floor, -1))
            else:
                levels = list(range(level, cfg.l_floor, -1)) if cfg.l_r > cfg.l_floor else [cfg.l_r]
            chosen_level = None
            for lv in levels:
                res = _best([solve_rank_informed(sp, x0, ev, lv, cfg.theta3, max_iter=cfg.slp_iterations,
                                                 trust_radius=cfg.trust_radius) for x0 in starts])
                if res is not None:
                    chosen, used, status, chosen_level = res, "rank", res.status, lv
                    break
                events.append({"step": k, "mode": "rank", "level": lv, "event": "infeasible"})
            if chosen_level is None:
                events.append({"step": k, "mode": "rank", "level": cfg.l_floor, "event": "fallback to decoupled"})
            level = chosen_level
        elif mode == "energy":
            sets = [list(t) for t in cfg.energy_targets] or [list(cfg.targets)]
            thetas = list(cfg.thetas) or [cfg.theta3] * len(sets)
            evs = [GramianEvaluator(sp, plan, t, cfg.gramian_steps, dec.x, cfg.literal_denominators)
                   for t in sets]
            starts = coupled_starts(sp, dec)
            for h in range(cfg.max_halvings + 1 if cfg.fallback else 1):
                res = _best([solve_energy_driven(sp, x0, evs, thetas, max_iter=cfg.slp_iterations,
                                                 trust_radius=cfg.trust_radius) for x0 in starts])
                if res is not None:
                    chosen, used, status, level = res, "energy", res.status, float(thetas[0])
                    break
                events.append({"step": k, "mode": "energy", "theta": list(thetas), "event": "infeasible"})
                thetas = [t / 2 for t in thetas]
            else:
                events.append({"step": k, "mode": "energy", "event": "fallback to decoupled"})
        elif mode == "trace_lambda":
            ev = GramianEvaluator(sp, plan, cfg.targets, cfg.gramian_steps, dec.x, cfg.literal_denominators)
            res = _best([solve_trace_lambda(sp, x0, ev, cfg.theta1, cfg.theta2, max_iter=cfg.slp_iterations,
                                            trust_radius=cfg.trust_radius) for x0 in coupled_starts(sp, dec)])
            if res is not None:
                chosen, used, status = res, "trace_lambda", res.status
            else:
                events.append({"step": k, "mode": "trace_lambda", "event": "fallback to decoupled"})
        if mode != "decoupled" and used == "decoupled" and not cfg.fallback:
            raise CoupledInfeasible(f"{mode} problem infeasible at step {k} and fallback is disabled")
        dv = sp.decode(chosen.x)
        labels = classify_pump_states(dv, net)
        cost = sp.cost(chosen.x)
        records.append(StepRecord(k, mode, used, status, dv, cost, float(chosen.objective), labels, level))
        log.info("step %d mode %s used %s status %s cost %.6g", k, mode, used, status, cost)
        w = dv.w_next
    return ScheduleResult(net, cfg, plan, records, events)


def head_gain(dv: DecisionVector, net: Network, m: int) -> float:
    """Head increase ``h_end - h_start`` across pump ``m``."""
    jidx = net.junction_index()
    tidx = net.tank_index()
    res = {r.id: r.head for r in net.reservoirs}

    def h(node):
        if node in jidx:
            return dv.heads[jidx[node]]
        if node in tidx:
            return dv.w[tidx[node]]
        return res[node]

    pump = net.pumps[m]
    return float(h(pump.end) - h(pump.start))


def schedule_csv(result: ScheduleResult) -> str:
    """One row per step and pump; speed is blank unless the pump is On."""
    net = result.net
    rows = []
    for r in result.records:
        for m, pump in enumerate(net.pumps):
            lab = r.labels[m]
            speed = r.decision.speeds[m] if lab == "On" else ""
            rows.append((r.step, pump.id, speed, r.decision.flows[net.n_P + m], head_gain(r.decision, net, m),
                         lab, r.cost, r.mode_used))
    return csv_text(["step", "pump", "speed", "flow_ft3s", "head_gain_ft", "status", "step_cost_usd", "proxy_mode"],
                    rows, result.config.as_dict())


def schedule_manifest(result: ScheduleResult) -> str:
    body = {
        "network": result.net.name,
        "config": result.config.as_dict(),
        "segment_counts": list(result.plan.counts),
        "total_cost_usd": result.total_cost,
        "steps": [{"step": r.step, "mode": r.mode, "mode_used": r.mode_used, "status": r.status,
                   "level": r.level, "cost_usd": r.cost, "labels": r.labels,
                   "tank_heads_next": [float(v) for v in r.decision.w_next]} for r in result.records],
        "events": result.events,
    }
    return json_text(body, result.config.as_dict())
