"""Receding-horizon tracking MPC for booster chlorine injections."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ._io import csv_text, json_text
from .hydsim import HydraulicTrajectory, SegmentPlan, simulate_hydraulics
from .netmodel import Network
from .optkern import INFEASIBLE, OPTIMAL, QpProblem, solve_qp
from .wqsim import WqSystem, assemble_wq, initial_state, wq_step

log = logging.getLogger(__name__)

SOFTENED = "Softened"


@dataclass
class MpcConfig:
    """Controller settings.

    ``q_weight`` scales the sensor tracking term and ``r_weight`` the input
    term. ``u_max`` is a synthetic booster capacity in mg/L (no value is
    published for it). ``margin`` tightens the state band inside the QP.
    ``soften`` makes the lower state bound soft from the start;
    ``soften_on_infeasible`` retries a step with soft bounds after a hard
    failure. ``band`` is the time-to-setpoint tolerance around ``y_ref``.
    ``block`` holds each input constant over that many steps (move
    blocking), which keeps long horizons cheap.
    """

    horizon: int = 30
    block: int = 1
    q_weight: float = 1.0
    r_weight: float = 0.1
    y_ref: float | Sequence[float] = 1.0
    x_min: float = 0.2
    x_max: float = 4.0
    u_max: float = 500.0
    margin: float = 0.05
    soften: bool = False
    soften_on_infeasible: bool = True
    slack_penalty: float = 1e6
    band: float = 0.1

    def validate(self):
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be below x_max")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.block < 1:
            raise ValueError("block must be >= 1")
        if self.q_weight < 0 or self.r_weight <= 0:
            raise ValueError("need q_weight >= 0 and r_weight > 0")
        if self.u_max < 0:
            raise ValueError("u_max must be nonnegative")
        if not 0 <= self.margin < 0.5 * (self.x_max - self.x_min):
            raise ValueError("margin must leave a nonempty band")
        return self


@dataclass
class MpcStep:
    u: np.ndarray
    status: str
    slack: float = 0.0
    plan: np.ndarray | None = None  # blocked input sequence, for warm starts


def _free_response(systems: Sequence[WqSystem], x0) -> np.ndarray:
    """Unforced predictions ``x_i``, ``i = 1..N``."""
    f = np.asarray(x0, dtype=float)
    fs = np.zeros((len(systems), f.size))
    for i, sys in enumerate(systems):
        f = sys.A @ f
        fs[i] = f
    return fs


@dataclass
class _InputResponse:
    """State-independent part of the condensed predictions for one window of systems."""

    S: np.ndarray  # (N * n, nU)
    G: np.ndarray  # sensor rows, (N, p, nU)
    pos: np.ndarray  # row sums of the positive entries
    neg: np.ndarray
    moved: np.ndarray


def _input_response(systems: Sequence[WqSystem], block: int = 1) -> _InputResponse:
    N = len(systems)
    n, m = systems[0].n_x, systems[0].n_u
    nb = -(-N // block)
    S = np.zeros((n, nb * m))
    Ss = np.zeros((N, n, nb * m))
    for i, sys in enumerate(systems):
        j = i // block
        S = sys.A @ S
        S[:, j * m:(j + 1) * m] += sys.B
        Ss[i] = S
    G = np.stack([sys.C @ Ss[i] for i, sys in enumerate(systems)])
    S_all = Ss.reshape(N * n, nb * m)
    return _InputResponse(S_all, G, np.clip(S_all, 0, None).sum(axis=1), np.clip(S_all, None, 0).sum(axis=1),
                          np.any(S_all != 0.0, axis=1))


def _condense(systems: Sequence[WqSystem], x0, block: int = 1):
    """Predictions ``x_i = f_i + S_i U`` for ``i = 1..N``, ``U`` holding one input per block."""
    resp = _input_response(systems, block)
    N, n = len(systems), systems[0].n_x
    return _free_response(systems, x0), resp.S.reshape(N, n, -1)


def mpc_step(systems: Sequence[WqSystem], x_now, cfg: MpcConfig, y_ref=None, soften: bool | None = None,
             tol: float = 1e-9, warm=None, response: _InputResponse | None = None) -> MpcStep:
    """Solve the horizon QP and return the first input.

    Minimizes ``sum_i q ||C x_i - y_ref||^2 + r ||u_i||^2`` over ``u_i in [0, u_max]``
    subject to the prediction model and ``x_min + margin <= x_i <= x_max - margin``.
    Rows that the inputs cannot move are checked, not constrained: a predicted
    violation there makes the hard problem infeasible. Rows that cannot bind
    anywhere in the input box are dropped.

    Parameters
    ----------
    warm : ndarray, optional
        Blocked input sequence used as a starting point when feasible.
    response : optional
        Precomputed input response of this window (it does not depend on
        ``x_now``), reused across steps by :func:`run_closed_loop`.

    Returns
    -------
    MpcStep
        Status ``Optimal``, ``Infeasible`` (hard bounds unattainable) or
        ``Softened`` (solved with one slack on the worst lower-bound violation).
    """
    cfg.validate()
    soften = cfg.soften if soften is None else soften
    systems = list(systems)[: cfg.horizon]
    N = len(systems)
    m = systems[0].n_u
    resp = _input_response(systems, cfg.block) if response is None else response
    fs = _free_response(systems, x_now)
    nU = resp.S.shape[1]
    n = fs.shape[1]
    C = systems[0].C
    yr = np.broadcast_to(np.asarray(cfg.y_ref if y_ref is None else y_ref, dtype=float), (C.shape[0],))
    H = cfg.r_weight * np.eye(nU) * np.repeat(np.bincount(np.arange(N) // cfg.block), m)
    E = np.stack([sys.C @ fs[i] for i, sys in enumerate(systems)]) - yr
    G = resp.G
    H += cfg.q_weight * np.einsum("ipu,ipv->uv", G, G)
    g = cfg.q_weight * np.einsum("ipu,ip->u", G, E)
    c0 = cfg.q_weight * float(np.sum(E * E))
    lo = cfg.x_min + cfg.margin
    hi = cfg.x_max - cfg.margin
    umax = cfg.u_max
    S_all = resp.S
    f_all = fs.reshape(N * n)
    reach_hi = f_all + resp.pos * umax
    reach_lo = f_all + resp.neg * umax
    moved = resp.moved
    infeasible = bool(np.any(~moved & (f_all > cfg.x_max + tol)))
    up = moved & (reach_hi > hi + tol)
    down = moved & (reach_lo < lo - tol)
    if np.any(~moved & (f_all < cfg.x_min - tol)):
        infeasible = True
    if infeasible and not soften:
        return MpcStep(np.zeros(m), INFEASIBLE)
    hard_A = [S_all[up]]
    hard_b = [hi - f_all[up]]
    if soften:
        soft_A, soft_b = -S_all[down], f_all[down] - lo
    else:
        hard_A.append(-S_all[down])
        hard_b.append(f_all[down] - lo)
        soft_A, soft_b = np.zeros((0, nU)), np.zeros(0)
    A_h = np.vstack(hard_A)
    b_h = np.concatenate(hard_b)
    # one shared slack: the worst lower-bound violation is penalized
    ns = 1 if soft_A.shape[0] else 0
    nv = nU + ns
    P = np.zeros((nv, nv))
    P[:nU, :nU] = 2.0 * H
    c = np.concatenate([2.0 * g, np.full(ns, cfg.slack_penalty)])
    A_ub = np.vstack([np.hstack([A_h, np.zeros((A_h.shape[0], ns))]),
                      np.hstack([soft_A, -np.ones((soft_A.shape[0], ns))])])
    b_ub = np.concatenate([b_h, soft_b])
    lb = np.zeros(nv)
    ub = np.concatenate([np.full(nU, umax), np.full(ns, np.inf)])
    qp = QpProblem(P, c, np.zeros((0, nv)), np.zeros(0), A_ub, b_ub, lb, ub, c0)
    x0 = None
    if warm is not None and len(warm) == nU:
        u0 = np.clip(np.asarray(warm, dtype=float), 0.0, umax)
        x0 = np.concatenate([u0, [max(np.max(soft_A @ u0 - soft_b), 0.0)]]) if ns else u0
    elif ns:
        u0 = np.zeros(nU)
        x0 = np.concatenate([u0, [max(np.max(-soft_b), 0.0)]])
    res = solve_qp(qp, x0=x0)
    if res.status != OPTIMAL:
        return MpcStep(np.zeros(m), res.status)
    u = np.clip(res.x[:m], 0.0, umax)
    slack = float(res.x[nU:].sum()) if ns else 0.0
    status = SOFTENED if soften else OPTIMAL
    return MpcStep(u, status, slack, res.x[:nU].copy())


@dataclass
class MpcResult:
    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    inputs: np.ndarray
    statuses: list
    labels: list
    sensors: list
    boosters: list
    dt: float
    time_to_setpoint: float | None
    band_entry: float | None
    booster_flows: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def injected_mass_mg(self) -> float:
        """Booster mass over the run: ``sum u q_B dt`` converted from mg/L * ft^3 to mg."""
        liters_per_ft3 = 28.316846592
        return float(np.sum(self.inputs * self.booster_flows[None, :]) * self.dt * liters_per_ft3)


def _trajectory(net: Network, schedule, horizon: float | None):
    if isinstance(schedule, HydraulicTrajectory):
        return schedule
    speeds = schedule.speeds if hasattr(schedule, "speeds") else np.asarray(schedule, dtype=float)
    speeds = np.asarray(speeds, dtype=float)
    if horizon is None:
        horizon = speeds.shape[0] * net.dt_hydraulic
    return simulate_hydraulics(net, speeds, horizon=horizon)


def run_closed_loop(net: Network, schedule, plan: SegmentPlan, cfg: MpcConfig | None = None, x0=None,
                    horizon: float | None = None) -> MpcResult:
    """Closed-loop injections over a pump schedule.

    Parameters
    ----------
    schedule : ScheduleResult, HydraulicTrajectory or array of speeds
        Speeds are replayed through the hydraulic simulator, so the loop runs
        on simulated (not surrogate) hydraulics.
    x0 : ndarray, optional
        Initial state, :func:`initial_state` by default.

    Notes
    -----
    Each WQ step uses the systems of the next ``horizon`` steps, switching
    matrices at hydraulic boundaries. When the hard problem is infeasible and
    ``soften_on_infeasible`` is set, the step is re-solved with a soft lower
    bound and reported as ``Softened``.
    """
    cfg = (cfg or MpcConfig()).validate()
    hyd = _trajectory(net, schedule, horizon)
    systems = [assemble_wq(net, st, plan) for st in hyd]
    per = net.wq_steps_per_hydraulic
    total = per * len(systems)
    x = initial_state(net, plan) if x0 is None else np.array(x0, dtype=float)
    boosters = net.boosters()
    sensors = net.sensors()
    yr = np.broadcast_to(np.asarray(cfg.y_ref, dtype=float), (len(sensors),))
    xs, ys, us, statuses = [x.copy()], [systems[0].C @ x], [], []
    times = [0.0]
    t_set = None
    t_band = 0.0 if np.all((x >= cfg.x_min) & (x <= cfg.x_max)) else None
    warm = None
    cache = {}
    for k in range(total):
        h = k // per
        idx = tuple(min((k + i) // per, len(systems) - 1) for i in range(cfg.horizon))
        window = [systems[i] for i in idx]
        if idx not in cache:
            if len(cache) > 4:
                cache.clear()
            cache[idx] = _input_response(window, cfg.block)
        st = mpc_step(window, x, cfg, warm=warm, response=cache[idx])
        if st.status == INFEASIBLE and cfg.soften_on_infeasible:
            st = mpc_step(window, x, cfg, soften=True, warm=warm, response=cache[idx])
        warm = st.plan
        statuses.append(st.status)
        x = wq_step(systems[h], x, st.u)
        y = systems[h].C @ x
        t = (k + 1) * net.dt_wq
        xs.append(x.copy())
        ys.append(y)
        us.append(st.u)
        times.append(t)
        if t_set is None and np.all(np.abs(y - yr) <= cfg.band):
            t_set = t
        if t_band is None and np.all((x >= cfg.x_min) & (x <= cfg.x_max)):
            t_band = t
    return MpcResult(np.array(times), np.array(xs), np.array(ys), np.array(us), statuses,
                     systems[0].labels, sensors, [b.node for b in boosters], net.dt_wq, t_set, t_band,
                     np.array([b.flow for b in boosters]))


def injection_csv(result: MpcResult, config=None) -> str:
    """Long format ``t_s, booster, mg_per_L_injected`` (time at the start of each step)."""
    rows = []
    for k, u in enumerate(result.inputs):
        for b, v in zip(result.boosters, u):
            rows.append((k * result.dt, b, float(v)))
    return csv_text(["t_s", "booster", "mg_per_L_injected"], rows, config)


def summary_json(result: MpcResult, cfg: MpcConfig) -> str:
    counts = {}
    for s in result.statuses:
        counts[s] = counts.get(s, 0) + 1
    body = {
        "total_injected_mass_mg": result.injected_mass_mg,
        "time_to_setpoint_s": result.time_to_setpoint,
        "band_entry_s": result.band_entry,
        "status_counts": counts,
        "steps": len(result.statuses),
        "config": asdict(cfg),
        "u_max_note": "synthetic booster capacity",
    }
    return json_text(body, asdict(cfg))
