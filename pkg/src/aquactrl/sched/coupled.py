"""Water-quality-coupled step problems solved by SLP from the decoupled optimum."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import replace
from types import SimpleNamespace
from typing import Sequence

import numpy as np

from ..ctrb import approx_target_gramian, reference_denominators, target_selector
from ..hydsim import SegmentPlan
from ..optkern import INFEASIBLE, SolveStatus, solve_slp
from ..wqsim import state_labels
from .decoupled import StepProblem, rebuild, tangent_speeds


class GramianEvaluator:
    """Surrogate target Gramian as a function of the step decision vector.

    Flows are read from ``z`` and direction weights from the (relaxed) segment
    binaries, so finite differences see how the Gramian responds to both.
    Results are cached per point.
    """

    def __init__(self, sp: StepProblem, plan: SegmentPlan, targets: Sequence[str], N: int | None = None,
                 reference_x=None, literal: bool = False, cache_size: int = 256):
        self.sp = sp
        self.plan = plan
        self.net = sp.net
        self.labels = state_labels(sp.net, plan)
        self.targets = list(targets)
        self.C_T = target_selector(self.labels, self.targets)
        self.N = sp.net.wq_steps_per_hydraulic if N is None else int(N)
        if literal:
            self.den = None
        else:
            flows = np.zeros(sp.net.n_L) if reference_x is None else reference_x[sp.idx["z"]]
            self.den = reference_denominators(sp.net, flows, sp.w, sp.demands)
        self._cache: OrderedDict = OrderedDict()
        self._size = cache_size
        self.evaluations = 0

    def directions(self, x) -> dict:
        out = {}
        for p in self.net.pipes:
            if p.id in self.sp.idx["pwl"]:
                _, oi = self.sp.idx["pwl"][p.id]
                nr = self.sp.pwl[p.id].n_reverse
                om = x[oi]
                out[p.id] = (float(om[nr:].sum()), float(om[:nr].sum()))
            else:
                out[p.id] = (1.0, 0.0)
        return out

    def __call__(self, x) -> np.ndarray:
        key = np.asarray(x, dtype=float).tobytes()
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        ups = SimpleNamespace(flows=x[self.sp.idx["z"]], tank_heads=self.sp.w, demands=self.sp.demands)
        W = approx_target_gramian(self.net, ups, self.plan, self.C_T, self.N, self.den, self.directions(x))
        self.evaluations += 1
        self._cache[key] = W
        if len(self._cache) > self._size:
            self._cache.popitem(last=False)
        return W

    def trace(self, x) -> float:
        return float(np.trace(self(x)))

    def nuclear(self, x) -> float:
        return float(np.abs(np.linalg.eigvalsh(0.5 * (self(x) + self(x).T))).sum())

    def lambda_min(self, x) -> float:
        W = self(x)
        return float(np.linalg.eigvalsh(0.5 * (W + W.T))[0]) if W.size else 0.0

    def spectral(self, x) -> float:
        W = self(x)
        return float(np.abs(np.linalg.eigvalsh(0.5 * (W + W.T))).max(initial=0.0))


def _slp_indices(sp: StepProblem):
    fd = [int(i) for i in sp.idx["z"]]
    for _, oi in sp.idx["pwl"].values():
        fd.extend(int(i) for i in oi)
    tr = [int(i) for i in sp.idx["z"]] + [int(i) for i in sp.idx["s"]]
    return fd, tr


def courant_caps(sp: StepProblem, plan: SegmentPlan, x0=None) -> dict:
    """Pipe flow limits ``A L / (n_s dt)`` that keep the plan's Courant numbers at most one.

    The surrogate Gramian is only meaningful inside this box: past it the
    upwind matrices lose stability and ``A^tau`` grows without bound. Each cap
    is widened to the flow at ``x0`` so the start point stays feasible.
    """
    z = sp.idx["z"]
    caps = {}
    for p, ns in zip(sp.net.pipes, plan.counts):
        i = int(z[sp.net.links.index(p)])
        cap = p.area * p.length / (ns * sp.net.dt_wq)
        if x0 is not None:
            cap = max(cap, abs(float(x0[i])))
        caps[i] = cap
    return caps


def _capped(mip, caps: dict):
    lb, ub = mip.qp.lb.copy(), mip.qp.ub.copy()
    for i, c in caps.items():
        lb[i] = max(lb[i], -c)
        ub[i] = min(ub[i], c)
    return replace(mip, qp=replace(mip.qp, lb=lb, ub=ub))


def _relinearizer(sp: StepProblem, caps: dict):
    state = {"sp": sp}

    def relin(x):
        state["sp"] = rebuild(state["sp"], tangent_speeds(state["sp"], x))
        return _capped(state["sp"].mip, caps)

    return relin


def _shell(sp: StepProblem, plan: SegmentPlan, x0):
    caps = courant_caps(sp, plan, x0)
    return _capped(sp.mip, caps), _relinearizer(sp, caps)


def solve_rank_informed(sp: StepProblem, x0, evaluator: GramianEvaluator, l_r: int, theta3: float,
                        min_trace: float = 1e-10, trust_radius: float = 0.5, max_iter: int = 30,
                        penalty: float = 1e4) -> SolveStatus:
    """Cost minus ``theta3 * ||W_T||_*`` subject to ``l_r ||W_T||_2 <= tr(W_T)``.

    For ``l_r >= 1`` the target Gramian must also be nonzero, written as
    ``1 - tr(W_T) / min_trace <= 0`` so that a zero Gramian violates it by one;
    otherwise the ratio row holds trivially at
    ``W_T = 0``. ``l_r`` above the number of targets is infeasible.
    """
    n_t = len(evaluator.targets)
    if l_r > n_t:
        return SolveStatus(INFEASIBLE, info={"reason": f"rank level {l_r} exceeds {n_t} targets"})
    fd, tr = _slp_indices(sp)
    cons = [lambda x: l_r * evaluator.spectral(x) - evaluator.trace(x)]
    if l_r >= 1:
        cons.append(lambda x: 1.0 - evaluator.trace(x) / min_trace)
    fun = (lambda x: -theta3 * evaluator.nuclear(x)) if theta3 != 0 else None
    shell, relin = _shell(sp, evaluator.plan, x0)
    return solve_slp(fun, shell, x0, trust_radius=trust_radius, max_iter=max_iter, constraints=cons,
                     fd_indices=fd, tr_indices=tr, penalty=penalty, relinearize=relin)


def solve_energy_driven(sp: StepProblem, x0, evaluators: Sequence[GramianEvaluator], thetas: Sequence[float],
                        trust_radius: float = 0.5, max_iter: int = 30, penalty: float = 1e4) -> SolveStatus:
    """Cost minus ``sum_i theta_i tr(W_Ti)`` with every ``tr(W_Ti) >= 0``."""
    if len(evaluators) != len(thetas):
        raise ValueError("one theta per target set is required")
    fd, tr = _slp_indices(sp)
    cons = [(lambda x, e=e: -e.trace(x)) for e in evaluators]
    if any(t != 0 for t in thetas):
        def fun(x):
            return -sum(t * e.trace(x) for t, e in zip(thetas, evaluators))
    else:
        fun = None
    shell, relin = _shell(sp, evaluators[0].plan, x0)
    return solve_slp(fun, shell, x0, trust_radius=trust_radius, max_iter=max_iter, constraints=cons,
                     fd_indices=fd, tr_indices=tr, penalty=penalty, relinearize=relin)


def solve_trace_lambda(sp: StepProblem, x0, evaluator: GramianEvaluator, theta1: float, theta2: float,
                       trust_radius: float = 0.5, max_iter: int = 30, penalty: float = 1e4) -> SolveStatus:
    """Older weighted form: cost minus ``theta1 tr(W_T) + theta2 lambda_min(W_T)``."""
    fd, tr = _slp_indices(sp)
    if theta1 == 0 and theta2 == 0:
        fun = None
    else:
        def fun(x):
            return -(theta1 * evaluator.trace(x) + theta2 * evaluator.lambda_min(x))
    shell, relin = _shell(sp, evaluator.plan, x0)
    return solve_slp(fun, shell, x0, trust_radius=trust_radius, max_iter=max_iter,
                     fd_indices=fd, tr_indices=tr, penalty=penalty, relinearize=relin)
