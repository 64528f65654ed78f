"""Branch-and-bound for convex QPs with binary variables.

Optional convex quadratic constraints ``0.5 x^T Q x + q^T x <= r`` are
enforced by outer-approximation (tangent) cuts at every relaxation.
"""
from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field

import numpy as np

from .qp import (INFEASIBLE, ITERATION_LIMIT, OPTIMAL, UNBOUNDED, QpProblem, SolveStatus,
                 solve_qp)

log = logging.getLogger(__name__)


@dataclass
class QuadConstraint:
    """Convex constraint ``0.5 x^T Q x + q^T x <= r``."""

    Q: np.ndarray
    q: np.ndarray
    r: float

    def value(self, x) -> float:
        return float(0.5 * x @ self.Q @ x + self.q @ x - self.r)

    def grad(self, x) -> np.ndarray:
        return self.Q @ x + self.q


@dataclass
class MipProblem:
    """QP with a set of binary variables and optional convex quadratic constraints."""

    qp: QpProblem
    binaries: tuple = ()
    quad: list = field(default_factory=list)
    node_limit: int = 20000
    max_binaries: int = 64

    def __post_init__(self):
        self.binaries = tuple(sorted(int(i) for i in self.binaries))
        for Qc in self.quad:
            lam = np.linalg.eigvalsh(0.5 * (Qc.Q + Qc.Q.T))
            if lam.size and lam[0] < -1e-10 * (1 + abs(lam[-1])):
                raise ValueError("quadratic constraint matrix is not PSD")


def _relax(p: MipProblem, lb, ub, cuts, x0, tol=1e-7, max_rounds=60) -> SolveStatus:
    qp = p.qp
    node = QpProblem(qp.P, qp.c, qp.A_eq, qp.b_eq, qp.A_ub, qp.b_ub, lb, ub, qp.c0)
    rounds = 0
    iters = 0
    while True:
        if cuts:
            A = np.array([c[0] for c in cuts])
            b = np.array([c[1] for c in cuts])
            prob = node.with_rows(A_ub=A, b_ub=b)
        else:
            prob = node
        res = solve_qp(prob, x0=x0)
        iters += res.iterations
        if res.status != OPTIMAL or not p.quad:
            res.iterations = iters
            return res
        worst = 0.0
        for Qc in p.quad:
            v = Qc.value(res.x)
            if v > tol:
                gr = Qc.grad(res.x)
                # g(x*) + grad.(x - x*) <= 0
                cuts.append((gr, float(gr @ res.x - v)))
                worst = max(worst, v)
        rounds += 1
        if worst <= tol or rounds >= max_rounds:
            res.iterations = iters
            res.info["oa_rounds"] = rounds
            res.info["quad_violation"] = worst
            return res
        x0 = res.x


def solve_miqp(p: MipProblem, trace=None, gap_tol: float = 1e-9) -> SolveStatus:
    """Best-bound branch and bound.

    Branches on the most fractional binary (lowest index on ties) and explores
    open nodes in order of their relaxation bound, ties broken by creation
    order, which makes the search deterministic.

    Parameters
    ----------
    p : MipProblem
    trace : callable, optional
        Receives text lines ``"node <id> bound <b> incumbent <f>"``.
    gap_tol : float
        Relative tolerance for pruning against the incumbent.

    Returns
    -------
    SolveStatus
        ``IterationLimit`` keeps the incumbent when the node limit is hit.
    """
    qp = p.qp
    nb = len(p.binaries)
    if nb > p.max_binaries:
        raise ValueError(f"{nb} binaries exceed the budget of {p.max_binaries}")
    bins = np.array(p.binaries, dtype=int)
    lb0 = qp.lb.copy()
    ub0 = qp.ub.copy()
    if nb:
        lb0[bins] = np.maximum(lb0[bins], 0.0)
        ub0[bins] = np.minimum(ub0[bins], 1.0)
        lb0[bins] = np.ceil(lb0[bins] - 1e-9)
        ub0[bins] = np.floor(ub0[bins] + 1e-9)
    cuts: list = []
    depth_cap = 2 * nb
    counter = 0
    best_x, best_f = None, np.inf
    heap = []
    total_iter = 0

    def cutoff():
        return np.inf if not np.isfinite(best_f) else best_f - gap_tol * (1.0 + abs(best_f))

    def push(bound, lb, ub, depth, x):
        nonlocal counter
        heapq.heappush(heap, (bound, counter, lb, ub, depth, x))
        counter += 1

    root = _relax(p, lb0, ub0, cuts, None)
    total_iter += root.iterations
    if root.status == UNBOUNDED:
        return SolveStatus(UNBOUNDED, iterations=total_iter, nodes=1)
    if root.status != OPTIMAL:
        return SolveStatus(root.status if root.status == INFEASIBLE else root.status,
                           iterations=total_iter, nodes=1, info=root.info)
    push(root.objective, lb0, ub0, 0, root.x)
    nodes = 1
    limit_hit = False
    while heap:
        bound, nid, lb, ub, depth, x = heapq.heappop(heap)
        if bound >= cutoff():
            continue
        if trace is not None:
            trace(f"node {nid} bound {bound:.12g} incumbent {best_f:.12g}")
        frac = np.abs(x[bins] - np.round(x[bins])) if nb else np.zeros(0)
        if nb == 0 or frac.max() <= 1e-6:
            # integral relaxation: polish with binaries fixed
            if nb:
                lbf, ubf = lb.copy(), ub.copy()
                lbf[bins] = ubf[bins] = np.round(x[bins])
                res = _relax(p, lbf, ubf, cuts, x)
                total_iter += res.iterations
                nodes += 1
                if res.status != OPTIMAL:
                    continue
                x, bound = res.x, res.objective
            if best_x is None or bound < cutoff():
                best_x, best_f = x.copy(), bound
            continue
        if depth >= depth_cap:
            continue
        if nodes >= p.node_limit:
            limit_hit = True
            break
        # most fractional, lowest index on ties
        score = np.abs(x[bins] - 0.5)
        j = int(bins[np.flatnonzero(score <= score.min() + 1e-12)[0]])
        for val in (0.0, 1.0):
            lbc, ubc = lb.copy(), ub.copy()
            lbc[j] = ubc[j] = val
            res = _relax(p, lbc, ubc, cuts, x)
            total_iter += res.iterations
            nodes += 1
            if res.status == OPTIMAL and res.objective < cutoff():
                push(res.objective, lbc, ubc, depth + 1, res.x)
    if best_x is None:
        status = ITERATION_LIMIT if limit_hit else INFEASIBLE
        return SolveStatus(status, iterations=total_iter, nodes=nodes)
    status = ITERATION_LIMIT if limit_hit else OPTIMAL
    if nb:
        best_x = best_x.copy()
        best_x[bins] = np.round(best_x[bins])
    return SolveStatus(status, x=best_x, objective=best_f, iterations=total_iter, nodes=nodes,
                       info={"cuts": len(cuts)})
