"""Successive linear programming for smooth nonconvex terms.

The objective is ``shell(x) + f(x)`` where ``shell`` is the convex quadratic
objective of a :class:`MipProblem` and ``f`` is smooth but nonconvex. Smooth
constraints ``g_i(x) <= 0`` are linearized with elastic slacks. Every
subproblem is a MIQP restricted to a box trust region around the incumbent.
"""
from __future__ import annotations

import logging
from typing import Callable, Sequence

import numpy as np

from .miqp import MipProblem, solve_miqp
from .qp import INFEASIBLE, ITERATION_LIMIT, OPTIMAL, QpProblem, SolveStatus

log = logging.getLogger(__name__)


def fd_gradient(fun: Callable, x, idx=None, rel_step: float = 1e-6) -> np.ndarray:
    """Central differences with step ``rel_step * (1 + |x_i|)`` on coordinates ``idx``."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    idx = range(x.size) if idx is None else idx
    for i in idx:
        h = rel_step * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (fun(xp) - fun(xm)) / (2 * h)
    return g


def _checked(v, what):
    v = float(v)
    if not np.isfinite(v):
        raise FloatingPointError(f"evaluator returned {v} for {what}")
    return v


def solve_slp(fun: Callable | None, shell: MipProblem, x0, trust_radius: float = 1.0, max_iter: int = 50,
              grad: Callable | None = None, constraints: Sequence[Callable] = (),
              fd_indices=None, tr_indices=None, penalty: float = 1e4, relinearize: Callable | None = None,
              feas_tol: float = 1e-7, stat_tol: float = 1e-9) -> SolveStatus:
    """Trust-region SLP on ``shell.qp.objective(x) + fun(x)``.

    Parameters
    ----------
    fun : callable or None
        Nonconvex objective term; ``None`` means zero.
    shell : MipProblem
        Convex constraints, binaries and convex quadratic objective.
    x0 : ndarray
        Feasible initial point (usually the decoupled optimum).
    trust_radius : float
        Initial half-width of the box on ``tr_indices``.
    grad : callable, optional
        Gradient of ``fun``; central differences over ``fd_indices`` otherwise.
    constraints : sequence of callables
        Smooth ``g_i(x) <= 0``.
    relinearize : callable, optional
        ``relinearize(x) -> MipProblem`` returning a refreshed shell after an
        accepted step (used for convex-concave tangent updates).

    Returns
    -------
    SolveStatus
        ``Optimal`` at a stationary point (``info["local"]`` is True),
        ``Infeasible`` if the smooth constraints cannot be met, or
        ``IterationLimit`` with the incumbent.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    tr_idx = np.arange(n) if tr_indices is None else np.asarray(tr_indices, dtype=int)
    f = (lambda z: 0.0) if fun is None else fun

    def gfun(z):
        if fun is None:
            return np.zeros(n)
        if grad is not None:
            return np.asarray(grad(z), dtype=float)
        return fd_gradient(fun, z, fd_indices)

    def gvals(z):
        return np.array([_checked(g(z), "constraint") for g in constraints])

    def merit(z, sh):
        viol = np.maximum(gvals(z), 0.0).sum() if constraints else 0.0
        return sh.qp.objective(z) + _checked(f(z), "objective") + penalty * viol

    radius = float(trust_radius)
    phi = merit(x, shell)
    history = [phi]
    accepted = 0
    for it in range(1, max_iter + 1):
        gx = gfun(x)
        if not np.all(np.isfinite(gx)):
            raise FloatingPointError("evaluator returned non-finite gradient")
        cons_val = gvals(x) if constraints else np.zeros(0)
        cons_grad = [fd_gradient(g, x, fd_indices) for g in constraints]
        nc = len(constraints)
        qp = shell.qp
        # augmented variables: [x, sigma]
        P = np.zeros((n + nc, n + nc))
        P[:n, :n] = qp.P
        c = np.concatenate([qp.c + gx, np.full(nc, penalty)])
        c0 = qp.c0 + f(x) - gx @ x
        A_eq = np.hstack([qp.A_eq, np.zeros((qp.A_eq.shape[0], nc))])
        rows = [np.hstack([qp.A_ub, np.zeros((qp.A_ub.shape[0], nc))])]
        rhs = [qp.b_ub]
        for i in range(nc):
            r = np.zeros(n + nc)
            r[:n] = cons_grad[i]
            r[n + i] = -1.0
            rows.append(r[None, :])
            rhs.append(np.array([cons_grad[i] @ x - cons_val[i]]))
        lb = np.concatenate([qp.lb, np.zeros(nc)])
        ub = np.concatenate([qp.ub, np.full(nc, np.inf)])
        lb[tr_idx] = np.maximum(lb[tr_idx], x[tr_idx] - radius)
        ub[tr_idx] = np.minimum(ub[tr_idx], x[tr_idx] + radius)
        sub = MipProblem(QpProblem(P, c, A_eq, qp.b_eq, np.vstack(rows), np.concatenate(rhs), lb, ub, c0),
                         binaries=shell.binaries, quad=shell.quad, node_limit=shell.node_limit,
                         max_binaries=shell.max_binaries)
        res = solve_miqp(sub)
        if res.x is None:
            radius *= 0.5
            if radius < 1e-10:
                break
            continue
        xn = res.x[:n]
        model = res.objective
        pred = phi - model
        if pred <= stat_tol * (1.0 + abs(phi)):
            viol = float(np.max(gvals(x), initial=0.0)) if constraints else 0.0
            status = OPTIMAL if viol <= feas_tol else INFEASIBLE
            return SolveStatus(status, x=x, objective=shell.qp.objective(x) + f(x), iterations=it,
                               info={"local": True, "radius": radius, "accepted": accepted,
                                     "constraint_violation": viol, "merit_history": history})
        new_shell = relinearize(xn) if relinearize is not None else shell
        phin = merit(xn, shell)
        actual = phi - phin
        if actual >= 0.1 * pred:
            x, shell = xn, new_shell
            phi = merit(x, shell)
            history.append(phi)
            accepted += 1
            if actual >= 0.75 * pred:
                radius *= 2.0
        else:
            radius *= 0.5
            if radius < 1e-10:
                viol = float(np.max(gvals(x), initial=0.0)) if constraints else 0.0
                status = OPTIMAL if viol <= feas_tol else INFEASIBLE
                return SolveStatus(status, x=x, objective=shell.qp.objective(x) + f(x), iterations=it,
                                   info={"local": True, "radius": radius, "accepted": accepted,
                                         "constraint_violation": viol, "merit_history": history})
    viol = float(np.max(gvals(x), initial=0.0)) if constraints else 0.0
    return SolveStatus(ITERATION_LIMIT, x=x, objective=shell.qp.objective(x) + f(x), iterations=max_iter,
                       info={"local": True, "accepted": accepted, "constraint_violation": viol,
                             "merit_history": history})
