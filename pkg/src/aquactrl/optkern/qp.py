"""Dense primal active-set solver for convex quadratic programs.

Solves::

    minimize    0.5 x^T P x + c^T x + c0
    subject to  A_eq x = b_eq,  A_ub x <= b_ub,  lb <= x <= ub

with ``P`` symmetric positive semidefinite. A feasible starting point comes
from an LP feasibility phase (HiGHS through :func:`scipy.optimize.linprog`);
the active-set iteration then handles singular reduced Hessians by moving
along zero-curvature descent directions.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

log = logging.getLogger(__name__)

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
ITERATION_LIMIT = "IterationLimit"
UNBOUNDED = "Unbounded"


@dataclass
class QpProblem:
    """Convex QP data. Missing blocks may be ``None``."""

    P: np.ndarray
    c: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    c0: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.size
        self.P = np.zeros((n, n)) if self.P is None else np.asarray(self.P, dtype=float).reshape(n, n)
        self.A_eq = np.zeros((0, n)) if self.A_eq is None else np.asarray(self.A_eq, dtype=float).reshape(-1, n)
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).reshape(-1)
        self.A_ub = np.zeros((0, n)) if self.A_ub is None else np.asarray(self.A_ub, dtype=float).reshape(-1, n)
        self.b_ub = np.zeros(0) if self.b_ub is None else np.asarray(self.b_ub, dtype=float).reshape(-1)
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(n).copy()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).reshape(n).copy()
        if self.A_eq.shape[0] != self.b_eq.size or self.A_ub.shape[0] != self.b_ub.size:
            raise ValueError("constraint matrix and right-hand side sizes differ")

    @property
    def n(self) -> int:
        return self.c.size

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.c @ x + self.c0)

    def max_violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        v = 0.0
        if self.A_eq.size:
            v = max(v, float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        if self.A_ub.size:
            v = max(v, float(np.max(self.A_ub @ x - self.b_ub, initial=0.0)))
        v = max(v, float(np.max(self.lb - x, initial=0.0)), float(np.max(x - self.ub, initial=0.0)))
        return v

    def with_rows(self, A_ub=None, b_ub=None, A_eq=None, b_eq=None) -> "QpProblem":
        """Copy with extra constraint rows appended."""
        out = replace(self, lb=self.lb.copy(), ub=self.ub.copy())
        if A_ub is not None and len(b_ub):
            out.A_ub = np.vstack([self.A_ub, np.atleast_2d(A_ub)])
            out.b_ub = np.concatenate([self.b_ub, np.atleast_1d(b_ub)])
        if A_eq is not None and len(b_eq):
            out.A_eq = np.vstack([self.A_eq, np.atleast_2d(A_eq)])
            out.b_eq = np.concatenate([self.b_eq, np.atleast_1d(b_eq)])
        return out


@dataclass
class SolveStatus:
    status: str
    x: np.ndarray | None = None
    objective: float = float("nan")
    iterations: int = 0
    nodes: int = 0
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def _check_psd(P):
    if not P.size:
        return
    if not np.allclose(P, P.T, atol=1e-10 * (1 + np.abs(P).max())):
        raise ValueError("non-PSD cost: matrix not symmetric")
    lam = np.linalg.eigvalsh(0.5 * (P + P.T))
    if lam[0] < -1e-10 * (1.0 + abs(lam[-1])):
        raise ValueError(f"non-PSD cost: minimum eigenvalue {lam[0]:.3e}")


def find_feasible(p: QpProblem):
    """LP feasibility phase.

    Returns
    -------
    x : ndarray or None
        A feasible point, or None when the constraints are inconsistent.
    certificate : dict or None
        For infeasible problems, multipliers of the elastic LP
        ``min 1^T (s+ + s- + t)``; a nonzero optimum with these multipliers
        separates the constraint set from feasibility.
    """
    n = p.n
    if np.any(p.lb > p.ub):
        bad = np.flatnonzero(p.lb > p.ub)
        return None, {"empty_bounds": bad.tolist()}
    bounds = list(zip(np.where(np.isfinite(p.lb), p.lb, None), np.where(np.isfinite(p.ub), p.ub, None)))
    res = linprog(np.zeros(n), A_ub=p.A_ub if p.A_ub.size else None, b_ub=p.b_ub if p.b_ub.size else None,
                  A_eq=p.A_eq if p.A_eq.size else None, b_eq=p.b_eq if p.b_eq.size else None,
                  bounds=bounds, method="highs")
    if res.status == 0:
        return np.asarray(res.x, dtype=float), None
    # elastic LP for a certificate
    me, mi = p.A_eq.shape[0], p.A_ub.shape[0]
    cost = np.concatenate([np.zeros(n), np.ones(2 * me + mi)])
    # sparse, since the elastic columns are identities
    Aeq = sparse.hstack([sparse.csr_matrix(p.A_eq), sparse.identity(me), -sparse.identity(me),
                         sparse.csr_matrix((me, mi))], format="csr") if me else None
    Aub = sparse.hstack([sparse.csr_matrix(p.A_ub), sparse.csr_matrix((mi, 2 * me)), -sparse.identity(mi)],
                        format="csr") if mi else None
    eb = bounds + [(0, None)] * (2 * me + mi)
    el = linprog(cost, A_ub=Aub, b_ub=p.b_ub if mi else None, A_eq=Aeq, b_eq=p.b_eq if me else None,
                 bounds=eb, method="highs")
    cert = {"lp_status": int(res.status)}
    if el.status == 0:
        cert["elastic_objective"] = float(el.fun)
        cert["eq_multipliers"] = np.asarray(el.eqlin.marginals).tolist() if me else []
        cert["ub_multipliers"] = np.asarray(el.ineqlin.marginals).tolist() if mi else []
    return None, cert


def _null_space(M, n, tol=1e-10):
    if M.shape[0] == 0:
        return np.eye(n)
    _, s, Vt = np.linalg.svd(M, full_matrices=True)
    r = int(np.sum(s > tol * max(1.0, s[0] if s.size else 0.0)))
    return Vt[r:].T


def solve_qp(p: QpProblem, x0=None, max_iter: int | None = None, tol: float = 1e-9) -> SolveStatus:
    """Solve a convex QP by a primal active-set method.

    Parameters
    ----------
    p : QpProblem
    x0 : ndarray, optional
        Warm start; used only when feasible.
    max_iter : int, optional
        Defaults to ``50 * (n + m)``.

    Returns
    -------
    SolveStatus
        ``Optimal`` with the KKT residual in ``info["kkt_residual"]``,
        ``Infeasible`` with ``info["certificate"]``, ``Unbounded`` or
        ``IterationLimit``.

    Raises
    ------
    ValueError
        If ``P`` is not positive semidefinite.
    """
    _check_psd(p.P)
    n = p.n
    # inequality rows: general, then finite upper bounds, then finite lower bounds
    ub_idx = np.flatnonzero(np.isfinite(p.ub))
    lb_idx = np.flatnonzero(np.isfinite(p.lb))
    G = np.vstack([p.A_ub, np.eye(n)[ub_idx], -np.eye(n)[lb_idx]])
    h = np.concatenate([p.b_ub, p.ub[ub_idx], -p.lb[lb_idx]])
    E, f = p.A_eq, p.b_eq
    m = G.shape[0]
    max_iter = 50 * (n + m + E.shape[0]) if max_iter is None else max_iter
    scale = 1.0 + max(np.abs(G).max(initial=0.0), np.abs(E).max(initial=0.0))

    x = None
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float)
        if p.max_violation(x0) <= tol * 10:
            x = x0.copy()
    if x is None:
        x, cert = find_feasible(p)
        if x is None:
            return SolveStatus(INFEASIBLE, info={"certificate": cert})
    x = np.clip(x, p.lb, p.ub)

    # initial working set: active rows that keep [E; G_W] full row rank
    # (orthonormal basis of the accepted rows, grown by Gram-Schmidt)
    W: list[int] = []
    slack = h - G @ x
    if E.size:
        _, sv, Vt = np.linalg.svd(E, full_matrices=False)
        Q = Vt[: int(np.sum(sv > 1e-10 * scale))]
    else:
        Q = np.zeros((0, n))
    for i in np.flatnonzero(np.abs(slack) <= 1e-9 * scale):
        if Q.shape[0] >= n:
            break
        r = G[i] - Q.T @ (Q @ G[i])
        r -= Q.T @ (Q @ r)
        nr = np.linalg.norm(r)
        if nr > 1e-10 * scale:
            Q = np.vstack([Q, r / nr])
            W.append(int(i))

    zero_steps = 0
    it = 0
    g = p.P @ x + p.c
    while it < max_iter:
        it += 1
        g = p.P @ x + p.c
        M = np.vstack([E, G[W]]) if W else E
        Z = _null_space(M, n)
        curvature_free = False
        if Z.shape[1] == 0:
            step = np.zeros(n)
        else:
            Hr = Z.T @ p.P @ Z
            gr = Z.T @ g
            d, U = np.linalg.eigh(0.5 * (Hr + Hr.T))
            dmax = max(abs(d).max(initial=0.0), 1.0)
            pos = d > 1e-11 * dmax
            ug = U.T @ gr
            null_part = U[:, ~pos] @ ug[~pos]
            if np.linalg.norm(null_part) > 1e-10 * (1.0 + np.linalg.norm(g)):
                step = -Z @ null_part
                curvature_free = True
            else:
                step = Z @ (-(U[:, pos] @ (ug[pos] / d[pos])))
        if np.linalg.norm(step) <= 1e-12 * (1.0 + np.linalg.norm(x)):
            # multipliers: E^T mu_E + G_W^T mu_W = -g
            if M.shape[0]:
                mu = np.linalg.lstsq(M.T, -g, rcond=None)[0]
            else:
                mu = np.zeros(0)
            mu_W = mu[E.shape[0]:]
            if mu_W.size == 0 or mu_W.min() >= -1e-9 * (1.0 + np.abs(g).max()):
                resid = g + (M.T @ mu if M.shape[0] else 0.0)
                return SolveStatus(OPTIMAL, x=x, objective=p.objective(x), iterations=it,
                                   info={"kkt_residual": float(np.max(np.abs(resid), initial=0.0)),
                                         "working_set": list(W)})
            neg = np.flatnonzero(mu_W < -1e-9 * (1.0 + np.abs(g).max()))
            if zero_steps > 2 * n:
                drop = int(neg[np.argmin([W[j] for j in neg])])  # Bland
            else:
                drop = int(np.argmin(mu_W))
            W.pop(drop)
            continue
        Gp = G @ step
        alpha = np.inf if curvature_free else 1.0
        block = -1
        mask = Gp > 1e-12 * scale * np.linalg.norm(step)
        mask[W] = False
        cand = np.flatnonzero(mask)
        if cand.size:
            ratios = np.maximum((h[cand] - G[cand] @ x) / Gp[cand], 0.0)
            amin = ratios.min()
            if amin < alpha - 1e-15:
                # lowest index among ties
                alpha, block = amin, int(cand[np.flatnonzero(ratios <= amin + 1e-15)[0]])
        if not np.isfinite(alpha):
            return SolveStatus(UNBOUNDED, x=x, objective=-np.inf, iterations=it)
        x = x + alpha * step
        zero_steps = zero_steps + 1 if alpha <= 1e-14 else 0
        if block >= 0:
            W.append(block)
    return SolveStatus(ITERATION_LIMIT, x=x, objective=p.objective(x), iterations=it)
