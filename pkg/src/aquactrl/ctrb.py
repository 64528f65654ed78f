"""Controllability matrices, Gramians and their scalar metrics.

Includes an orthogonal staircase (Kalman) decomposition, target Gramians and
the denominator-free Gramian used as a smooth surrogate inside scheduling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .netmodel import Network, Pipe
from .hydsim import SegmentPlan
from .wqsim import _node_state_index, pipe_decay_rate, state_labels
from ._io import csv_text

#: Relative rank tolerance (double precision machine epsilon).
EPS_RANK = 2.2204e-16


def _mul(A, M):
    return A @ M


def ctrb_matrix(A, B, N: int) -> np.ndarray:
    """Controllability matrix ``[B, AB, ..., A^(N-1) B]``.

    Parameters
    ----------
    A : ndarray or sparse matrix, shape (n, n)
    B : ndarray, shape (n, m)
    N : int
        Number of blocks, ``N >= 1``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    blocks = [B]
    M = B
    for _ in range(N - 1):
        M = np.asarray(_mul(A, M))
        blocks.append(M)
    return np.hstack(blocks)


def gramian(A, B, N: int, method: str = "auto") -> np.ndarray:
    """Finite-horizon controllability Gramian ``sum_tau A^tau B B^T (A^T)^tau``.

    Parameters
    ----------
    method : {"auto", "recurrence", "columns"}
        ``"recurrence"`` iterates ``W <- A W A^T + B B^T``. ``"columns"``
        accumulates ``(A^tau B)(A^tau B)^T`` and is preferred for sparse ``A``
        with many states. ``"auto"`` picks columns for sparse input.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    if method == "auto":
        method = "columns" if sp.issparse(A) else "recurrence"
    if method == "recurrence":
        Ad = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
        BB = B @ B.T
        W = BB.copy()
        for _ in range(N - 1):
            W = Ad @ W @ Ad.T + BB
        return 0.5 * (W + W.T)
    W = np.zeros((A.shape[0], A.shape[0]))
    M = B
    for tau in range(N):
        W += M @ M.T
        if tau < N - 1:
            M = np.asarray(_mul(A, M))
    return 0.5 * (W + W.T)


def numeric_rank(M, tol: float = EPS_RANK) -> int:
    """Number of singular values ``>= tol * sigma_max``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s >= tol * s[0]))


@dataclass
class KalmanDecomp:
    """Orthogonal controllable/uncontrollable split ``Abar = T A T^T``."""

    T: np.ndarray
    Abar: np.ndarray
    Bbar: np.ndarray
    k: int

    @property
    def A11(self):
        return self.Abar[: self.k, : self.k]

    @property
    def A12(self):
        return self.Abar[: self.k, self.k:]

    @property
    def A21(self):
        return self.Abar[self.k:, : self.k]

    @property
    def A22(self):
        return self.Abar[self.k:, self.k:]

    @property
    def B1(self):
        return self.Bbar[: self.k]


def kalman_decompose(A, B, tol: float | None = None) -> KalmanDecomp:
    """Controllability staircase via orthogonal block Arnoldi.

    Each new Krylov block ``A V`` is orthogonalized (twice) against the basis
    found so far and its numerical rank decided by SVD with absolute tolerance
    ``tol``; the default is ``1e-11 * max(||[A, B]||, 1)``, well above the
    roundoff that repeated deflation leaves in spent Krylov directions. The
    basis is then completed to an orthonormal ``T^T``.

    Returns
    -------
    KalmanDecomp
        ``T`` is orthogonal, so ``T^{-1} = T^T``.
    """
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    m = B.shape[1]
    scale = max(np.linalg.norm(A, 2) if n else 0.0, np.linalg.norm(B, 2) if B.size else 0.0)
    if tol is None:
        tol = 1e-11 * max(scale, 1.0)

    def new_dirs(Z, Q):
        if Q.shape[1]:
            for _ in range(2):
                Z = Z - Q @ (Q.T @ Z)
        if Z.size == 0:
            return Z[:, :0]
        U, s, _ = np.linalg.svd(Z, full_matrices=False)
        r = int(np.sum(s > tol))
        return U[:, :r]

    Q = np.zeros((n, 0))
    V = new_dirs(B, Q)
    while V.shape[1] and Q.shape[1] < n:
        Q = np.hstack([Q, V])
        V = new_dirs(A @ V, Q)
    k = Q.shape[1]
    if k < n:
        rest = sla.null_space(Q.T) if k else np.eye(n)
        Qf = np.hstack([Q, rest])
    else:
        Qf = Q
    T = Qf.T
    return KalmanDecomp(T=T, Abar=T @ A @ T.T, Bbar=T @ B, k=k)


@dataclass
class GramianReport:
    W: np.ndarray
    N: int
    n: int
    rank: int
    trace: float
    logdet: float
    lambda_min: float
    tol: float

    @property
    def rank_pct(self) -> float:
        return 100.0 * self.rank / self.n if self.n else float("nan")

    @property
    def full_rank(self) -> bool:
        return self.rank == self.n


def _subspace_metrics(W: np.ndarray, tol: float):
    """Rank, logdet and lambda_min of ``W`` restricted to its range."""
    if W.size == 0:
        return 0, float("nan"), float("nan")
    lam, V = np.linalg.eigh(0.5 * (W + W.T))
    lmax = lam[-1]
    if lmax <= 0:
        return 0, float("nan"), float("nan")
    keep = lam >= tol * lmax
    k = int(keep.sum())
    Vk = V[:, keep]
    Wk = Vk.T @ W @ Vk
    try:
        L = np.linalg.cholesky(0.5 * (Wk + Wk.T))
        logdet = float(2.0 * np.sum(np.log(np.diag(L))))
    except np.linalg.LinAlgError:
        logdet = float("nan")
    return k, logdet, float(lam[keep].min())


def gramian_metrics(A, B, N: int, tol: float = EPS_RANK, C=None, W=None) -> GramianReport:
    """Rank, trace, logdet and lambda_min of the Gramian.

    Trace and rank use the whole Gramian (or ``C W C^T`` when a selector ``C``
    is given). logdet and lambda_min are evaluated on the controllable
    subspace, i.e. on ``W`` restricted to the span of its eigenvectors with
    eigenvalue at least ``tol * lambda_max``. When nothing is controllable both
    are reported as NaN.
    """
    if W is None:
        W = gramian(A, B, N)
    if C is not None:
        C = np.asarray(C, dtype=float)
        W = C @ W @ C.T
    rank = numeric_rank(W, tol) if W.size else 0
    k, logdet, lmin = _subspace_metrics(W, tol)
    if rank == 0:
        logdet, lmin = float("nan"), float("nan")
    return GramianReport(W=W, N=N, n=W.shape[0], rank=rank, trace=float(np.trace(W)),
                         logdet=logdet, lambda_min=lmin, tol=tol)


def target_gramian(A, B, N: int, C_T) -> np.ndarray:
    """Target Gramian ``C_T W C_T^T`` accumulated without forming ``W``."""
    C_T = np.atleast_2d(np.asarray(C_T, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Wt = np.zeros((C_T.shape[0], C_T.shape[0]))
    M = B
    for tau in range(N):
        Y = C_T @ M
        Wt += Y @ Y.T
        if tau < N - 1:
            M = np.asarray(_mul(A, M))
    return 0.5 * (Wt + Wt.T)


def target_selector(labels: Sequence[str], targets: Sequence[str]) -> np.ndarray:
    idx = {lab: i for i, lab in enumerate(labels)}
    C = np.zeros((len(targets), len(labels)))
    for r, t in enumerate(targets):
        if t not in idx:
            raise KeyError(f"unknown target '{t}'")
        C[r, idx[t]] = 1.0
    if len(set(targets)) != len(targets):
        raise ValueError("target rows must be distinct")
    return C


def gramian_csv(reports: Sequence[GramianReport], config=None) -> str:
    rows = []
    for step, r in enumerate(reports):
        rows.append((step, r.n, r.rank, r.rank_pct, r.trace, r.logdet, r.lambda_min))
    return csv_text(["step", "n_sub", "rank", "rank_pct", "trace", "logdet", "lambda_min"], rows, config)


# ---------------------------------------------------------------------------
# denominator-free surrogate


def reference_denominators(net: Network, flows, tank_heads, demands, dt: float | None = None) -> dict:
    """Node denominators of the exact model at a reference hydraulic point.

    Junctions: demand plus total outflow. Tanks: volume after one WQ step.
    Zero denominators are replaced by one.
    """
    dt = net.dt_wq if dt is None else dt
    flows = np.asarray(flows, dtype=float)
    out = {j.id: float(d) for j, d in zip(net.junctions, demands)}
    inflow = {t.id: 0.0 for t in net.tanks}
    outflow = {t.id: 0.0 for t in net.tanks}
    for li, link in enumerate(net.links):
        q = flows[li]
        up, down = (link.start, link.end) if q >= 0 else (link.end, link.start)
        if up in out:
            out[up] += abs(q)
        if down in inflow:
            inflow[down] += abs(q)
        if up in outflow:
            outflow[up] += abs(q)
    for i, tk in enumerate(net.tanks):
        out[tk.id] = tk.volume(tank_heads[i]) + dt * (inflow[tk.id] - outflow[tk.id])
    return {k: (v if abs(v) > 1e-12 else 1.0) for k, v in out.items()}


def fixed_directions(net: Network, flows) -> dict:
    """Direction weights ``(d_f, d_r)`` from flow signs (zero flow counts as forward)."""
    flows = np.asarray(flows, dtype=float)
    return {p.id: ((1.0, 0.0) if flows[i] >= 0 else (0.0, 1.0)) for i, p in enumerate(net.pipes)}


def poly_wq_matrices(net: Network, flows, tank_heads, demands, plan: SegmentPlan, directions: Mapping,
                     denominators: Mapping | None = None, boosters=None, dt: float | None = None):
    """Water-quality matrices with every flow-dependent denominator cleared.

    Each coefficient of the exact model is replaced by its numerator divided by
    a constant: ``1`` when ``denominators`` is None (the literal cleared form)
    or the supplied per-node reference value. Entries of ``A`` and ``B`` are
    then polynomials in the flows. Direction-dependent entries carry the
    direction weight ``d_f`` or ``d_r`` of their pipe, and ``|q| = q (d_f - d_r)``.

    Polynomial degree in the flows, per entry: junction and pump rows degree 1
    (degree 2 for pipe inflows, flow times direction weight), tank diagonal
    degree 1 in flows plus the constant volume term, pipe segment entries
    degree 1.

    Returns
    -------
    A : scipy.sparse.csr_matrix
    B : ndarray
    """
    dt = net.dt_wq if dt is None else dt
    flows = np.asarray(flows, dtype=float)
    boosters = net.boosters() if boosters is None else list(boosters)
    labels = state_labels(net, plan)
    n = len(labels)
    node_idx = _node_state_index(net)
    nn = len(node_idx)
    link_state = {}
    k = nn
    for link in net.pumps + net.valves:
        link_state[link.id] = k
        k += 1
    seg_start = {}
    for p, ns in zip(net.pipes, plan.counts):
        seg_start[p.id] = k
        k += ns

    def den(node):
        if denominators is None:
            return 1.0
        return denominators[node]

    rows, cols, vals = [], [], []

    def put(i, j, v):
        if v != 0.0:
            rows.append(i)
            cols.append(j)
            vals.append(v)

    # per node: list of (source state, weighted inflow magnitude); outflow totals
    inflow = {nid: [] for nid in node_idx}
    outflow = {nid: 0.0 for nid in node_idx}
    for li, link in enumerate(net.links):
        q = flows[li]
        if isinstance(link, Pipe):
            if link.id not in directions:
                raise KeyError(f"missing binaries for bidirectional pipe {link.id}")
            d_f, d_r = directions[link.id]
            mag = q * (d_f - d_r)
            ns = plan.counts[net.pipes.index(link)]
            first = seg_start[link.id]
            inflow[link.end].append((first + ns - 1, mag * d_f))
            inflow[link.start].append((first, mag * d_r))
            outflow[link.start] += mag * d_f
            outflow[link.end] += mag * d_r
        else:
            src = link_state[link.id]
            if q >= 0:
                inflow[link.end].append((src, q))
                outflow[link.start] += q
            else:
                inflow[link.start].append((src, -q))
                outflow[link.end] += -q

    for r in net.reservoirs:
        put(node_idx[r.id], node_idx[r.id], 1.0)
    B = np.zeros((n, len(boosters)))
    bcol = {b.node: c for c, b in enumerate(boosters)}
    for jn in net.junctions:
        i = node_idx[jn.id]
        c = den(jn.id)
        for src, q in inflow[jn.id]:
            put(i, src, q / c)
        if jn.id in bcol:
            B[i, bcol[jn.id]] = boosters[bcol[jn.id]].flow / c
    for t_i, tk in enumerate(net.tanks):
        i = node_idx[tk.id]
        c = den(tk.id)
        V = tk.volume(tank_heads[t_i])
        put(i, i, ((1.0 - tk.bulk_decay * dt) * V - outflow[tk.id] * dt) / c)
        for src, q in inflow[tk.id]:
            put(i, src, q * dt / c)
        if tk.id in bcol:
            B[i, bcol[tk.id]] = boosters[bcol[tk.id]].volume / c
    for li0, link in enumerate(net.pumps + net.valves):
        i = link_state[link.id]
        q = flows[net.n_P + li0]
        put(i, node_idx[link.start] if q >= 0 else node_idx[link.end], 1.0)
    for p, ns in zip(net.pipes, plan.counts):
        li = net.pipes.index(p)
        d_f, d_r = directions[p.id]
        mag = flows[li] * (d_f - d_r)
        kp = pipe_decay_rate(p.decay, p.radius)
        lam = mag / p.area * dt / (p.length / ns)
        first = seg_start[p.id]
        for s in range(ns):
            i = first + s
            put(i, i, 1.0 - lam - kp * dt)
            up_f = node_idx[p.start] if s == 0 else i - 1
            up_r = node_idx[p.end] if s == ns - 1 else i + 1
            put(i, up_f, lam * d_f)
            put(i, up_r, lam * d_r)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A.sum_duplicates()
    return A, B


def approx_target_gramian(net: Network, upsilon, plan: SegmentPlan, C_T, N: int,
                          denominators: Mapping | None = None, directions: Mapping | None = None,
                          boosters=None) -> np.ndarray:
    """Denominator-free target Gramian evaluated at a hydraulic point.

    Parameters
    ----------
    upsilon : object
        Provides ``flows``, ``tank_heads`` and ``demands`` arrays for the step
        and optionally ``directions``, a mapping pipe id to ``(d_f, d_r)``
        built from the segment-selection binaries.
    denominators : mapping, optional
        Per-node constants replacing the cleared denominators; ``None`` uses
        the literal cleared form (all ones).
    directions : mapping, optional
        Overrides ``upsilon.directions``; when neither is given the flow signs
        fix the directions.
    """
    flows = np.asarray(upsilon.flows, dtype=float)
    if directions is None:
        directions = getattr(upsilon, "directions", None)
    if directions is None:
        directions = fixed_directions(net, flows)
    A, B = poly_wq_matrices(net, flows, upsilon.tank_heads, upsilon.demands, plan, directions,
                            denominators, boosters)
    return target_gramian(A, B, N, C_T)
