"""Piecewise-linear chords of link head-loss curves."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from ..netmodel import Network, Pipe, Valve


@dataclass(frozen=True)
class PwlSegment:
    slope: float
    intercept: float
    q_min: float
    q_max: float

    def __call__(self, q):
        return self.slope * q + self.intercept


@dataclass(frozen=True)
class LinkPwl:
    """Chords of one link; the first ``n_reverse`` segments mark reverse flow."""

    link_id: str
    segments: tuple
    n_reverse: int

    @property
    def breakpoints(self) -> np.ndarray:
        return np.array([s.q_min for s in self.segments] + [self.segments[-1].q_max])

    def value(self, q: float) -> float:
        for s in self.segments:
            if q <= s.q_max + 1e-12:
                return s(q)
        return self.segments[-1](q)


@dataclass(frozen=True)
class PwlPlan:
    links: Mapping[str, LinkPwl]

    def __getitem__(self, key) -> LinkPwl:
        return self.links[key]

    @property
    def n_binaries(self) -> int:
        return sum(len(l.segments) for l in self.links.values())


def pwl_curve(f: Callable[[float], float], lo: float, hi: float, n_pw: int, breakpoints=None) -> list:
    """Chord interpolation of ``f`` through ``n_pw + 1`` breakpoints on ``[lo, hi]``."""
    if not hi > lo:
        raise ValueError("zero-width flow box")
    if n_pw < 1:
        raise ValueError("N_PW must be >= 1")
    bp = np.linspace(lo, hi, n_pw + 1) if breakpoints is None else np.asarray(breakpoints, dtype=float)
    segs = []
    for a, b in zip(bp[:-1], bp[1:]):
        fa, fb = f(a), f(b)
        m = (fb - fa) / (b - a)
        segs.append(PwlSegment(m, fa - m * a, float(a), float(b)))
    return segs


def _law(link):
    if isinstance(link, Pipe):
        return lambda q: link.resistance * q * abs(q) ** (link.exponent - 1)
    m = link.minor_loss
    return lambda q: m * q * abs(q)


def pwl_pipes(net: Network, n_pw: int = 3, flow_bounds: Mapping | None = None, split_at_zero: bool = False,
              include_valves: bool = True) -> PwlPlan:
    """Chord approximations of pipe (and open valve) head-loss laws.

    Parameters
    ----------
    n_pw : int
        Segments per link.
    flow_bounds : mapping, optional
        Link id to ``(q_min, q_max)``; pipes default to their flow box,
        valves to the largest pipe box in the network.
    split_at_zero : bool
        For boxes spanning zero, place a breakpoint at zero and give the first
        ``ceil(n_pw/2)`` segments to the negative side, so every segment has a
        single flow direction. Equal spacing otherwise.

    Notes
    -----
    Reverse-direction segments are the first ``ceil(n_pw/2)`` when the box
    spans zero, all of them when the box is nonpositive, none otherwise.
    """
    flow_bounds = dict(flow_bounds or {})
    links = {}
    default_box = max((p.flow_box() for p in net.pipes), key=lambda b: b[1] - b[0], default=(-1.0, 1.0))
    members = list(net.pipes) + (list(net.valves) if include_valves else [])
    for link in members:
        if link.id in flow_bounds:
            lo, hi = flow_bounds[link.id]
        elif isinstance(link, Pipe):
            lo, hi = link.flow_box()
        else:
            lo, hi = default_box
        bp = None
        if lo < 0 < hi:
            n_rev = math.ceil(n_pw / 2)
            if split_at_zero:
                if n_pw < 2:
                    raise ValueError("splitting at zero needs N_PW >= 2")
                bp = np.concatenate([np.linspace(lo, 0.0, n_rev + 1), np.linspace(0.0, hi, n_pw - n_rev + 1)[1:]])
        elif hi <= 0:
            n_rev = n_pw
        else:
            n_rev = 0
        segs = pwl_curve(_law(link), lo, hi, n_pw, bp)
        links[link.id] = LinkPwl(link.id, tuple(segs), n_rev)
    return PwlPlan(links)
