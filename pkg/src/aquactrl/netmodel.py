"""Network description: elements, units, demand patterns and JSON ingestion.

All quantities are stored in base units (ft, s, ft^3/s, mg/L). Documents may
carry either bare numbers, read in the field's default unit, or tagged
quantities ``{"value": 100, "unit": "GPM"}``.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, fields
from typing import Any, Mapping, Sequence

import numpy as np

#: 1 US gallon per minute in cubic feet per second.
GPM_TO_CFS = 0.0022280093

# Conversion factors into base units, keyed by unit tag.
UNIT_FACTORS = {
    "ft": 1.0,
    "ft2": 1.0,
    "ft3": 1.0,
    "ft_per_s": 1.0,
    "ft3_per_s": 1.0,
    "GPM": GPM_TO_CFS,
    "mg_per_L": 1.0,
    "per_s": 1.0,
    "per_day": 1.0 / 86400.0,
    "s": 1.0,
    "h": 3600.0,
}

DEFAULT_RADIUS_VELOCITY = 5.0  # ft/s, used to derive a pipe flow box when none is given


class NetworkError(ValueError):
    """Raised for malformed or inconsistent network documents."""


@dataclass(frozen=True)
class Reservoir:
    id: str
    head: float
    concentration: float = 0.0


@dataclass(frozen=True)
class Tank:
    id: str
    elevation: float
    area: float
    h_min: float
    h_max: float
    h_init: float
    bulk_decay: float = 0.0
    concentration: float = 0.0

    def volume(self, head: float) -> float:
        """Stored volume at ``head`` (ft^3), measured above the tank floor."""
        return self.area * (head - self.elevation)


@dataclass(frozen=True)
class Booster:
    node: str
    flow: float  # injection flow q^B, ft^3/s
    volume: float = 0.0  # tank boosters only: injected volume per WQ step, ft^3


@dataclass(frozen=True)
class Junction:
    id: str
    elevation: float
    demand_base: float = 0.0
    pattern: str | None = None
    booster: Booster | None = None
    sensor: bool = False
    head_min: float | None = None
    head_max: float | None = None
    concentration: float = 0.0


@dataclass(frozen=True)
class DecayParams:
    """First-order chlorine decay constants."""

    k_b: float = 0.0  # bulk, 1/s
    k_w: float = 0.0  # wall, ft/s
    k_f: float = 0.0  # mass transfer, ft/s


@dataclass(frozen=True)
class Pipe:
    id: str
    start: str
    end: str
    length: float
    radius: float
    resistance: float
    exponent: float = 1.852
    decay: DecayParams = DecayParams()
    flow_min: float | None = None
    flow_max: float | None = None

    @property
    def area(self) -> float:
        return math.pi * self.radius ** 2

    def flow_box(self) -> tuple[float, float]:
        lo = self.flow_min if self.flow_min is not None else -DEFAULT_RADIUS_VELOCITY * self.area
        hi = self.flow_max if self.flow_max is not None else DEFAULT_RADIUS_VELOCITY * self.area
        return lo, hi


@dataclass(frozen=True)
class Pump:
    id: str
    start: str
    end: str
    shutoff_head: float
    alpha: float  # ft / (ft^3/s)^nu
    nu: float
    s_max: float = 1.0
    efficiency: float = 0.75

    def max_flow(self, speed: float | None = None) -> float:
        """Flow at which the head gain vanishes at ``speed`` (defaults to s_max)."""
        s = self.s_max if speed is None else speed
        return s * (self.shutoff_head / self.alpha) ** (1.0 / self.nu)


@dataclass(frozen=True)
class Valve:
    id: str
    start: str
    end: str
    minor_loss: float
    states: tuple[bool, ...] = (True,)

    def is_open(self, step: int) -> bool:
        if len(self.states) == 1:
            return self.states[0]
        return self.states[min(step, len(self.states) - 1)]


@dataclass(frozen=True)
class Network:
    """Immutable water network.

    Nodes are reservoirs, junctions and tanks; links are pipes, pumps and
    valves. Time settings are in seconds.
    """

    reservoirs: tuple[Reservoir, ...]
    junctions: tuple[Junction, ...]
    tanks: tuple[Tank, ...]
    pipes: tuple[Pipe, ...]
    pumps: tuple[Pump, ...]
    valves: tuple[Valve, ...]
    patterns: Mapping[str, tuple[float, ...]]
    dt_hydraulic: float = 3600.0
    dt_wq: float = 10.0
    horizon: float = 86400.0
    decay_default: DecayParams = DecayParams()
    name: str = "network"
    meta: Mapping[str, Any] = field(default_factory=dict)

    # counts -----------------------------------------------------------
    @property
    def n_R(self) -> int:
        return len(self.reservoirs)

    @property
    def n_J(self) -> int:
        return len(self.junctions)

    @property
    def n_TK(self) -> int:
        return len(self.tanks)

    @property
    def n_P(self) -> int:
        return len(self.pipes)

    @property
    def n_M(self) -> int:
        return len(self.pumps)

    @property
    def n_V(self) -> int:
        return len(self.valves)

    @property
    def n_L(self) -> int:
        return self.n_P + self.n_M + self.n_V

    @property
    def n_steps(self) -> int:
        """Number of hydraulic steps in the horizon."""
        return int(round(self.horizon / self.dt_hydraulic))

    @property
    def wq_steps_per_hydraulic(self) -> int:
        return int(round(self.dt_hydraulic / self.dt_wq))

    # lookups ----------------------------------------------------------
    @property
    def links(self) -> tuple:
        """Links in flow-vector order: pipes, pumps, valves."""
        return self.pipes + self.pumps + self.valves

    @property
    def nodes(self) -> tuple:
        return self.reservoirs + self.junctions + self.tanks

    def node_kind(self, node_id: str) -> str:
        return self._node_kinds[node_id]

    @property
    def _node_kinds(self) -> dict[str, str]:
        kinds = {}
        for r in self.reservoirs:
            kinds[r.id] = "R"
        for j in self.junctions:
            kinds[j.id] = "J"
        for t in self.tanks:
            kinds[t.id] = "TK"
        return kinds

    def junction_index(self) -> dict[str, int]:
        return {j.id: i for i, j in enumerate(self.junctions)}

    def tank_index(self) -> dict[str, int]:
        return {t.id: i for i, t in enumerate(self.tanks)}

    def link_index(self) -> dict[str, int]:
        return {l.id: i for i, l in enumerate(self.links)}

    def boosters(self) -> list[Booster]:
        out = [j.booster for j in self.junctions if j.booster is not None]
        out.extend(self.meta.get("tank_boosters", ()))
        return out

    def sensors(self) -> list[str]:
        extra = list(self.meta.get("node_sensors", ()))
        return [j.id for j in self.junctions if j.sensor] + extra


# ---------------------------------------------------------------------------
# parsing


def _quantity(raw: Any, default_unit: str, where: str) -> float:
    if isinstance(raw, Mapping):
        if "value" not in raw:
            raise NetworkError(f"{where}: tagged quantity without 'value'")
        unit = raw.get("unit", default_unit)
        value = raw["value"]
    else:
        unit, value = default_unit, raw
    if unit not in UNIT_FACTORS:
        raise NetworkError(f"{where}: unknown unit tag '{unit}'")
    try:
        value = float(value)
    except (TypeError, ValueError) as exc:
        raise NetworkError(f"{where}: not a number: {value!r}") from exc
    return value * UNIT_FACTORS[unit]


def _opt_quantity(obj: Mapping, key: str, default_unit: str, where: str, default=None):
    if key not in obj or obj[key] is None:
        return default
    return _quantity(obj[key], default_unit, f"{where}.{key}")


def _require(obj: Mapping, key: str, where: str):
    if key not in obj:
        raise NetworkError(f"{where}: missing field '{key}'")
    return obj[key]


def _decay(raw: Mapping | None, base: DecayParams, where: str) -> DecayParams:
    if not raw:
        return base
    return DecayParams(
        k_b=_opt_quantity(raw, "k_b", "per_s", where, base.k_b),
        k_w=_opt_quantity(raw, "k_w", "ft_per_s", where, base.k_w),
        k_f=_opt_quantity(raw, "k_f", "ft_per_s", where, base.k_f),
    )


def hazen_williams_resistance(length: float, diameter: float, c: float) -> float:
    """Hazen-Williams resistance for ft and ft^3/s (US customary constant 4.727)."""
    return 4.727 * length / (c ** 1.852 * diameter ** 4.871)


def parse_network(text: str | bytes | Mapping) -> Network:
    """Parse a JSON network document into a :class:`Network`.

    Raises
    ------
    NetworkError
        On JSON syntax errors (with line/column), unknown unit tags, missing
        fields, or links referencing unknown nodes.
    """
    if isinstance(text, Mapping):
        doc = text
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise NetworkError(
                f"syntax error at line {exc.lineno} column {exc.colno}: {exc.msg}"
            ) from exc
    if not isinstance(doc, Mapping):
        raise NetworkError("top-level document must be an object")

    meta = doc.get("meta", {})
    dt_h = _opt_quantity(meta, "dt_hydraulic_s", "s", "meta", 3600.0)
    dt_wq = _opt_quantity(meta, "dt_wq_s", "s", "meta", 10.0)
    horizon = _opt_quantity(meta, "horizon_s", "s", "meta", 86400.0)

    quality = doc.get("quality", {})
    decay_default = _decay(quality.get("decay"), DecayParams(), "quality.decay")

    nodes = doc.get("nodes", {})
    res_raw = nodes.get("reservoirs", [])
    jun_raw = nodes.get("junctions", [])
    tank_raw = nodes.get("tanks", [])
    if not (res_raw or jun_raw or tank_raw):
        raise NetworkError("no nodes")

    reservoirs = []
    for i, r in enumerate(res_raw):
        where = f"nodes.reservoirs[{i}]"
        reservoirs.append(Reservoir(
            id=str(_require(r, "id", where)),
            head=_quantity(_require(r, "head", where), "ft", f"{where}.head"),
            concentration=_opt_quantity(r, "concentration", "mg_per_L", where, 0.0),
        ))

    boosters_raw = quality.get("boosters", [])
    sensor_ids = set(str(s) for s in quality.get("sensors", []))
    booster_by_node: dict[str, Booster] = {}
    for i, b in enumerate(boosters_raw):
        where = f"quality.boosters[{i}]"
        node = str(_require(b, "node", where))
        booster_by_node[node] = Booster(
            node=node,
            flow=_opt_quantity(b, "flow", "GPM", where, 0.0),
            volume=_opt_quantity(b, "volume", "ft3", where, 0.0),
        )

    tanks = []
    for i, t in enumerate(tank_raw):
        where = f"nodes.tanks[{i}]"
        elev = _quantity(_require(t, "elevation", where), "ft", f"{where}.elevation")
        tanks.append(Tank(
            id=str(_require(t, "id", where)),
            elevation=elev,
            area=_quantity(_require(t, "area", where), "ft2", f"{where}.area"),
            h_min=_quantity(_require(t, "h_min", where), "ft", f"{where}.h_min"),
            h_max=_quantity(_require(t, "h_max", where), "ft", f"{where}.h_max"),
            h_init=_quantity(_require(t, "h_init", where), "ft", f"{where}.h_init"),
            bulk_decay=_opt_quantity(t, "bulk_decay", "per_s", where, decay_default.k_b),
            concentration=_opt_quantity(t, "concentration", "mg_per_L", where, 0.0),
        ))

    junctions = []
    for i, j in enumerate(jun_raw):
        where = f"nodes.junctions[{i}]"
        jid = str(_require(j, "id", where))
        junctions.append(Junction(
            id=jid,
            elevation=_quantity(_require(j, "elevation", where), "ft", f"{where}.elevation"),
            demand_base=_opt_quantity(j, "demand_base", "GPM", where, 0.0),
            pattern=j.get("pattern"),
            booster=booster_by_node.get(jid),
            sensor=bool(j.get("sensor", False)) or jid in sensor_ids,
            head_min=_opt_quantity(j, "head_min", "ft", where),
            head_max=_opt_quantity(j, "head_max", "ft", where),
            concentration=_opt_quantity(j, "concentration", "mg_per_L", where, 0.0),
        ))

    links = doc.get("links", {})
    pipes = []
    for i, p in enumerate(links.get("pipes", [])):
        where = f"links.pipes[{i}]"
        length = _quantity(_require(p, "length", where), "ft", f"{where}.length")
        if "radius" in p:
            radius = _quantity(p["radius"], "ft", f"{where}.radius")
        elif "diameter" in p:
            radius = 0.5 * _quantity(p["diameter"], "ft", f"{where}.diameter")
        else:
            raise NetworkError(f"{where}: missing field 'radius'")
        if "resistance" in p:
            resistance = float(p["resistance"])
        elif "hazen_williams_c" in p:
            if length <= 0 or radius <= 0:
                resistance = float("nan")
            else:
                resistance = hazen_williams_resistance(length, 2 * radius, float(p["hazen_williams_c"]))
        else:
            raise NetworkError(f"{where}: needs 'resistance' or 'hazen_williams_c'")
        pipes.append(Pipe(
            id=str(_require(p, "id", where)),
            start=str(_require(p, "from", where)),
            end=str(_require(p, "to", where)),
            length=length,
            radius=radius,
            resistance=resistance,
            exponent=float(p.get("exponent", 1.852)),
            decay=_decay(p.get("decay"), decay_default, f"{where}.decay"),
            flow_min=_opt_quantity(p, "flow_min", "GPM", where),
            flow_max=_opt_quantity(p, "flow_max", "GPM", where),
        ))

    pumps = []
    for i, m in enumerate(links.get("pumps", [])):
        where = f"links.pumps[{i}]"
        nu = float(_require(m, "nu", where))
        alpha = float(_require(m, "alpha", where))
        curve_unit = m.get("curve_flow_unit", "ft3_per_s")
        if curve_unit not in UNIT_FACTORS:
            raise NetworkError(f"{where}: unknown unit tag '{curve_unit}'")
        # head = alpha * q_unit^nu with q_unit = q / factor
        alpha_base = alpha * UNIT_FACTORS[curve_unit] ** (-nu)
        pumps.append(Pump(
            id=str(_require(m, "id", where)),
            start=str(_require(m, "from", where)),
            end=str(_require(m, "to", where)),
            shutoff_head=_quantity(_require(m, "shutoff_head", where), "ft", f"{where}.shutoff_head"),
            alpha=alpha_base,
            nu=nu,
            s_max=float(m.get("s_max", 1.0)),
            efficiency=float(m.get("efficiency", 0.75)),
        ))

    valves = []
    for i, v in enumerate(links.get("valves", [])):
        where = f"links.valves[{i}]"
        states = v.get("states", v.get("open", True))
        if isinstance(states, bool):
            states = (states,)
        else:
            states = tuple(bool(s) for s in states)
        valves.append(Valve(
            id=str(_require(v, "id", where)),
            start=str(_require(v, "from", where)),
            end=str(_require(v, "to", where)),
            minor_loss=float(v.get("minor_loss", 0.0)),
            states=states,
        ))

    patterns = {str(k): tuple(float(x) for x in vals) for k, vals in doc.get("patterns", {}).items()}

    node_ids = [n.id for n in reservoirs + junctions + tanks]
    seen = set()
    for nid in node_ids:
        if nid in seen:
            raise NetworkError(f"duplicate node id '{nid}'")
        seen.add(nid)
    for link in pipes + pumps + valves:
        for end in (link.start, link.end):
            if end not in seen:
                raise NetworkError(f"link '{link.id}' references missing node '{end}'")
    for j in junctions:
        if j.pattern is not None and j.pattern not in patterns:
            raise NetworkError(f"junction '{j.id}' references missing pattern '{j.pattern}'")
    tank_ids = {t.id for t in tanks}
    tank_boosters = tuple(b for n, b in booster_by_node.items() if n in tank_ids)
    for node in booster_by_node:
        if node not in seen:
            raise NetworkError(f"booster references missing node '{node}'")
    node_sensors = tuple(s for s in sensor_ids if s in tank_ids or s in {r.id for r in reservoirs})
    for s in sensor_ids:
        if s not in seen:
            raise NetworkError(f"sensor references missing node '{s}'")

    extra = {k: v for k, v in meta.items() if k not in ("dt_hydraulic_s", "dt_wq_s", "horizon_s", "name")}
    extra["tank_boosters"] = tank_boosters
    extra["node_sensors"] = node_sensors
    return Network(
        reservoirs=tuple(reservoirs),
        junctions=tuple(junctions),
        tanks=tuple(tanks),
        pipes=tuple(pipes),
        pumps=tuple(pumps),
        valves=tuple(valves),
        patterns=patterns,
        dt_hydraulic=dt_h,
        dt_wq=dt_wq,
        horizon=horizon,
        decay_default=decay_default,
        name=str(meta.get("name", "network")),
        meta=extra,
    )


def load_network(path) -> Network:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_network(fh.read())


def serialize_network(net: Network) -> str:
    """Serialize to the JSON document format, all values in base units."""

    def q(value, unit):
        return {"value": value, "unit": unit}

    def decay(d: DecayParams):
        return {"k_b": q(d.k_b, "per_s"), "k_w": q(d.k_w, "ft_per_s"), "k_f": q(d.k_f, "ft_per_s")}

    meta = {k: v for k, v in net.meta.items() if k not in ("tank_boosters", "node_sensors")}
    meta.update({
        "name": net.name,
        "dt_hydraulic_s": net.dt_hydraulic,
        "dt_wq_s": net.dt_wq,
        "horizon_s": net.horizon,
    })
    doc = {
        "meta": meta,
        "nodes": {
            "reservoirs": [
                {"id": r.id, "head": q(r.head, "ft"), "concentration": q(r.concentration, "mg_per_L")}
                for r in net.reservoirs
            ],
            "junctions": [],
            "tanks": [
                {
                    "id": t.id, "elevation": q(t.elevation, "ft"), "area": q(t.area, "ft2"),
                    "h_min": q(t.h_min, "ft"), "h_max": q(t.h_max, "ft"), "h_init": q(t.h_init, "ft"),
                    "bulk_decay": q(t.bulk_decay, "per_s"), "concentration": q(t.concentration, "mg_per_L"),
                }
                for t in net.tanks
            ],
        },
        "links": {
            "pipes": [],
            "pumps": [
                {
                    "id": m.id, "from": m.start, "to": m.end, "shutoff_head": q(m.shutoff_head, "ft"),
                    "alpha": m.alpha, "nu": m.nu, "curve_flow_unit": "ft3_per_s",
                    "s_max": m.s_max, "efficiency": m.efficiency,
                }
                for m in net.pumps
            ],
            "valves": [
                {"id": v.id, "from": v.start, "to": v.end, "minor_loss": v.minor_loss, "states": list(v.states)}
                for v in net.valves
            ],
        },
        "patterns": {k: list(v) for k, v in net.patterns.items()},
        "quality": {"boosters": [], "sensors": [], "decay": decay(net.decay_default)},
    }
    for j in net.junctions:
        entry = {"id": j.id, "elevation": q(j.elevation, "ft"), "demand_base": q(j.demand_base, "ft3_per_s"),
                 "concentration": q(j.concentration, "mg_per_L")}
        if j.pattern is not None:
            entry["pattern"] = j.pattern
        if j.head_min is not None:
            entry["head_min"] = q(j.head_min, "ft")
        if j.head_max is not None:
            entry["head_max"] = q(j.head_max, "ft")
        doc["nodes"]["junctions"].append(entry)
    for p in net.pipes:
        entry = {
            "id": p.id, "from": p.start, "to": p.end, "length": q(p.length, "ft"),
            "radius": q(p.radius, "ft"), "resistance": p.resistance, "exponent": p.exponent,
            "decay": decay(p.decay),
        }
        if p.flow_min is not None:
            entry["flow_min"] = q(p.flow_min, "ft3_per_s")
        if p.flow_max is not None:
            entry["flow_max"] = q(p.flow_max, "ft3_per_s")
        doc["links"]["pipes"].append(entry)
    for b in net.boosters():
        doc["quality"]["boosters"].append(
            {"node": b.node, "flow": q(b.flow, "ft3_per_s"), "volume": q(b.volume, "ft3")})
    doc["quality"]["sensors"] = net.sensors()
    return json.dumps(doc, indent=2)


# ---------------------------------------------------------------------------
# validation


def validate_network(net: Network) -> list[str]:
    """Check element invariants; returns diagnostics (empty when valid)."""
    diags: list[str] = []
    for r in net.reservoirs:
        if not math.isfinite(r.head):
            diags.append(f"reservoir {r.id}: head not finite")
    for t in net.tanks:
        if not t.area > 0:
            diags.append(f"tank {t.id}: nonpositive area")
        if t.h_min > t.h_max:
            diags.append(f"tank {t.id}: minimum head above maximum")
        if t.h_init > t.h_max:
            diags.append(f"tank {t.id}: tank initial head above maximum")
        if t.h_init < t.h_min:
            diags.append(f"tank {t.id}: tank initial head below minimum")
        if t.h_min < t.elevation:
            diags.append(f"tank {t.id}: minimum head below tank floor")
        if t.bulk_decay < 0:
            diags.append(f"tank {t.id}: negative decay")
    for j in net.junctions:
        if j.demand_base < 0:
            diags.append(f"junction {j.id}: negative demand")
        if j.booster is not None and j.booster.flow < 0:
            diags.append(f"junction {j.id}: negative booster flow")
    for p in net.pipes:
        if not p.length > 0:
            diags.append(f"pipe {p.id}: nonpositive length")
        if not p.radius > 0:
            diags.append(f"pipe {p.id}: nonpositive radius")
        if not p.resistance > 0:
            diags.append(f"pipe {p.id}: nonpositive resistance")
        if not p.exponent > 1:
            diags.append(f"pipe {p.id}: flow exponent must exceed 1")
        d = p.decay
        if min(d.k_b, d.k_w, d.k_f) < 0:
            diags.append(f"pipe {p.id}: negative decay")
        lo, hi = p.flow_box()
        if not lo < hi:
            diags.append(f"pipe {p.id}: empty flow box")
    for m in net.pumps:
        if not m.s_max > 0:
            diags.append(f"pump {m.id}: nonpositive maximum speed")
        if not m.shutoff_head > 0:
            diags.append(f"pump {m.id}: nonpositive shutoff head")
        if not (m.alpha > 0 and m.nu > 0):
            diags.append(f"pump {m.id}: nonpositive curve coefficient")
    for v in net.valves:
        if v.minor_loss < 0:
            diags.append(f"valve {v.id}: negative minor loss")
        if len(v.states) not in (1,) and len(v.states) < net.n_steps:
            diags.append(f"valve {v.id}: state schedule shorter than horizon")
    for name, mult in net.patterns.items():
        if any(x < 0 for x in mult):
            diags.append(f"pattern {name}: negative multiplier")
        if len(mult) < net.n_steps:
            diags.append(f"pattern {name}: shorter than horizon")
    if net.dt_wq <= 0 or net.dt_hydraulic <= 0:
        diags.append("meta: nonpositive time step")
    else:
        ratio = net.dt_hydraulic / net.dt_wq
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            diags.append("meta: hydraulic step is not an integer multiple of the WQ step")

    adj: dict[str, set[str]] = {n.id: set() for n in net.nodes}
    directed: dict[str, set[str]] = {n.id: set() for n in net.nodes}
    for link in net.links:
        if link.start in adj and link.end in adj:
            adj[link.start].add(link.end)
            adj[link.end].add(link.start)
            directed[link.start].add(link.end)
            if not isinstance(link, Pump):
                directed[link.end].add(link.start)
    if adj:
        start = next(iter(adj))
        seen = {start}
        todo = deque([start])
        while todo:
            for nxt in adj[todo.popleft()]:
                if nxt not in seen:
                    seen.add(nxt)
                    todo.append(nxt)
        if len(seen) != len(adj):
            missing = sorted(set(adj) - seen)
            diags.append(f"graph: not connected (unreached: {', '.join(missing)})")

    sources = [n.id for n in net.reservoirs + net.tanks]
    reach = set(sources)
    todo = deque(sources)
    while todo:
        for nxt in directed[todo.popleft()]:
            if nxt not in reach:
                reach.add(nxt)
                todo.append(nxt)
    for m in net.pumps:
        if m.start not in reach:
            diags.append(f"pump {m.id}: no directed path from a source")
    return diags


# ---------------------------------------------------------------------------
# demands


def hydraulic_step_index(net: Network, t: float) -> int:
    """Index of the hydraulic step containing ``t``; ``t == horizon`` maps to the last step."""
    if t < 0 or t > net.horizon * (1 + 1e-12):
        raise ValueError(f"time {t} outside horizon [0, {net.horizon}]")
    k = int(math.floor(t / net.dt_hydraulic + 1e-12))
    return min(k, net.n_steps - 1)


def demand_vector(net: Network, t: float) -> np.ndarray:
    """Junction demands (ft^3/s) at time ``t``."""
    k = hydraulic_step_index(net, t)
    return demand_at_step(net, k)


def demand_at_step(net: Network, k: int) -> np.ndarray:
    out = np.zeros(net.n_J)
    for i, j in enumerate(net.junctions):
        mult = 1.0
        if j.pattern is not None:
            pat = net.patterns[j.pattern]
            mult = pat[min(k, len(pat) - 1)] if pat else 1.0
        out[i] = j.demand_base * mult
    return out


def with_changes(net: Network, **changes) -> Network:
    """Copy of ``net`` with dataclass fields replaced."""
    kwargs = {f.name: getattr(net, f.name) for f in fields(net)}
    kwargs.update(changes)
    return Network(**kwargs)
