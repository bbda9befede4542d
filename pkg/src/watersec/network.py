"""Network data model: nodes, links, patterns, and the simulation clock.

All stored quantities are in internal units (ft, ft^3/s, seconds) except
pipe diameters, which stay in inches as read from INP files and are
converted where resistance is computed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

HAZEN_WILLIAMS_EXP = 1.852


class NetworkError(ValueError):
    """Structural problem in a network model or its source text."""


@dataclass(frozen=True)
class Junction:
    id: str
    elevation: float
    base_demand: float = 0.0  # ft^3/s
    demand_pattern: str | None = None


@dataclass(frozen=True)
class Reservoir:
    id: str
    head: float  # constant across all timesteps


@dataclass(frozen=True)
class Tank:
    id: str
    elevation: float
    init_level: float
    min_level: float
    max_level: float
    cross_section_area: float  # ft^2

    def head(self, level: float) -> float:
        return self.elevation + level

    @property
    def init_head(self) -> float:
        return self.elevation + self.init_level


@dataclass(frozen=True)
class Pipe:
    id: str
    from_node: str
    to_node: str
    length: float  # ft
    diameter: float  # inches
    roughness: float  # Hazen-Williams C
    minor_loss: float = 0.0

    @property
    def resistance(self) -> float:
        return pipe_resistance(self.length, self.roughness, self.diameter / 12.0)

    @property
    def area(self) -> float:
        d = self.diameter / 12.0
        return math.pi * d * d / 4.0


@dataclass(frozen=True)
class Pump:
    id: str
    from_node: str
    to_node: str
    shutoff_head: float  # ft
    curve_coeff: float  # alpha in head = h0 - alpha * q^nu (q in ft^3/s)
    curve_exponent: float = 2.0
    max_speed: float = 1.0
    init_speed: float = 1.0
    quad_fit: tuple[float, float, float, float] | None = None

    def max_flow(self, speed: float = 1.0) -> float:
        """Flow at which the head gain reaches zero."""
        return speed * (self.shutoff_head / self.curve_coeff) ** (1.0 / self.curve_exponent)


@dataclass(frozen=True)
class Valve:
    id: str
    from_node: str
    to_node: str
    minor_loss: float = 0.0
    status: str = "open"  # "open" | "closed"


@dataclass(frozen=True)
class SimulationClock:
    duration: float  # hours
    hydraulic_step: float = 3600.0  # seconds
    pattern_step: float = 3600.0  # seconds

    def __post_init__(self):
        if self.hydraulic_step <= 0:
            raise NetworkError("hydraulic step must be positive")
        steps = self.duration * 3600.0 / self.hydraulic_step
        if abs(steps - round(steps)) > 1e-9:
            raise NetworkError("duration must be an integer multiple of the hydraulic step")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration * 3600.0 / self.hydraulic_step))


def pipe_resistance(length: float, roughness: float, diameter: float) -> float:
    """Hazen-Williams resistance coefficient; diameter in feet.

    Zero-length pipes are allowed and carry no resistance.
    """
    if length < 0 or roughness <= 0 or diameter <= 0:
        raise NetworkError(
            f"pipe parameters must be positive (L={length}, C={roughness}, D={diameter})"
        )
    if length == 0:
        return 0.0
    return 4.727 * length / (roughness**HAZEN_WILLIAMS_EXP * diameter**4.8704)


@dataclass
class NetworkModel:
    junctions: list[Junction] = field(default_factory=list)
    reservoirs: list[Reservoir] = field(default_factory=list)
    tanks: list[Tank] = field(default_factory=list)
    pipes: list[Pipe] = field(default_factory=list)
    pumps: list[Pump] = field(default_factory=list)
    valves: list[Valve] = field(default_factory=list)
    patterns: dict[str, list[float]] = field(default_factory=dict)
    time: SimulationClock = field(default_factory=lambda: SimulationClock(24))

    def __post_init__(self):
        self._reindex()

    def _reindex(self):
        self._nodes = {}
        for n in [*self.junctions, *self.reservoirs, *self.tanks]:
            self._nodes[n.id] = n
        self._links = {}
        for l in [*self.pipes, *self.pumps, *self.valves]:
            self._links[l.id] = l

    def node(self, node_id: str):
        return self._nodes[node_id]

    def link(self, link_id: str):
        return self._links[link_id]

    def links(self):
        return [*self.pipes, *self.pumps, *self.valves]

    @property
    def node_ids(self):
        return list(self._nodes)

    def has_node(self, node_id: str) -> bool:
        return node_id in self._nodes

    def has_link(self, link_id: str) -> bool:
        return link_id in self._links

    def incident(self, node_id: str):
        """(link, sign) pairs; sign +1 when positive link flow enters the node."""
        out = []
        for l in self.links():
            if l.to_node == node_id:
                out.append((l, 1.0))
            elif l.from_node == node_id:
                out.append((l, -1.0))
        return out

    def pattern_multiplier(self, pattern_id: str | None, k: int) -> float:
        if pattern_id is None:
            return 1.0
        mult = self.patterns[pattern_id]
        idx = int(k * self.time.hydraulic_step // self.time.pattern_step) % len(mult)
        return mult[idx]

    def demand_at(self, junction_id: str, k: int) -> float:
        """Junction demand at timestep k: base demand times pattern multiplier."""
        j = self._nodes[junction_id]
        return j.base_demand * self.pattern_multiplier(j.demand_pattern, k)

    def demands_at(self, k: int) -> dict[str, float]:
        return {j.id: self.demand_at(j.id, k) for j in self.junctions}

    def validate(self) -> None:
        """Check id uniqueness, reference integrity, bounds, and connectivity."""
        seen = set()
        for n in [*self.junctions, *self.reservoirs, *self.tanks]:
            if n.id in seen:
                raise NetworkError(f"duplicate node id {n.id!r}")
            seen.add(n.id)
        seen = set()
        for l in self.links():
            if l.id in seen:
                raise NetworkError(f"duplicate link id {l.id!r}")
            seen.add(l.id)
        for l in self.links():
            for end in (l.from_node, l.to_node):
                if end not in self._nodes:
                    raise NetworkError(
                        f"link {l.id!r} references unknown node {end!r}"
                    )
        for j in self.junctions:
            if j.base_demand < 0:
                raise NetworkError(f"junction {j.id!r} has negative base demand")
            if j.demand_pattern is not None and j.demand_pattern not in self.patterns:
                raise NetworkError(
                    f"junction {j.id!r} references unknown pattern {j.demand_pattern!r}"
                )
        for t in self.tanks:
            if not (t.min_level <= t.init_level <= t.max_level):
                raise NetworkError(f"tank {t.id!r} levels out of order")
            if t.cross_section_area <= 0:
                raise NetworkError(f"tank {t.id!r} has non-positive area")
        for p in self.pipes:
            if p.length < 0 or p.diameter <= 0:
                raise NetworkError(f"pipe {p.id!r} has non-positive geometry")
            if not (1.0 <= p.roughness <= 200.0):
                raise NetworkError(f"pipe {p.id!r} roughness outside [1, 200]")
        for p in self.pumps:
            if p.shutoff_head <= 0:
                raise NetworkError(f"pump {p.id!r} shutoff head must be positive")
        for v in self.valves:
            if v.minor_loss < 0:
                raise NetworkError(f"valve {v.id!r} has negative minor loss")
            if v.status not in ("open", "closed"):
                raise NetworkError(f"valve {v.id!r} has unknown status {v.status!r}")
        if not self.reservoirs and not self.tanks:
            raise NetworkError("no source node: at least one reservoir or tank required")
        self._check_connected()

    def _check_connected(self):
        if not self._nodes:
            raise NetworkError("empty network")
        adjacency: dict[str, set[str]] = {n: set() for n in self._nodes}
        for l in self.links():
            adjacency[l.from_node].add(l.to_node)
            adjacency[l.to_node].add(l.from_node)
        start = next(iter(self._nodes))
        seen = {start}
        stack = [start]
        while stack:
            for nb in adjacency[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        missing = sorted(set(self._nodes) - seen)
        if missing:
            raise NetworkError(f"network is disconnected; unreachable nodes: {missing}")
