"""Target sets, attack vectors, and the local-subnetwork context."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from watersec.estimation import MeasurementFrame, SensorConfig, channel
from watersec.hydraulics import Controls
from watersec.network import NetworkModel


@dataclass(frozen=True)
class TargetSet:
    """Sensors the attacker can write to, plus the attack window.

    ``head_targets`` may name tanks (their level sensors are head-kind).
    The window is inclusive on both ends.
    """

    flow_targets: tuple[str, ...] = ()
    head_targets: tuple[str, ...] = ()
    demand_targets: tuple[str, ...] = ()
    window: tuple[int, int] = (0, 0)

    @property
    def k_star(self) -> int:
        return self.window[0]

    def in_window(self, k: int) -> bool:
        return self.window[0] <= k <= self.window[1]

    def channels(self, model: NetworkModel) -> list[str]:
        out = [channel("flow", i) for i in self.flow_targets]
        for i in self.head_targets:
            kind = "tank" if any(t.id == i for t in model.tanks) else "head"
            out.append(channel(kind, i))
        out += [channel("demand", i) for i in self.demand_targets]
        return out

    def validate_against(self, model: NetworkModel, cfg: SensorConfig) -> None:
        configured = set(cfg.all_channels)
        for chan in self.channels(model):
            if chan not in configured:
                raise ValueError(f"target {chan} is not a configured sensor")


@dataclass
class AttackVector:
    """Additive per-timestep perturbations over the target channels."""

    k: int
    flow: dict[str, float] = field(default_factory=dict)
    head: dict[str, float] = field(default_factory=dict)  # includes tank heads
    demand: dict[str, float] = field(default_factory=dict)

    @classmethod
    def zero(cls, k: int) -> "AttackVector":
        return cls(k)

    def component(self, chan: str) -> float:
        kind, ident = chan.split(":", 1)
        block = {"flow": self.flow, "head": self.head,
                 "tank": self.head, "demand": self.demand}[kind]
        return block.get(ident, 0.0)

    def set_component(self, chan: str, value: float) -> None:
        kind, ident = chan.split(":", 1)
        block = {"flow": self.flow, "head": self.head,
                 "tank": self.head, "demand": self.demand}[kind]
        block[ident] = value

    def magnitude(self) -> float:
        return sum(abs(v) for b in (self.flow, self.head, self.demand) for v in b.values())

    def is_zero(self, tol: float = 0.0) -> bool:
        return self.magnitude() <= tol

    def apply(self, frame: MeasurementFrame) -> MeasurementFrame:
        out = frame.copy()
        for ident, v in self.flow.items():
            out.flows[ident] = out.flows.get(ident, 0.0) + v
        for ident, v in self.head.items():
            if ident in out.tank_heads:
                out.tank_heads[ident] += v
            else:
                out.heads[ident] = out.heads.get(ident, 0.0) + v
        for ident, v in self.demand.items():
            out.demands[ident] = out.demands.get(ident, 0.0) + v
        return out


@dataclass
class Subnetwork:
    nodes: set[str]
    links: set[str]
    interior_junctions: set[str]  # all incident links inside the subnetwork
    touched_junctions: set[str] = field(default_factory=set)  # mass rows live here


def sensor_elements(model: NetworkModel, chan: str):
    """Graph elements (nodes, links) a sensor channel touches."""
    kind, ident = chan.split(":", 1)
    if kind == "flow":
        l = model.link(ident)
        return {l.from_node, l.to_node}, {ident}
    return {ident}, set()


def targets_connected(model: NetworkModel, channels) -> bool:
    """True when the union of target elements forms one connected piece."""
    nodes: set[str] = set()
    edges: list[tuple[str, str]] = []
    for chan in channels:
        ns, ls = sensor_elements(model, chan)
        nodes |= ns
        for lid in ls:
            l = model.link(lid)
            edges.append((l.from_node, l.to_node))
    if not nodes:
        return True
    adjacency = {n: set() for n in nodes}
    for a, b in edges:
        adjacency[a].add(b)
        adjacency[b].add(a)
    start = next(iter(nodes))
    seen, stack = {start}, [start]
    while stack:
        for nb in adjacency[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return seen == nodes


def build_subnetwork(model: NetworkModel, targets: TargetSet) -> Subnetwork:
    """Induced subgraph around the targets, expanded until connected.

    Junctions whose balance the attack perturbs (demand targets, endpoints
    of targeted links) are closed over: all their incident links join the
    subnetwork so local mass balance can be written exactly.
    """
    nodes: set[str] = set()
    for chan in targets.channels(model):
        ns, _ = sensor_elements(model, chan)
        nodes |= ns
    if not nodes:
        return Subnetwork(set(), set(), set())

    junction_ids = {j.id for j in model.junctions}
    touched: set[str] = {j for j in targets.demand_targets}
    for lid in targets.flow_targets:
        l = model.link(lid)
        touched |= {n for n in (l.from_node, l.to_node) if n in junction_ids}

    adjacency: dict[str, list[tuple[str, str]]] = {n: [] for n in model.node_ids}
    for l in model.links():
        adjacency[l.from_node].append((l.to_node, l.id))
        adjacency[l.to_node].append((l.from_node, l.id))

    # connect components along BFS shortest paths in the full graph
    def bfs_path(src, goal_set):
        prev = {src: None}
        queue = [src]
        while queue:
            cur = queue.pop(0)
            if cur in goal_set and cur != src:
                path = [cur]
                while prev[path[-1]] is not None:
                    path.append(prev[path[-1]])
                return path
            for nb, _ in adjacency[cur]:
                if nb not in prev:
                    prev[nb] = cur
                    queue.append(nb)
        return None

    pieces = _components(model, nodes)
    while len(pieces) > 1:
        src = sorted(pieces[0])[0]
        goal = set().union(*pieces[1:])
        path = bfs_path(src, goal)
        if path is None:
            break
        nodes |= set(path)
        pieces = _components(model, nodes)

    # close over touched junctions so their full balance is representable
    for j in sorted(touched):
        nodes.add(j)
        for nb, _ in adjacency[j]:
            nodes.add(nb)

    links = {
        l.id for l in model.links() if l.from_node in nodes and l.to_node in nodes
    }
    interior = {
        j.id for j in model.junctions
        if j.id in nodes and all(l.id in links for l, _ in model.incident(j.id))
    }
    assert touched <= interior, "touched junctions must be interior by construction"
    return Subnetwork(nodes, links, interior, touched)


def _components(model, nodes):
    adjacency = {n: set() for n in nodes}
    for l in model.links():
        if l.from_node in nodes and l.to_node in nodes:
            adjacency[l.from_node].add(l.to_node)
            adjacency[l.to_node].add(l.from_node)
    seen: set[str] = set()
    pieces = []
    for start in sorted(nodes):
        if start in seen:
            continue
        piece = {start}
        stack = [start]
        while stack:
            for nb in adjacency[stack.pop()]:
                if nb not in piece:
                    piece.add(nb)
                    stack.append(nb)
        seen |= piece
        pieces.append(piece)
    return pieces


@dataclass
class AttackContext:
    """Everything the attacker knows when constructing a step's attack."""

    model: NetworkModel
    cfg: SensorConfig
    targets: TargetSet
    sub: Subnetwork
    controls: Controls
    prev_flows: dict[str, float]           # operator's linearization point
    x_ref: dict[str, float] = field(default_factory=dict)
    epsilon: float = np.inf
    detector: object = None                 # snapshot visible to the attacker
    n_segments: int = 5
    stealth_margin: float = 0.2             # fraction of detector slack held back
    impact_bias: dict[str, float] = field(default_factory=dict)  # channel -> +-1

    @classmethod
    def build(cls, model, cfg, targets, controls, prev_flows, **kw):
        targets.validate_against(model, cfg)
        sub = build_subnetwork(model, targets)
        return cls(model, cfg, targets, sub, controls, dict(prev_flows), **kw)
