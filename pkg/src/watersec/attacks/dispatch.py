"""Attack dispatcher: strategy prerequisites, topology checks, suggestions.

Mirrors the staged intake of the implementation framework: declare what
the attacker knows, pick a strategy, verify the target set can support it,
and hand back a plan the scenario loop can drive step by step.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from watersec.attacks.targets import (
    AttackContext,
    TargetSet,
    build_subnetwork,
    sensor_elements,
    targets_connected,
)
from watersec.estimation import SensorConfig
from watersec.network import NetworkModel

KNOWLEDGE_REQUIREMENTS = {
    "fs_fdi": ("measurements", "se_config", "id_params", "topology"),
    "ha_fdi": ("measurements", "topology"),
    "hu_fdi_optimized": ("measurements", "se_config", "id_params"),
    "hu_fdi_closed_form": ("measurements", "se_config", "id_params"),
    "r_fdi": ("measurements",),
}

PHYSICS_STRATEGIES = ("fs_fdi", "ha_fdi")


@dataclass(frozen=True)
class KnowledgeInventory:
    measurements: bool = False
    se_config: bool = False
    id_params: bool = False
    topology: bool = False

    def missing_for(self, kind: str) -> list[str]:
        need = KNOWLEDGE_REQUIREMENTS[kind]
        return [item for item in need if not getattr(self, item)]


class DispatchError(ValueError):
    def __init__(self, message: str, missing=(), suggestions=()):
        super().__init__(message)
        self.missing = list(missing)
        self.suggestions = list(suggestions)


@dataclass
class AttackPlan:
    kind: str
    targets: TargetSet
    context_kwargs: dict = field(default_factory=dict)


def suggest_connected_groups(
    model: NetworkModel, cfg: SensorConfig, targets: TargetSet, limit: int = 10
) -> list[tuple[str, ...]]:
    """Connected same-size sensor groups within the local subnetwork."""
    wanted = len(targets.channels(model))
    sub = build_subnetwork(model, targets)
    candidates = []
    for chan in cfg.all_channels:
        nodes, links = sensor_elements(model, chan)
        if nodes <= sub.nodes and all(l in sub.links for l in links):
            candidates.append(chan)
    out = []
    for combo in itertools.combinations(sorted(candidates), wanted):
        if targets_connected(model, combo):
            out.append(combo)
            if len(out) >= limit:
                break
    return out


def dispatch(
    kind: str,
    inventory: KnowledgeInventory,
    model: NetworkModel,
    cfg: SensorConfig,
    targets: TargetSet,
    **context_kwargs,
) -> AttackPlan:
    """Validate a strategy request; returns a plan or raises DispatchError."""
    if kind not in KNOWLEDGE_REQUIREMENTS:
        raise DispatchError(f"unknown attack strategy {kind!r}")
    missing = inventory.missing_for(kind)
    if missing:
        raise DispatchError(
            f"{kind} requires knowledge the attacker lacks: {', '.join(missing)}",
            missing=missing,
        )
    targets.validate_against(model, cfg)
    if kind in PHYSICS_STRATEGIES:
        channels = targets.channels(model)
        if not targets_connected(model, channels):
            suggestions = suggest_connected_groups(model, cfg, targets)
            raise DispatchError(
                "selected sensors cannot satisfy physical constraints: "
                "targets are not hydraulically connected",
                suggestions=suggestions,
            )
    return AttackPlan(kind, targets, dict(context_kwargs))
