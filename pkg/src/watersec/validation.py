"""Physical plausibility checks on raw measurement frames.

Only fully-observable quantities are checked: a junction needs every
incident link flow plus its demand metered; an energy path needs known
heads at both ends and metered flows along the way.  Anything less is
skipped and listed, never inferred.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from watersec import units
from watersec.estimation import MeasurementFrame, SensorConfig, channel
from watersec.hydraulics import Controls, pipe_headloss, pump_headgain, valve_headloss
from watersec.network import NetworkModel, Pipe, Pump

DEFAULT_TOL_MASS = 0.5 * units.GPM_TO_CFS
DEFAULT_TOL_ENERGY = 1.0  # ft; head sensor noise enters twice per path


@dataclass
class ValidationReport:
    mass_violations: dict[str, float] = field(default_factory=dict)
    energy_violations: dict[str, float] = field(default_factory=dict)
    skipped_junctions: list[str] = field(default_factory=list)
    skipped_paths: list[str] = field(default_factory=list)
    tol_mass: float = DEFAULT_TOL_MASS
    tol_energy: float = DEFAULT_TOL_ENERGY

    @property
    def worst_mass(self) -> float:
        return max((abs(v) for v in self.mass_violations.values()), default=0.0)

    @property
    def worst_energy(self) -> float:
        return max((abs(v) for v in self.energy_violations.values()), default=0.0)

    @property
    def verdict(self) -> str:
        ok = self.worst_mass <= self.tol_mass and self.worst_energy <= self.tol_energy
        return "pass" if ok else "fail"


def validate_frame(
    model: NetworkModel,
    cfg: SensorConfig,
    frame: MeasurementFrame,
    tol_mass: float = DEFAULT_TOL_MASS,
    tol_energy: float = DEFAULT_TOL_ENERGY,
    controls: Controls | None = None,
) -> ValidationReport:
    """Check mass/energy consistency of the readings themselves."""
    report = ValidationReport(tol_mass=tol_mass, tol_energy=tol_energy)
    metered_flows = {i for i, _ in cfg.flow_sensors}
    metered_demands = {i for i, _ in cfg.demand_meters}

    for j in model.junctions:
        incident = model.incident(j.id)
        flows_ok = all(l.id in metered_flows for l, _ in incident)
        if not flows_ok or j.id not in metered_demands:
            report.skipped_junctions.append(j.id)
            continue
        residual = -frame.reading(channel("demand", j.id))
        for l, sign in incident:
            residual += sign * frame.reading(channel("flow", l.id))
        report.mass_violations[j.id] = residual

    known_heads = {r.id: r.head for r in model.reservoirs}
    for tid, _ in cfg.tank_level_sensors:
        known_heads[tid] = frame.reading(channel("tank", tid))
    for nid, _ in cfg.head_sensors:
        known_heads[nid] = frame.reading(channel("head", nid))

    for l in model.links():
        if l.id not in metered_flows:
            report.skipped_paths.append(l.id)
            continue
        if l.from_node not in known_heads or l.to_node not in known_heads:
            report.skipped_paths.append(l.id)
            continue
        q = frame.reading(channel("flow", l.id))
        if isinstance(l, Pump):
            if controls is None:
                report.skipped_paths.append(l.id)
                continue
            speed = controls.speed(l)
            if speed <= 0.0:
                # a stopped pump should read zero flow
                report.energy_violations[l.id] = 0.0 if q == 0.0 else float("inf")
                continue
            expected = pump_headgain(l, max(q, 0.0), speed)
            dh = known_heads[l.to_node] - known_heads[l.from_node]
        else:
            if isinstance(l, Pipe):
                expected = pipe_headloss(l, q)
            else:
                expected = valve_headloss(l, q)
            dh = known_heads[l.from_node] - known_heads[l.to_node]
        report.energy_violations[l.id] = dh - expected
    return report
