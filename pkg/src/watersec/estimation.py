"""Weighted least-squares state estimation over the stacked system.

The state vector holds every link flow and every junction/tank head.
Three row blocks are stacked: sensor readings scaled by 1/sigma, junction
mass balances with metered or pattern-predicted demands on the rhs, and
energy rows linearized around a reference flow.  The default energy
linearization is the effective-resistance form h_i - h_j = r_p q_p with
r_p taken at the reference flow, which is exact at that flow; a piecewise
curve set may be supplied instead, in which case the active segment is
picked by the reference flow (ties resolve to the lower segment).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from watersec import units
from watersec.hydraulics import (
    Controls,
    HydraulicState,
    PiecewiseCurve,
    _effective_slope,
)
from watersec.network import NetworkModel, Pump

DEFAULT_SIGMA_FLOW = 0.05 * units.GPM_TO_CFS
DEFAULT_SIGMA_HEAD = 0.1
DEFAULT_SIGMA_DEMAND = 0.05 * units.GPM_TO_CFS
DEFAULT_SIGMA_TANK = 0.05

CONDITION_WARNING = 1e10


class MissingReadingError(KeyError):
    """A configured sensor has no reading in the frame."""


class ObservabilityError(ValueError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness or {}


def channel(kind: str, ident: str) -> str:
    return f"{kind}:{ident}"


@dataclass(frozen=True)
class SensorConfig:
    """Sensor placement with per-sensor noise sigma (internal units)."""

    flow_sensors: tuple[tuple[str, float], ...] = ()
    head_sensors: tuple[tuple[str, float], ...] = ()
    demand_meters: tuple[tuple[str, float], ...] = ()
    tank_level_sensors: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        for name, block in (
            ("flow", self.flow_sensors),
            ("head", self.head_sensors),
            ("demand", self.demand_meters),
            ("tank", self.tank_level_sensors),
        ):
            for ident, sigma in block:
                if sigma <= 0:
                    raise ValueError(f"{name} sensor {ident!r} needs sigma > 0")

    @classmethod
    def build(cls, flow=(), head=(), demand=(), tank=(),
              sigma_flow=DEFAULT_SIGMA_FLOW, sigma_head=DEFAULT_SIGMA_HEAD,
              sigma_demand=DEFAULT_SIGMA_DEMAND, sigma_tank=DEFAULT_SIGMA_TANK):
        """Construct from id lists with shared default sigmas."""
        return cls(
            flow_sensors=tuple((i, sigma_flow) for i in flow),
            head_sensors=tuple((i, sigma_head) for i in head),
            demand_meters=tuple((i, sigma_demand) for i in demand),
            tank_level_sensors=tuple((i, sigma_tank) for i in tank),
        )

    @property
    def residual_channels(self) -> list[str]:
        """Channels carrying measurement residuals, in canonical order."""
        out = [channel("flow", i) for i, _ in self.flow_sensors]
        out += [channel("head", i) for i, _ in self.head_sensors]
        out += [channel("tank", i) for i, _ in self.tank_level_sensors]
        return out

    @property
    def all_channels(self) -> list[str]:
        return self.residual_channels + [channel("demand", i) for i, _ in self.demand_meters]

    def sigma_of(self, chan: str) -> float:
        kind, ident = chan.split(":", 1)
        block = {
            "flow": self.flow_sensors,
            "head": self.head_sensors,
            "demand": self.demand_meters,
            "tank": self.tank_level_sensors,
        }[kind]
        for i, s in block:
            if i == ident:
                return s
        raise KeyError(chan)


@dataclass
class MeasurementFrame:
    """Sensor readings at one timestep (internal units; tank values are heads)."""

    k: int
    flows: dict[str, float] = field(default_factory=dict)
    heads: dict[str, float] = field(default_factory=dict)
    tank_heads: dict[str, float] = field(default_factory=dict)
    demands: dict[str, float] = field(default_factory=dict)

    def reading(self, chan: str) -> float:
        kind, ident = chan.split(":", 1)
        block = {
            "flow": self.flows, "head": self.heads,
            "tank": self.tank_heads, "demand": self.demands,
        }[kind]
        try:
            return block[ident]
        except KeyError:
            raise MissingReadingError(chan)

    def with_reading(self, chan: str, value: float) -> None:
        kind, ident = chan.split(":", 1)
        block = {
            "flow": self.flows, "head": self.heads,
            "tank": self.tank_heads, "demand": self.demands,
        }[kind]
        block[ident] = value

    def copy(self) -> "MeasurementFrame":
        return MeasurementFrame(
            self.k, dict(self.flows), dict(self.heads),
            dict(self.tank_heads), dict(self.demands),
        )


def frame_from_state(model: NetworkModel, cfg: SensorConfig, state: HydraulicState,
                     demands: dict[str, float]) -> MeasurementFrame:
    """Noiseless frame sampled from a simulated state (oracle path)."""
    frame = MeasurementFrame(state.k)
    for lid, _ in cfg.flow_sensors:
        frame.flows[lid] = state.link_flow(lid)
    for nid, _ in cfg.head_sensors:
        frame.heads[nid] = state.node_head(nid)
    for tid, _ in cfg.tank_level_sensors:
        frame.tank_heads[tid] = state.tank_heads[tid]
    for jid, _ in cfg.demand_meters:
        frame.demands[jid] = demands.get(jid, 0.0)
    return frame


@dataclass
class EstimationSystem:
    h: np.ndarray                    # stacked rows, measurement rows scaled by 1/sigma
    z: np.ndarray
    row_kinds: list[str]             # "measurement" | "mass" | "energy"
    columns: list[str]               # "q:<link>" and "h:<node>"
    meas_channels: list[str]
    meas_sigma: np.ndarray
    meas_rows_raw: np.ndarray        # unscaled measurement block
    meas_values: np.ndarray          # raw readings
    mass_junctions: list[str]        # junction id per mass row

    @property
    def n_states(self) -> int:
        return len(self.columns)

    def column(self, name: str) -> int:
        return self.columns.index(name)


@dataclass
class Estimate:
    x: np.ndarray
    columns: list[str]
    residuals: np.ndarray            # per measurement row, physical units
    channels: list[str]
    condition_indicator: float

    def value(self, name: str) -> float:
        return float(self.x[self.columns.index(name)])

    def flow(self, link_id: str) -> float:
        return self.value(f"q:{link_id}")

    def head(self, node_id: str) -> float:
        return self.value(f"h:{node_id}")

    def residual(self, chan: str) -> float:
        return float(self.residuals[self.channels.index(chan)])

    def residual_map(self) -> dict[str, float]:
        return dict(zip(self.channels, self.residuals))


def build_system(
    model: NetworkModel,
    cfg: SensorConfig,
    frame: MeasurementFrame,
    curves: dict[str, PiecewiseCurve] | None = None,
    prev_flows: dict[str, float] | None = None,
    controls: Controls | None = None,
) -> EstimationSystem:
    """Assemble the stacked estimation system for one frame."""
    controls = controls or Controls()
    prev_flows = prev_flows or {}
    columns = [f"q:{l.id}" for l in model.links()]
    columns += [f"h:{j.id}" for j in model.junctions]
    columns += [f"h:{t.id}" for t in model.tanks]
    col = {name: i for i, name in enumerate(columns)}
    n = len(columns)
    reservoir_heads = {r.id: r.head for r in model.reservoirs}

    rows, rhs, kinds = [], [], []
    meas_channels, meas_sigma, meas_raw, meas_val = [], [], [], []

    def add_measurement(chan, state_col, sigma):
        y = frame.reading(chan)
        raw = np.zeros(n)
        raw[col[state_col]] = 1.0
        rows.append(raw / sigma)
        rhs.append(y / sigma)
        kinds.append("measurement")
        meas_channels.append(chan)
        meas_sigma.append(sigma)
        meas_raw.append(raw)
        meas_val.append(y)

    for lid, sigma in cfg.flow_sensors:
        add_measurement(channel("flow", lid), f"q:{lid}", sigma)
    for nid, sigma in cfg.head_sensors:
        add_measurement(channel("head", nid), f"h:{nid}", sigma)
    for tid, sigma in cfg.tank_level_sensors:
        add_measurement(channel("tank", tid), f"h:{tid}", sigma)

    metered = {i for i, _ in cfg.demand_meters}
    mass_junctions = []
    for j in model.junctions:
        raw = np.zeros(n)
        for l, sign in model.incident(j.id):
            raw[col[f"q:{l.id}"]] += sign
        demand = frame.reading(channel("demand", j.id)) if j.id in metered \
            else model.demand_at(j.id, frame.k)
        rows.append(raw)
        rhs.append(demand)
        kinds.append("mass")
        mass_junctions.append(j.id)

    for l in model.links():
        q_ref = prev_flows.get(l.id, 0.0)
        raw = np.zeros(n)
        if isinstance(l, Pump):
            speed = controls.speed(l)
            if speed <= 0.0:
                raw[col[f"q:{l.id}"]] = 1.0
                rows.append(raw)
                rhs.append(0.0)
                kinds.append("energy")
                continue
            m, b = _effective_slope(l, q_ref, speed)
            # h_to - h_from - m q = b
            raw[col[f"q:{l.id}"]] = -m
            b0 = b
            for node, sign in ((l.to_node, 1.0), (l.from_node, -1.0)):
                if node in reservoir_heads:
                    b0 -= sign * reservoir_heads[node]
                else:
                    raw[col[f"h:{node}"]] += sign
            rows.append(raw)
            rhs.append(b0)
            kinds.append("energy")
            continue
        status = controls.status(l) if hasattr(l, "status") else "open"
        if status == "closed":
            raw[col[f"q:{l.id}"]] = 1.0
            rows.append(raw)
            rhs.append(0.0)
            kinds.append("energy")
            continue
        if curves is not None and l.id in curves:
            seg = curves[l.id].segment_for(q_ref)
            m, b = seg.slope, seg.intercept
        else:
            m, b = _effective_slope(l, q_ref)
        # h_from - h_to - m q = b
        raw[col[f"q:{l.id}"]] = -m
        b0 = b
        for node, sign in ((l.from_node, 1.0), (l.to_node, -1.0)):
            if node in reservoir_heads:
                b0 -= sign * reservoir_heads[node]
            else:
                raw[col[f"h:{node}"]] += sign
        rows.append(raw)
        rhs.append(b0)
        kinds.append("energy")

    return EstimationSystem(
        h=np.array(rows),
        z=np.array(rhs),
        row_kinds=kinds,
        columns=columns,
        meas_channels=meas_channels,
        meas_sigma=np.array(meas_sigma),
        meas_rows_raw=np.array(meas_raw) if meas_raw else np.zeros((0, n)),
        meas_values=np.array(meas_val),
        mass_junctions=mass_junctions,
    )


def check_rank(sys: EstimationSystem) -> None:
    """Raise ObservabilityError with a null-space witness on rank deficiency."""
    _, s, vt = np.linalg.svd(sys.h, full_matrices=True)
    n = sys.n_states
    rank = int(np.sum(s > max(sys.h.shape) * np.finfo(float).eps * s[0]))
    if rank < n:
        witness_vec = vt[-1]
        witness = {
            sys.columns[i]: float(witness_vec[i])
            for i in np.argsort(-np.abs(witness_vec))[:6]
            if abs(witness_vec[i]) > 1e-8
        }
        raise ObservabilityError(
            f"estimation system rank {rank} < {n} states; "
            f"null-space witness {witness}",
            witness,
        )


def estimate(sys: EstimationSystem) -> Estimate:
    """Normal-equations solution with measurement-row residuals."""
    a = sys.h
    normal = a.T @ a
    try:
        chol = np.linalg.cholesky(normal)
    except np.linalg.LinAlgError:
        check_rank(sys)
        raise ObservabilityError("normal matrix is singular")
    d = np.diag(chol)
    condition = float((d.max() / d.min()) ** 2)
    if condition > CONDITION_WARNING:
        warnings.warn(
            f"estimation system poorly conditioned (indicator {condition:.2e})",
            RuntimeWarning,
        )
    y = np.linalg.solve(chol, a.T @ sys.z)
    x = np.linalg.solve(chol.T, y)
    residuals = sys.meas_values - sys.meas_rows_raw @ x
    return Estimate(x, sys.columns, residuals, list(sys.meas_channels), condition)


@dataclass
class Sensitivities:
    """Linear response of the estimate and residuals to inputs.

    x_per_meas[:, i] is d x_hat / d y_i (raw reading i); x_per_demand[:, j]
    is d x_hat / d (mass rhs of junction j); res_per_meas and
    res_per_demand give the corresponding measurement-residual responses.
    """

    meas_channels: list[str]
    mass_junctions: list[str]
    x_per_meas: np.ndarray
    x_per_demand: np.ndarray
    res_per_meas: np.ndarray
    res_per_demand: np.ndarray


def sensitivities(sys: EstimationSystem) -> Sensitivities:
    a = sys.h
    normal = a.T @ a
    inv = np.linalg.inv(normal)
    scaled = sys.meas_rows_raw / sys.meas_sigma[:, None]
    x_per_meas = inv @ (scaled / sys.meas_sigma[:, None]).T
    mass_list = [sys.h[i] for i, kind in enumerate(sys.row_kinds) if kind == "mass"]
    mass_rows = np.array(mass_list) if mass_list else np.zeros((0, sys.n_states))
    x_per_demand = inv @ mass_rows.T
    res_per_meas = np.eye(len(sys.meas_channels)) - sys.meas_rows_raw @ x_per_meas
    res_per_demand = -sys.meas_rows_raw @ x_per_demand
    return Sensitivities(
        list(sys.meas_channels), list(sys.mass_junctions),
        x_per_meas, x_per_demand, res_per_meas, res_per_demand,
    )
