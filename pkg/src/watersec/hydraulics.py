"""Extended-period hydraulic simulation.

Each timestep solves the steady mass/energy balance with tank and
reservoir heads held fixed, then integrates tank levels.  The nonlinear
head-loss laws are handled by successive linearization: every link is
replaced by its tangent line around the previous iterate and the linear
system is solved through the LP layer in water-flow-feasibility form
(zero objective), re-linearizing until flows stop moving.  At the fixed
point the tangent construction makes the exact laws hold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from watersec import lp
from watersec.network import NetworkModel, Pipe, Pump, Tank, Valve

TOL_MASS = 1e-6  # ft^3/s
TOL_ENERGY = 1e-4  # ft
MAX_SOLVER_ITERATIONS = 20
_Q_SMALL = 1e-4  # cfs; below this the loss law is treated as linear


class InfeasibleStepError(RuntimeError):
    def __init__(self, k: int, message: str):
        super().__init__(f"timestep {k}: {message}")
        self.k = k


class RankDeficiencyError(ValueError):
    """Sample or equation set does not determine the fit."""


# ---------------------------------------------------------------------------
# component laws


def pipe_headloss(pipe: Pipe, q: float) -> float:
    """Signed Hazen-Williams friction loss across a pipe, odd in q."""
    r = pipe.resistance
    return r * q * abs(q) ** 0.852


def pipe_headloss_slope(pipe: Pipe, q: float) -> float:
    r = pipe.resistance
    return max(1.852 * r * abs(q) ** 0.852, 1.852 * r * _Q_SMALL**0.852, 1e-12)


def pump_headgain(pump: Pump, q: float, s: float) -> float:
    """Head added from suction to discharge at flow q and relative speed s."""
    if s <= 0.0:
        if q > 0.0:
            raise ValueError(f"pump {pump.id!r}: flow {q} with zero speed")
        return 0.0
    if s > pump.max_speed + 1e-12:
        raise ValueError(f"pump {pump.id!r}: speed {s} above max {pump.max_speed}")
    nu = pump.curve_exponent
    return s * s * (pump.shutoff_head - pump.curve_coeff * (q / s) ** nu)


def pump_headgain_slope(pump: Pump, q: float, s: float) -> float:
    nu = pump.curve_exponent
    q = max(q, 0.0)
    return -nu * pump.curve_coeff * s ** (2.0 - nu) * q ** (nu - 1.0)


def valve_headloss(valve: Valve, q: float) -> float:
    """Minor loss m q |q| across an open valve."""
    return valve.minor_loss * q * abs(q)


def valve_headloss_slope(valve: Valve, q: float) -> float:
    return max(2.0 * valve.minor_loss * abs(q), 2.0 * valve.minor_loss * _Q_SMALL)


def _effective_slope(link, q_ref: float, speed: float | None = None):
    """(slope, intercept) of the energy line at the reference flow; exact there."""
    if isinstance(link, Pump):
        g0 = pump_headgain(link, max(q_ref, 0.0), speed)
        m = pump_headgain_slope(link, max(q_ref, 0.0), speed)
        return m, g0 - m * max(q_ref, 0.0)
    if isinstance(link, Pipe):
        loss = pipe_headloss(link, q_ref)
        m = max(abs(q_ref), _Q_SMALL) ** 0.852 * link.resistance
    else:
        loss = valve_headloss(link, q_ref)
        m = link.minor_loss * max(abs(q_ref), _Q_SMALL)
    if abs(q_ref) <= _Q_SMALL:
        return m, 0.0
    return loss / q_ref, 0.0


# ---------------------------------------------------------------------------
# tank integration


@dataclass(frozen=True)
class TankStep:
    head: float
    overflow_volume: float = 0.0  # ft^3 discarded at max level
    deficit_volume: float = 0.0  # ft^3 created at min level


def tank_step(tank: Tank, head: float, net_inflow: float, dt: float) -> TankStep:
    """Integrate one step of the tank level balance, clamping to bounds."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    raw = head + dt / tank.cross_section_area * net_inflow
    lo = tank.elevation + tank.min_level
    hi = tank.elevation + tank.max_level
    if raw > hi:
        return TankStep(hi, overflow_volume=(raw - hi) * tank.cross_section_area)
    if raw < lo:
        return TankStep(lo, deficit_volume=(lo - raw) * tank.cross_section_area)
    return TankStep(raw)


# ---------------------------------------------------------------------------
# piecewise linearization


@dataclass(frozen=True)
class Segment:
    slope: float
    intercept: float
    q_min: float
    q_max: float

    def value(self, q: float) -> float:
        return self.slope * q + self.intercept


@dataclass(frozen=True)
class PiecewiseCurve:
    segments: tuple[Segment, ...]

    @property
    def segment_count(self) -> int:
        return len(self.segments)

    def segment_for(self, q: float) -> Segment:
        """Active segment; ties at a knot resolve to the lower segment."""
        for seg in self.segments:
            if q <= seg.q_max:
                return seg
        return self.segments[-1]

    def value(self, q: float) -> float:
        return self.segment_for(q).value(q)


def linearize_pipe(pipe: Pipe, q_range: tuple[float, float], n_segments: int) -> PiecewiseCurve:
    """Chord linearization of the pipe loss law; knots lie on the exact curve."""
    return _chord_curve(lambda q: pipe_headloss(pipe, q), q_range, n_segments)


def linearize_valve(valve: Valve, q_range: tuple[float, float], n_segments: int) -> PiecewiseCurve:
    return _chord_curve(lambda q: valve_headloss(valve, q), q_range, n_segments)


def _chord_curve(fn, q_range, n_segments) -> PiecewiseCurve:
    q_lo, q_hi = q_range
    if n_segments < 1:
        raise ValueError("need at least one segment")
    if not q_hi > q_lo:
        raise ValueError(f"empty flow range [{q_lo}, {q_hi}]")
    knots = np.linspace(q_lo, q_hi, n_segments + 1)
    segs = []
    for a, b in zip(knots[:-1], knots[1:]):
        fa, fb = fn(a), fn(b)
        slope = (fb - fa) / (b - a)
        segs.append(Segment(slope, fa - slope * a, a, b))
    return PiecewiseCurve(tuple(segs))


def default_pipe_flow_cap(pipe: Pipe, velocity: float = 10.0) -> float:
    """Symmetric flow cap from a design velocity (ft/s) on the pipe area."""
    return velocity * pipe.area


def fit_pump_quadratic(samples) -> tuple[float, float, float, float]:
    """Least-squares fit of dh = b1 q^2 + b2 q + b3 s^2 + b4, b1 >= 0, b3 >= 0.

    ``samples`` is an iterable of (q, s, dh).  The sign convention of dh is
    the caller's; the constraint set keeps the quadratic terms convex.
    Active-set over the two sign constraints: try every subset pinned to
    zero and keep the best feasible fit.
    """
    pts = np.asarray(list(samples), float)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 4:
        raise ValueError("need at least 4 samples of (q, s, dh)")
    q, s, dh = pts[:, 0], pts[:, 1], pts[:, 2]
    design = np.column_stack([q * q, q, s * s, np.ones_like(q)])
    if np.linalg.matrix_rank(design, tol=1e-9) < 4:
        raise RankDeficiencyError("pump samples do not span the quadratic basis")
    best = None
    for pin1 in (False, True):
        for pin3 in (False, True):
            cols = [j for j in range(4) if not (j == 0 and pin1 or j == 2 and pin3)]
            sub = design[:, cols]
            coef_sub, *_ = np.linalg.lstsq(sub, dh, rcond=None)
            coef = np.zeros(4)
            coef[cols] = coef_sub
            if coef[0] < -1e-12 or coef[2] < -1e-12:
                continue
            coef[0] = max(coef[0], 0.0)
            coef[2] = max(coef[2], 0.0)
            rss = float(np.sum((design @ coef - dh) ** 2))
            if best is None or rss < best[0] - 1e-15:
                best = (rss, coef)
    assert best is not None  # pinning both constrained terms is always feasible
    return tuple(best[1])


def default_quad_fit(pump: Pump, speeds=None, n_flows: int = 8):
    """Fit the head-gain surface of the exact pump law over its speed range.

    With the convexity constraints the flow-quadratic term is usually pinned
    to zero, leaving a per-speed linear gain model (adequate for the
    schedule optimizer, which re-linearizes around operating points anyway).
    """
    if speeds is None:
        speeds = np.linspace(0.4, pump.max_speed, 7)
    samples = []
    for s in speeds:
        for q in np.linspace(0.0, 0.95 * pump.max_flow(s), n_flows):
            samples.append((q, s, pump_headgain(pump, q, s)))
    return fit_pump_quadratic(samples)


# ---------------------------------------------------------------------------
# per-step network solve


@dataclass
class Controls:
    pump_speeds: dict[str, float] = field(default_factory=dict)
    valve_status: dict[str, str] = field(default_factory=dict)

    def speed(self, pump: Pump) -> float:
        return self.pump_speeds.get(pump.id, pump.init_speed)

    def status(self, valve: Valve) -> str:
        return self.valve_status.get(valve.id, valve.status)


@dataclass
class HydraulicState:
    k: int
    junction_heads: dict[str, float]
    tank_heads: dict[str, float]
    pipe_flows: dict[str, float]
    pump_flows: dict[str, float]
    pump_speeds: dict[str, float]
    valve_flows: dict[str, float]
    reservoir_heads: dict[str, float] = field(default_factory=dict)

    def link_flow(self, link_id: str) -> float:
        for block in (self.pipe_flows, self.pump_flows, self.valve_flows):
            if link_id in block:
                return block[link_id]
        raise KeyError(link_id)

    def node_head(self, node_id: str) -> float:
        if node_id in self.junction_heads:
            return self.junction_heads[node_id]
        if node_id in self.tank_heads:
            return self.tank_heads[node_id]
        return self.reservoir_heads[node_id]


def solve_network_step(
    model: NetworkModel,
    demands: dict[str, float],
    controls: Controls,
    tank_heads: dict[str, float],
    k: int = 0,
    q_init: dict[str, float] | None = None,
    max_iterations: int = MAX_SOLVER_ITERATIONS,
) -> HydraulicState:
    """Steady-state mass/energy solve with fixed tank and reservoir heads."""
    fixed_heads = {r.id: r.head for r in model.reservoirs}
    for t in model.tanks:
        fixed_heads[t.id] = tank_heads[t.id]

    closed: set[str] = set()
    for v in model.valves:
        if controls.status(v) == "closed":
            closed.add(v.id)
    off_pumps = {p.id for p in model.pumps if controls.speed(p) <= 0.0}

    # cold start at zero flow: the minimum-slope clamp keeps the first
    # linearized system nonsingular, and an all-idle network solves exactly
    q_prev: dict[str, float] = {l.id: 0.0 for l in model.links()}
    for p in model.pumps:
        if p.id not in off_pumps:
            q_prev[p.id] = 0.5 * p.max_flow(controls.speed(p))
    if q_init:
        q_prev.update({k_: v for k_, v in q_init.items() if k_ in q_prev})

    sol = None
    for _ in range(max_iterations):
        sol = _solve_linearized(model, demands, controls, fixed_heads, q_prev, closed, off_pumps, k)
        # pumps pushed into reverse flow cannot sustain the head: close them
        shut = False
        for p in model.pumps:
            if p.id not in off_pumps and sol.pump_flows[p.id] < -1e-7:
                off_pumps.add(p.id)
                shut = True
        if shut:
            continue
        moved = max(
            abs(sol.link_flow(l.id) - q_prev[l.id]) for l in model.links()
        ) if model.links() else 0.0
        for l in model.links():
            q_prev[l.id] = sol.link_flow(l.id)
        if moved <= 1e-9:
            break
    assert sol is not None
    bad_energy = max((abs(v) for v in energy_residuals(model, sol).values()), default=0.0)
    bad_mass = max((abs(v) for v in mass_residuals(model, sol, demands).values()), default=0.0)
    if bad_energy > TOL_ENERGY or bad_mass > TOL_MASS:
        raise InfeasibleStepError(
            k, f"solver did not converge (mass {bad_mass:.2e} ft^3/s, energy {bad_energy:.2e} ft)"
        )
    return sol


def _solve_linearized(model, demands, controls, fixed_heads, q_prev, closed, off_pumps, k):
    bld = lp.LPBuilder()
    for l in model.links():
        pinned = l.id in closed or l.id in off_pumps
        bld.var(f"q_{l.id}", lo=0.0 if pinned else -np.inf, hi=0.0 if pinned else np.inf)
    for j in model.junctions:
        bld.var(f"h_{j.id}")

    def head_term(node_id, coeff, row, rhs):
        if node_id in fixed_heads:
            return rhs - coeff * fixed_heads[node_id]
        row[f"h_{node_id}"] = row.get(f"h_{node_id}", 0.0) + coeff
        return rhs

    for j in model.junctions:
        row = {}
        for l, sign in model.incident(j.id):
            row[f"q_{l.id}"] = row.get(f"q_{l.id}", 0.0) + sign
        bld.add(row, "=", demands.get(j.id, 0.0))

    for l in model.links():
        if l.id in closed or l.id in off_pumps:
            continue
        q0 = q_prev[l.id]
        if isinstance(l, Pump):
            s = controls.speed(l)
            q0 = max(q0, 0.0)
            g0 = pump_headgain(l, q0, s)
            m = pump_headgain_slope(l, q0, s)
            # h_to - h_from = g0 + m (q - q0)
            row: dict = {f"q_{l.id}": -m}
            rhs = g0 - m * q0
            rhs = head_term(l.to_node, 1.0, row, rhs)
            rhs = head_term(l.from_node, -1.0, row, rhs)
        else:
            if isinstance(l, Pipe):
                f0, m = pipe_headloss(l, q0), pipe_headloss_slope(l, q0)
            else:
                f0, m = valve_headloss(l, q0), valve_headloss_slope(l, q0)
            # h_from - h_to = f0 + m (q - q0)
            row = {f"q_{l.id}": -m}
            rhs = f0 - m * q0
            rhs = head_term(l.from_node, 1.0, row, rhs)
            rhs = head_term(l.to_node, -1.0, row, rhs)
        bld.add(row, "=", rhs)

    program = bld.build("min")
    sol = lp.solve_lp(program)
    if not sol.ok:
        raise InfeasibleStepError(k, f"network equations {sol.status}")
    names = {n: i for i, n in enumerate(program.names)}
    values = sol.values

    def val(name):
        return float(values[names[name]])

    junction_heads = {j.id: val(f"h_{j.id}") for j in model.junctions}
    return HydraulicState(
        k=k,
        junction_heads=junction_heads,
        tank_heads={t.id: fixed_heads[t.id] for t in model.tanks},
        pipe_flows={p.id: val(f"q_{p.id}") for p in model.pipes},
        pump_flows={p.id: val(f"q_{p.id}") for p in model.pumps},
        pump_speeds={
            p.id: (0.0 if p.id in off_pumps else controls.speed(p)) for p in model.pumps
        },
        valve_flows={v.id: val(f"q_{v.id}") for v in model.valves},
        reservoir_heads={r.id: r.head for r in model.reservoirs},
    )


# ---------------------------------------------------------------------------
# residual checks (exact laws, used by tests and validation)


def mass_residuals(model: NetworkModel, state: HydraulicState, demands) -> dict[str, float]:
    out = {}
    for j in model.junctions:
        acc = -demands.get(j.id, 0.0)
        for l, sign in model.incident(j.id):
            acc += sign * state.link_flow(l.id)
        out[j.id] = acc
    return out


def energy_residuals(model: NetworkModel, state: HydraulicState) -> dict[str, float]:
    """Exact-law residual per active link: (head difference) - (loss/gain)."""
    out = {}
    for p in model.pipes:
        dh = state.node_head(p.from_node) - state.node_head(p.to_node)
        out[p.id] = dh - pipe_headloss(p, state.pipe_flows[p.id])
    for p in model.pumps:
        s = state.pump_speeds[p.id]
        if s <= 0.0:
            continue
        dh = state.node_head(p.to_node) - state.node_head(p.from_node)
        out[p.id] = dh - pump_headgain(p, state.pump_flows[p.id], s)
    for v in model.valves:
        if state.valve_flows[v.id] == 0.0 and v.status == "closed":
            continue
        dh = state.node_head(v.from_node) - state.node_head(v.to_node)
        out[v.id] = dh - valve_headloss(v, state.valve_flows[v.id])
    return out


# ---------------------------------------------------------------------------
# extended-period simulation


@dataclass
class SimulationResult:
    states: list[HydraulicState]
    tank_heads: list[dict[str, float]]  # length n_steps + 1 (includes final)
    overflow_volumes: dict[str, float]
    deficit_volumes: dict[str, float]
    iterations: list[int] = field(default_factory=list)

    @property
    def final_tank_heads(self) -> dict[str, float]:
        return self.tank_heads[-1]


def simulate(
    model: NetworkModel,
    controls_per_step=None,
    n_steps: int | None = None,
    demands_per_step=None,
) -> SimulationResult:
    """Run the extended-period simulation.

    ``controls_per_step`` may be None (model defaults), a Controls applied
    to every step, or a sequence of Controls.  ``demands_per_step``
    optionally overrides the pattern-driven demands (same length rule).
    """
    steps = model.time.n_steps if n_steps is None else n_steps
    dt = model.time.hydraulic_step
    tank_heads = {t.id: t.init_head for t in model.tanks}
    states: list[HydraulicState] = []
    trajectory = [dict(tank_heads)]
    overflow = {t.id: 0.0 for t in model.tanks}
    deficit = {t.id: 0.0 for t in model.tanks}
    q_warm: dict[str, float] | None = None

    for k in range(steps):
        if controls_per_step is None:
            ctl = Controls()
        elif isinstance(controls_per_step, Controls):
            ctl = controls_per_step
        else:
            ctl = controls_per_step[k]
        demands = model.demands_at(k) if demands_per_step is None else demands_per_step[k]
        state = solve_network_step(
            model, demands, ctl, tank_heads, k=k, q_init=q_warm
        )
        states.append(state)
        q_warm = {l.id: state.link_flow(l.id) for l in model.links()}
        for t in model.tanks:
            inflow = sum(
                sign * state.link_flow(l.id) for l, sign in model.incident(t.id)
            )
            step = tank_step(t, tank_heads[t.id], inflow, dt)
            tank_heads[t.id] = step.head
            overflow[t.id] += step.overflow_volume
            deficit[t.id] += step.deficit_volume
        trajectory.append(dict(tank_heads))

    return SimulationResult(states, trajectory, overflow, deficit)
