"""Optimization-based attack synthesis: full-stealth and its relaxations.

One MILP builder covers three strategies:

  * ``fs``      - physics witness + estimator/detector bypass (full stealth)
  * ``ha``      - physics witness only (hydraulics-aware)
  * ``hu_opt``  - estimator/detector bypass only (hydraulics-unaware)

The physics witness is a local state (flows/heads over the subnetwork)
that must reproduce every reading the attacker cannot touch, satisfy mass
balance at interior junctions, and follow piecewise-linearized energy laws
(one binary per segment).  Detector bypass works through the attacker's
local estimation system: residual responses to the attack are linear, so
threshold constraints stay linear; quadratic detectors get an inscribed
octagonal approximation, which never admits a detectable attack.

Solutions are re-verified against caller-supplied replay hooks
(operator detector, physical validation); on failure the zero attack is
returned, mirroring the fall-back behavior of the reference procedure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from watersec import lp
from watersec.attacks.targets import AttackContext, AttackVector
from watersec.detection import ChiSquaredDetector, CusumDetector
from watersec.estimation import EstimationSystem, estimate, sensitivities
from watersec.hydraulics import (
    _chord_curve,
    _effective_slope,
    default_pipe_flow_cap,
    pipe_headloss,
    pump_headgain,
    valve_headloss,
)
from watersec.network import Pipe, Pump, Valve

_BIAS_EPS = 1e-5


@dataclass(frozen=True)
class AttackBounds:
    alpha_h: float = 0.0
    alpha_f: float = 0.0
    alpha_d: float = 0.0


@dataclass
class AttackOutcome:
    vector: AttackVector
    status: str  # "attacked" | "zero" | "infeasible" | "fallback"
    objective: float = 0.0
    reason: str = ""

    @property
    def active(self) -> bool:
        return self.status == "attacked" and not self.vector.is_zero()


def local_estimation_system(ctx: AttackContext, frame) -> EstimationSystem:
    """The attacker's replica of the estimator, restricted to the subnetwork."""
    model, cfg, sub = ctx.model, ctx.cfg, ctx.sub
    local_links = [l for l in model.links() if l.id in sub.links]
    fixed = {r.id: r.head for r in model.reservoirs}
    columns = [f"q:{l.id}" for l in local_links]
    columns += [
        f"h:{n}" for n in sorted(sub.nodes) if n not in fixed
    ]
    col = {c: i for i, c in enumerate(columns)}
    n = len(columns)

    rows, rhs, kinds = [], [], []
    meas_channels, meas_sigma, meas_raw, meas_val = [], [], [], []

    def add_meas(chan, state_col, sigma):
        raw = np.zeros(n)
        raw[col[state_col]] = 1.0
        y = frame.reading(chan)
        rows.append(raw / sigma)
        rhs.append(y / sigma)
        kinds.append("measurement")
        meas_channels.append(chan)
        meas_sigma.append(sigma)
        meas_raw.append(raw)
        meas_val.append(y)

    for lid, sigma in cfg.flow_sensors:
        if lid in sub.links:
            add_meas(f"flow:{lid}", f"q:{lid}", sigma)
    for nid, sigma in cfg.head_sensors:
        if nid in sub.nodes and nid not in fixed:
            add_meas(f"head:{nid}", f"h:{nid}", sigma)
    for tid, sigma in cfg.tank_level_sensors:
        if tid in sub.nodes:
            add_meas(f"tank:{tid}", f"h:{tid}", sigma)

    metered = {i for i, _ in cfg.demand_meters}
    mass_junctions = []
    for j in model.junctions:
        if j.id not in sub.touched_junctions:
            continue
        raw = np.zeros(n)
        for l, sign in model.incident(j.id):
            raw[col[f"q:{l.id}"]] += sign
        demand = frame.reading(f"demand:{j.id}") if j.id in metered \
            else model.demand_at(j.id, frame.k)
        rows.append(raw)
        rhs.append(demand)
        kinds.append("mass")
        mass_junctions.append(j.id)

    for l in local_links:
        q_ref = ctx.prev_flows.get(l.id, 0.0)
        raw = np.zeros(n)
        if isinstance(l, Pump):
            s = ctx.controls.speed(l)
            if s <= 0.0:
                raw[col[f"q:{l.id}"]] = 1.0
                rows.append(raw)
                rhs.append(0.0)
                kinds.append("energy")
                continue
            m, b = _effective_slope(l, q_ref, s)
            raw[col[f"q:{l.id}"]] = -m
            ends = ((l.to_node, 1.0), (l.from_node, -1.0))
        else:
            if isinstance(l, Valve) and ctx.controls.status(l) == "closed":
                raw[col[f"q:{l.id}"]] = 1.0
                rows.append(raw)
                rhs.append(0.0)
                kinds.append("energy")
                continue
            m, b = _effective_slope(l, q_ref)
            raw[col[f"q:{l.id}"]] = -m
            ends = ((l.from_node, 1.0), (l.to_node, -1.0))
        b0 = b
        for node, sign in ends:
            if node in fixed:
                b0 -= sign * fixed[node]
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


def _group_caps(ctx, frame, bounds):
    """Per-channel attack caps: alpha_kind times the group's max reading."""
    caps = {}
    chans = ctx.targets.channels(ctx.model)
    groups = {
        "flow": ([c for c in chans if c.startswith("flow:")], bounds.alpha_f),
        "head": ([c for c in chans if c.startswith(("head:", "tank:"))], bounds.alpha_h),
        "demand": ([c for c in chans if c.startswith("demand:")], bounds.alpha_d),
    }
    for _, (group, alpha) in groups.items():
        if not group:
            continue
        scale = max(abs(frame.reading(c)) for c in group)
        for c in group:
            caps[c] = alpha * scale
    return caps


def _octagon_rows(bld, u_names, radius):
    """Inscribed-octagon facets per coordinate pair: valid inner approximation."""
    facet = radius * math.cos(math.pi / 8.0)
    angles = [(t + 0.5) * math.pi / 4.0 for t in range(8)]
    if len(u_names) == 1:
        bld.add({u_names[0]: 1.0}, "<=", radius)
        bld.add({u_names[0]: -1.0}, "<=", radius)
        return
    for i in range(len(u_names)):
        for j in range(i + 1, len(u_names)):
            for th in angles:
                bld.add(
                    {u_names[i]: math.cos(th), u_names[j]: math.sin(th)},
                    "<=",
                    facet,
                )


def build_attack_program(
    kind: str,
    ctx: AttackContext,
    frame,
    bounds: AttackBounds,
    objective: str = "maximize",
):
    """Assemble the attack MILP; returns (program, target channels) or a
    degenerate-outcome marker when no constraint system is needed."""
    if kind not in ("fs", "ha", "hu_opt"):
        raise ValueError(f"unknown strategy {kind!r}")
    with_physics = kind in ("fs", "ha")
    with_detection = kind in ("fs", "hu_opt")

    chans = ctx.targets.channels(ctx.model)
    caps = _group_caps(ctx, frame, bounds)
    if all(caps.get(c, 0.0) <= 0.0 for c in chans):
        return None, chans, "zero caps"

    bld = lp.LPBuilder()
    for c in chans:
        cap = caps.get(c, 0.0)
        bld.var(f"ap!{c}", lo=0.0, hi=cap, obj=1.0)
        bld.var(f"am!{c}", lo=0.0, hi=cap, obj=1.0)
        if cap > 0.0:
            # sign binary forces a+ . a- = 0; otherwise the maximization
            # pads the objective with canceling pairs that no real attack
            # performs (and that quietly relax every coupled constraint)
            bld.var(f"sgn!{c}", binary=True)
            bld.add({f"ap!{c}": 1.0, f"sgn!{c}": -cap}, "<=", 0.0)
            bld.add({f"am!{c}": 1.0, f"sgn!{c}": cap}, "<=", cap)
        bias = ctx.impact_bias.get(c, 0.0)
        if bias > 0:
            bld.add_obj(f"ap!{c}", _BIAS_EPS)
        elif bias < 0:
            bld.add_obj(f"am!{c}", _BIAS_EPS)

    if with_physics:
        _witness_block(bld, ctx, frame, chans)

    if with_detection:
        feasible = _detection_block(bld, ctx, frame, chans)
        if not feasible:
            return None, chans, "detector saturated"

    return bld.build("max" if objective == "maximize" else "min"), chans, ""


def stealth_milp_step(
    kind: str,
    ctx: AttackContext,
    frame,
    bounds: AttackBounds,
    objective: str = "maximize",
    operator_replay=None,
    physics_check=None,
) -> AttackOutcome:
    """Solve one step's attack MILP and verify the produced frame.

    ``operator_replay(frame) -> list`` returns would-be alarms;
    ``physics_check(frame) -> bool`` runs the operator's validation.
    """
    with_physics = kind in ("fs", "ha")
    with_detection = kind in ("fs", "hu_opt")
    program, chans, degenerate = build_attack_program(kind, ctx, frame, bounds, objective)
    if program is None:
        status = "zero" if degenerate == "zero caps" else "infeasible"
        return AttackOutcome(AttackVector.zero(frame.k), status, reason=degenerate)
    sol = lp.solve_milp(program)
    if sol.status != lp.OPTIMAL:
        return AttackOutcome(
            AttackVector.zero(frame.k), "infeasible", reason=f"milp {sol.status}"
        )

    names = {nm: i for i, nm in enumerate(program.names)}
    vec = AttackVector.zero(frame.k)
    for c in chans:
        a = float(sol.values[names[f"ap!{c}"]] - sol.values[names[f"am!{c}"]])
        if abs(a) > 1e-12:
            vec.set_component(c, a)

    if vec.is_zero():
        return AttackOutcome(vec, "zero", reason="optimum at zero")

    attacked = vec.apply(frame)
    if with_detection and operator_replay is not None:
        alarms = operator_replay(attacked)
        if alarms:
            return AttackOutcome(
                AttackVector.zero(frame.k), "fallback",
                reason=f"verification: {len(alarms)} alarm(s)",
            )
    if with_physics and physics_check is not None and not physics_check(attacked):
        return AttackOutcome(
            AttackVector.zero(frame.k), "fallback", reason="verification: physics"
        )
    return AttackOutcome(vec, "attacked", objective=vec.magnitude())


def _witness_block(bld, ctx, frame, chans):
    """Local physical state consistent with every untouched reading."""
    model, sub = ctx.model, ctx.sub
    fixed = {r.id: r.head for r in model.reservoirs}
    metered_flows = {i for i, _ in ctx.cfg.flow_sensors}
    metered_heads = {i for i, _ in ctx.cfg.head_sensors}
    metered_tanks = {i for i, _ in ctx.cfg.tank_level_sensors}
    metered_demands = {i for i, _ in ctx.cfg.demand_meters}
    target_set = set(chans)

    def a_terms(chan, coeff=1.0):
        return {f"ap!{chan}": coeff, f"am!{chan}": -coeff}

    for node in sorted(sub.nodes):
        if node in fixed:
            continue
        bld.var(f"hw!{node}")
        chan = None
        if node in metered_tanks:
            chan = f"tank:{node}"
        elif node in metered_heads:
            chan = f"head:{node}"
        if chan is not None:
            row = {f"hw!{node}": 1.0}
            if chan in target_set:
                row.update(a_terms(chan, -1.0))
            bld.add(row, "=", frame.reading(chan))

    local_links = [l for l in model.links() if l.id in sub.links]
    for l in local_links:
        off = (isinstance(l, Pump) and ctx.controls.speed(l) <= 0.0) or (
            isinstance(l, Valve) and ctx.controls.status(l) == "closed"
        )
        bld.var(f"qw!{l.id}", lo=0.0 if off else -np.inf, hi=0.0 if off else np.inf)
        chan = f"flow:{l.id}"
        if l.id in metered_flows:
            row = {f"qw!{l.id}": 1.0}
            if chan in target_set:
                row.update(a_terms(chan, -1.0))
            bld.add(row, "=", frame.reading(chan))

    for jid in sorted(sub.touched_junctions):
        row = {}
        for l, sign in model.incident(jid):
            row[f"qw!{l.id}"] = row.get(f"qw!{l.id}", 0.0) + sign
        chan = f"demand:{jid}"
        rhs = 0.0
        if jid in metered_demands:
            rhs = frame.reading(chan)
            if chan in target_set:
                row.update(a_terms(chan, -1.0))
        else:
            rhs = model.demand_at(jid, frame.k)
        bld.add(row, "=", rhs)

    def head_coeff(row, node, sign):
        if node in fixed:
            return sign * fixed[node]
        row[f"hw!{node}"] = row.get(f"hw!{node}", 0.0) + sign
        return 0.0

    for l in local_links:
        if (isinstance(l, Pump) and ctx.controls.speed(l) <= 0.0) or (
            isinstance(l, Valve) and ctx.controls.status(l) == "closed"
        ):
            continue
        if isinstance(l, Pump):
            s = ctx.controls.speed(l)
            cap = l.max_flow(s)
            curve = _chord_curve(lambda q: pump_headgain(l, q, s), (0.0, cap), ctx.n_segments)
            gain_sign = -1.0  # h_to - h_from - gain = 0
            end_hi, end_lo = l.to_node, l.from_node
        else:
            cap = default_pipe_flow_cap(l) if isinstance(l, Pipe) else 10.0
            reading = abs(frame.flows.get(l.id, 0.0))
            cap = max(cap, 1.5 * reading)
            fn = (lambda q: pipe_headloss(l, q)) if isinstance(l, Pipe) \
                else (lambda q: valve_headloss(l, q))
            curve = _chord_curve(fn, (-cap, cap), ctx.n_segments)
            gain_sign = -1.0  # h_from - h_to - loss = 0
            end_hi, end_lo = l.from_node, l.to_node

        sum_row = {f"qw!{l.id}": 1.0}
        select_row = {}
        energy_row = {}
        const = 0.0
        const -= head_coeff(energy_row, end_hi, 1.0)
        const -= head_coeff(energy_row, end_lo, -1.0)
        for n, seg in enumerate(curve.segments):
            zname = f"z!{l.id}!{n}"
            wname = f"w!{l.id}!{n}"
            bld.var(zname, lo=min(0.0, seg.q_min), hi=max(0.0, seg.q_max))
            bld.var(wname, binary=True)
            bld.add({zname: -1.0, wname: seg.q_min}, "<=", 0.0)
            bld.add({zname: 1.0, wname: -seg.q_max}, "<=", 0.0)
            sum_row[zname] = -1.0
            select_row[wname] = 1.0
            energy_row[zname] = energy_row.get(zname, 0.0) + gain_sign * seg.slope
            energy_row[wname] = energy_row.get(wname, 0.0) + gain_sign * seg.intercept
        bld.add(sum_row, "=", 0.0)
        bld.add(select_row, "=", 1.0)
        bld.add(energy_row, "=", const)


def _detection_block(bld, ctx, frame, chans) -> bool:
    """Residual response rows plus detector bypass; False when saturated."""
    sys = local_estimation_system(ctx, frame)
    sens = sensitivities(sys)
    base = estimate(sys)
    r0 = base.residuals
    margin = 1.0 - ctx.stealth_margin

    def a_terms(chan, coeff=1.0):
        return {f"ap!{chan}": coeff, f"am!{chan}": -coeff}

    def response_coeff(i, chan):
        if chan.startswith("demand:"):
            jid = chan.split(":", 1)[1]
            if jid in sens.mass_junctions:
                return float(sens.res_per_demand[i, sens.mass_junctions.index(jid)])
            return 0.0
        if chan in sens.meas_channels:
            return float(sens.res_per_meas[i, sens.meas_channels.index(chan)])
        return 0.0

    local_channels = sys.meas_channels
    for i, rc in enumerate(local_channels):
        row = {}
        for c in chans:
            coeff = response_coeff(i, c)
            if coeff != 0.0:
                for var, v in a_terms(c, -coeff).items():
                    row[var] = row.get(var, 0.0) + v
        bld.var(f"r!{rc}")
        row[f"r!{rc}"] = 1.0
        bld.add(row, "=", float(r0[i]))

    det = ctx.detector
    if det is not None:
        if isinstance(det, CusumDetector) and det.mode == "vectorized":
            for i, rc in enumerate(local_channels):
                if rc not in det.channels:
                    continue
                di = det.channels.index(rc)
                if det.c[di] > det.tau[di]:
                    continue  # operator resets this step; nothing to bypass
                slack = margin * (det.tau[di] + det.b[di] - det.c[di])
                if slack < 0:
                    return False
                bld.add({f"r!{rc}": 1.0}, "<=", slack)
                bld.add({f"r!{rc}": -1.0}, "<=", slack)
        else:
            if isinstance(det, CusumDetector):
                if det.c[0] > det.tau[0]:
                    beta = None  # reset step
                else:
                    beta = margin * (det.tau[0] + det.b[0] - det.c[0])
            else:
                assert isinstance(det, ChiSquaredDetector)
                beta = margin * det.alpha
            if beta is not None:
                if beta <= 0:
                    return False
                covered = [rc for rc in local_channels if rc in det.channels]
                if covered:
                    idx = [det.channels.index(rc) for rc in covered]
                    sigma_inv = det.sigma_inv[np.ix_(idx, idx)]
                    vals, vecs = np.linalg.eigh(sigma_inv)
                    w = vecs @ np.diag(np.sqrt(np.maximum(vals, 0.0))) @ vecs.T
                    m = len(covered)
                    radius = math.sqrt(2.0 * beta / m) if m > 1 else math.sqrt(beta)
                    u_names = []
                    for i in range(m):
                        uname = f"u!{i}"
                        bld.var(uname)
                        row = {uname: 1.0}
                        for j, rc in enumerate(covered):
                            if w[i, j] != 0.0:
                                row[f"r!{rc}"] = row.get(f"r!{rc}", 0.0) - w[i, j]
                        bld.add(row, "=", 0.0)
                        u_names.append(uname)
                    _octagon_rows(bld, u_names, radius)

    # estimator convergence band around the reference state
    if ctx.x_ref and np.isfinite(ctx.epsilon):
        for col_i, col in enumerate(sys.columns):
            if col not in ctx.x_ref:
                continue
            row = {}
            for c in chans:
                if c.startswith("demand:"):
                    jid = c.split(":", 1)[1]
                    coeff = (
                        float(sens.x_per_demand[col_i, sens.mass_junctions.index(jid)])
                        if jid in sens.mass_junctions else 0.0
                    )
                elif c in sens.meas_channels:
                    coeff = float(sens.x_per_meas[col_i, sens.meas_channels.index(c)])
                else:
                    coeff = 0.0
                if coeff != 0.0:
                    for var, v in a_terms(c, coeff).items():
                        row[var] = row.get(var, 0.0) + v
            if not row:
                continue
            base_dev = float(base.x[col_i]) - ctx.x_ref[col]
            bld.add(dict(row), "<=", ctx.epsilon - base_dev)
            bld.add({k: -v for k, v in row.items()}, "<=", ctx.epsilon + base_dev)
    return True
