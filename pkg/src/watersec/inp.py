"""EPANET INP reader for the subset of sections this toolkit uses.

Assumes US customary units (GPM flows, feet elevations, inch diameters)
as in the bundled benchmark files.  Unsupported sections are collected as
warnings, not errors.  ``render`` writes the supported subset back out for
debugging and round-trip tests; it is not meant to feed external tools.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

from watersec import units
from watersec.network import (
    Junction,
    NetworkError,
    NetworkModel,
    Pipe,
    Pump,
    Reservoir,
    SimulationClock,
    Tank,
    Valve,
)

SUPPORTED_SECTIONS = (
    "TITLE", "JUNCTIONS", "RESERVOIRS", "TANKS", "PIPES", "PUMPS",
    "VALVES", "DEMANDS", "PATTERNS", "CURVES", "TIMES", "STATUS",
)


class InpSyntaxError(NetworkError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass
class ParseResult:
    model: NetworkModel
    warnings: list[str] = field(default_factory=list)
    title: str = ""


def _clock_value(token: str, line_no: int) -> float:
    """Parse an EPANET clock token ('24:00', '1:30:00', or plain hours)."""
    if ":" in token:
        parts = token.split(":")
        try:
            nums = [float(x) for x in parts]
        except ValueError:
            raise InpSyntaxError(line_no, f"bad time value {token!r}")
        hours = nums[0] + (nums[1] if len(nums) > 1 else 0) / 60.0
        hours += (nums[2] if len(nums) > 2 else 0) / 3600.0
        return hours
    try:
        return float(token)
    except ValueError:
        raise InpSyntaxError(line_no, f"bad time value {token!r}")


def _floats(tokens, count, line_no, context):
    if len(tokens) < count:
        raise InpSyntaxError(line_no, f"{context}: expected {count} numeric fields")
    try:
        return [float(t) for t in tokens[:count]]
    except ValueError as exc:
        raise InpSyntaxError(line_no, f"{context}: {exc}")


def parse_inp(text: str) -> ParseResult:
    """Parse INP text into a validated NetworkModel plus warnings."""
    section = None
    warnings: list[str] = []
    title_lines: list[str] = []
    junctions: list[tuple] = []
    reservoirs: list[tuple] = []
    tanks: list[tuple] = []
    pipes: list[tuple] = []
    pumps: list[tuple] = []
    valves: list[tuple] = []
    demands: list[tuple] = []
    patterns: dict[str, list[float]] = {}
    curves: dict[str, list[tuple[float, float]]] = {}
    statuses: list[tuple] = []
    times: dict[str, float] = {}
    seen_sections: set[str] = set()

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise InpSyntaxError(line_no, f"malformed section header {line!r}")
            name = line[1:-1].strip().upper()
            if name in SUPPORTED_SECTIONS:
                section = name
                seen_sections.add(name)
            else:
                section = None
                warnings.append(f"line {line_no}: skipping unsupported section [{name}]")
            continue
        if section is None:
            continue
        tokens = line.split()
        if section == "TITLE":
            title_lines.append(line)
        elif section == "JUNCTIONS":
            elev = _floats(tokens[1:], 1, line_no, "junction")[0]
            demand = float(tokens[2]) if len(tokens) > 2 else 0.0
            pattern = tokens[3] if len(tokens) > 3 else None
            junctions.append((line_no, tokens[0], elev, demand, pattern))
        elif section == "RESERVOIRS":
            head = _floats(tokens[1:], 1, line_no, "reservoir")[0]
            reservoirs.append((line_no, tokens[0], head))
        elif section == "TANKS":
            vals = _floats(tokens[1:], 5, line_no, "tank")
            tanks.append((line_no, tokens[0], *vals))
        elif section == "PIPES":
            if len(tokens) < 6:
                raise InpSyntaxError(
                    line_no, "pipe: expected id, node1, node2, length, diameter, roughness"
                )
            vals = _floats(tokens[3:6], 3, line_no, "pipe")
            minor = float(tokens[6]) if len(tokens) > 6 else 0.0
            if len(tokens) > 7 and tokens[7].upper() == "CLOSED":
                warnings.append(f"line {line_no}: closed pipes unsupported; {tokens[0]!r} kept open")
            pipes.append((line_no, tokens[0], tokens[1], tokens[2], *vals, minor))
        elif section == "PUMPS":
            if len(tokens) < 5:
                raise InpSyntaxError(line_no, "pump: expected id, nodes, keyword, value")
            pumps.append((line_no, tokens[0], tokens[1], tokens[2], tokens[3:]))
        elif section == "VALVES":
            if len(tokens) < 6:
                raise InpSyntaxError(line_no, "valve: expected id, nodes, D, type, setting")
            valves.append((line_no, tokens[0], tokens[1], tokens[2], tokens[4].upper(),
                           float(tokens[5]), float(tokens[6]) if len(tokens) > 6 else 0.0))
        elif section == "DEMANDS":
            val = _floats(tokens[1:], 1, line_no, "demand")[0]
            demands.append((line_no, tokens[0], val, tokens[2] if len(tokens) > 2 else None))
        elif section == "PATTERNS":
            vals = _floats(tokens[1:], len(tokens) - 1, line_no, "pattern")
            patterns.setdefault(tokens[0], []).extend(vals)
        elif section == "CURVES":
            vals = _floats(tokens[1:], 2, line_no, "curve")
            curves.setdefault(tokens[0], []).append((vals[0], vals[1]))
        elif section == "TIMES":
            if tokens[0].upper() == "DURATION":
                times["duration"] = _clock_value(tokens[1], line_no)
            elif len(tokens) >= 3 and tokens[0].upper() == "HYDRAULIC":
                times["hydraulic"] = _clock_value(tokens[2], line_no) * 3600.0
            elif len(tokens) >= 3 and tokens[0].upper() == "PATTERN":
                times["pattern"] = _clock_value(tokens[2], line_no) * 3600.0
            else:
                warnings.append(f"line {line_no}: ignoring time option {tokens[0]!r}")
        elif section == "STATUS":
            statuses.append((line_no, tokens[0], tokens[1].upper()))

    if "JUNCTIONS" not in seen_sections or "PIPES" not in seen_sections:
        raise NetworkError("input must contain [JUNCTIONS] and [PIPES] sections")
    if not reservoirs and not tanks:
        raise NetworkError("no source node: neither [RESERVOIRS] nor [TANKS] present")

    model = NetworkModel(time=SimulationClock(
        duration=times.get("duration", 24.0),
        hydraulic_step=times.get("hydraulic", 3600.0),
        pattern_step=times.get("pattern", times.get("hydraulic", 3600.0)),
    ))

    demand_override = {d[1]: (d[2], d[3]) for d in demands}
    for line_no, jid, elev, demand, pattern in junctions:
        if jid in demand_override:
            demand, pattern = demand_override[jid]
        model.junctions.append(
            Junction(jid, elev, units.gpm_to_cfs(demand), pattern)
        )
    for line_no, rid, head in reservoirs:
        model.reservoirs.append(Reservoir(rid, head))
    for line_no, tid, elev, init, lo, hi, diam in tanks:
        area = math.pi * diam * diam / 4.0
        model.tanks.append(Tank(tid, elev, init, lo, hi, area))
    for line_no, pid, n1, n2, length, diam, rough, minor in pipes:
        model.pipes.append(Pipe(pid, n1, n2, length, diam, rough, minor))

    speed_settings = {s[1]: s[2] for s in statuses}
    for line_no, pid, n1, n2, spec in pumps:
        h0, alpha, nu = _pump_curve(pid, spec, curves, line_no, warnings)
        speed = 1.0
        raw = speed_settings.get(pid)
        if raw is not None and raw not in ("OPEN", "CLOSED"):
            speed = float(raw)
        elif raw == "CLOSED":
            speed = 0.0
        model.pumps.append(Pump(pid, n1, n2, h0, alpha, nu, init_speed=speed))
    for line_no, vid, n1, n2, vtype, setting, minor in valves:
        loss = setting if vtype == "TCV" else minor
        if vtype not in ("TCV", "GPV"):
            warnings.append(
                f"line {line_no}: valve {vid!r} type {vtype} treated as on-off with "
                f"minor loss {loss}"
            )
        status = "closed" if speed_settings.get(vid) == "CLOSED" else "open"
        model.valves.append(Valve(vid, n1, n2, loss, status))

    model.patterns.update({k: list(v) for k, v in patterns.items()})
    model._reindex()
    model.validate()
    return ParseResult(model, warnings, "\n".join(title_lines))


def _pump_curve(pid, spec, curves, line_no, warnings):
    """Map an INP pump spec onto (shutoff head, curve coefficient, exponent).

    Single-point curves use the EPANET convention: shutoff head is 1.33x
    the design head and the exponent is 2.
    """
    keyword = spec[0].upper()
    if keyword != "HEAD":
        raise InpSyntaxError(line_no, f"pump {pid!r}: only HEAD curves are supported")
    curve_id = spec[1]
    if curve_id not in curves:
        raise InpSyntaxError(line_no, f"pump {pid!r}: unknown curve {curve_id!r}")
    points = curves[curve_id]
    if len(points) > 1:
        warnings.append(
            f"line {line_no}: pump {pid!r} curve has {len(points)} points; using the "
            "middle one as the design point"
        )
    q_design, h_design = points[len(points) // 2]
    if q_design <= 0 or h_design <= 0:
        raise InpSyntaxError(line_no, f"pump {pid!r}: design point must be positive")
    q_cfs = units.gpm_to_cfs(q_design)
    h0 = 1.33 * h_design
    alpha = (h0 - h_design) / q_cfs**2
    return h0, alpha, 2.0


def render(model: NetworkModel, title: str = "") -> str:
    """Serialize the supported subset of a model back to INP text."""
    out = io.StringIO()
    out.write("[TITLE]\n")
    if title:
        out.write(title + "\n")
    out.write("\n[JUNCTIONS]\n;id  elev  demand  pattern\n")
    for j in model.junctions:
        pat = f"  {j.demand_pattern}" if j.demand_pattern else ""
        out.write(f" {j.id}  {j.elevation:.6g}  {units.cfs_to_gpm(j.base_demand):.10g}{pat}\n")
    out.write("\n[RESERVOIRS]\n;id  head\n")
    for r in model.reservoirs:
        out.write(f" {r.id}  {r.head:.6g}\n")
    out.write("\n[TANKS]\n;id  elev  init  min  max  diameter\n")
    for t in model.tanks:
        diam = math.sqrt(4.0 * t.cross_section_area / math.pi)
        out.write(
            f" {t.id}  {t.elevation:.6g}  {t.init_level:.6g}  {t.min_level:.6g}"
            f"  {t.max_level:.6g}  {diam:.10g}\n"
        )
    out.write("\n[PIPES]\n;id  node1  node2  length  diameter  roughness  minorloss\n")
    for p in model.pipes:
        out.write(
            f" {p.id}  {p.from_node}  {p.to_node}  {p.length:.6g}  {p.diameter:.6g}"
            f"  {p.roughness:.6g}  {p.minor_loss:.6g}\n"
        )
    out.write("\n[PUMPS]\n;id  node1  node2  HEAD curve\n")
    curves = []
    for p in model.pumps:
        out.write(f" {p.id}  {p.from_node}  {p.to_node}  HEAD  CRV-{p.id}\n")
        # reconstruct the single design point from (h0, alpha)
        h_design = p.shutoff_head / 1.33
        q_design = units.cfs_to_gpm(math.sqrt((p.shutoff_head - h_design) / p.curve_coeff))
        curves.append((f"CRV-{p.id}", q_design, h_design))
    out.write("\n[VALVES]\n;id  node1  node2  diameter  type  setting\n")
    for v in model.valves:
        out.write(f" {v.id}  {v.from_node}  {v.to_node}  12  TCV  {v.minor_loss:.10g}\n")
    out.write("\n[CURVES]\n;id  flow  head\n")
    for cid, q, h in curves:
        out.write(f" {cid}  {q:.10g}  {h:.10g}\n")
    out.write("\n[PATTERNS]\n;id  multipliers\n")
    for pid, mult in model.patterns.items():
        for start in range(0, len(mult), 6):
            row = "  ".join(f"{m:.10g}" for m in mult[start:start + 6])
            out.write(f" {pid}  {row}\n")
    out.write("\n[STATUS]\n;id  status/speed\n")
    for v in model.valves:
        if v.status == "closed":
            out.write(f" {v.id}  CLOSED\n")
    for p in model.pumps:
        if p.init_speed != 1.0:
            out.write(f" {p.id}  {p.init_speed:.10g}\n")
    out.write("\n[TIMES]\n")
    out.write(f" Duration  {model.time.duration:.10g}\n")
    out.write(f" Hydraulic Timestep  {model.time.hydraulic_step / 3600.0:.10g}\n")
    out.write(f" Pattern Timestep  {model.time.pattern_step / 3600.0:.10g}\n")
    return out.getvalue()
