"""Frame validation tests."""

import pytest

from watersec import estimation as est
from watersec import hydraulics as hyd
from watersec import units
from watersec.validation import validate_frame

FULL_NET1 = dict(
    flow=[f"P{i}" for i in range(1, 13)] + ["PUMP1"],
    head=[f"J{i}" for i in range(1, 10)],
    tank=["T1"],
    demand=[f"J{i}" for i in range(1, 10)],
)


@pytest.fixture(scope="module")
def simulated(net1):
    ctl = hyd.Controls(pump_speeds={"PUMP1": 1.0})
    res = hyd.simulate(net1, ctl, n_steps=6)
    return net1, ctl, res


def test_simulated_frame_passes(simulated):
    net1, ctl, res = simulated
    cfg = est.SensorConfig.build(**FULL_NET1)
    state = res.states[3]
    frame = est.frame_from_state(net1, cfg, state, net1.demands_at(state.k))
    report = validate_frame(net1, cfg, frame, controls=ctl)
    assert report.verdict == "pass"
    assert report.worst_mass <= 1e-6
    assert report.worst_energy <= 1e-4
    assert report.skipped_junctions == []


def test_incoherent_flow_fails(simulated):
    net1, ctl, res = simulated
    cfg = est.SensorConfig.build(**FULL_NET1)
    state = res.states[3]
    frame = est.frame_from_state(net1, cfg, state, net1.demands_at(state.k))
    frame.flows["PUMP1"] += 400 * units.GPM_TO_CFS  # uncoordinated manipulation
    report = validate_frame(net1, cfg, frame, controls=ctl)
    assert report.verdict == "fail"
    assert abs(report.mass_violations["J1"]) == pytest.approx(
        400 * units.GPM_TO_CFS, rel=1e-6
    )


def test_coordinated_manipulation_passes_mass(simulated):
    # shifting pump flow and demand together preserves the J1 balance
    net1, ctl, res = simulated
    cfg = est.SensorConfig.build(
        flow=["P1", "PUMP1"], demand=["J1"], tank=["T1"], head=[]
    )
    state = res.states[3]
    frame = est.frame_from_state(net1, cfg, state, net1.demands_at(state.k))
    bump = 120 * units.GPM_TO_CFS
    frame.flows["PUMP1"] += bump
    frame.demands["J1"] += bump
    report = validate_frame(net1, cfg, frame, controls=ctl)
    assert abs(report.mass_violations["J1"]) <= report.tol_mass


def test_partial_metering_skips_not_fails(simulated):
    net1, ctl, res = simulated
    cfg = est.SensorConfig.build(flow=["P1", "P5"], demand=["J1"], head=["J3"])
    state = res.states[2]
    frame = est.frame_from_state(net1, cfg, state, net1.demands_at(state.k))
    report = validate_frame(net1, cfg, frame, controls=ctl)
    # J1 lacks the pump meter; everything is skipped, nothing violated
    assert "J1" in report.skipped_junctions
    assert report.verdict == "pass"


def test_unmetering_junction_never_flips_pass_to_fail(simulated):
    net1, ctl, res = simulated
    cfg_full = est.SensorConfig.build(**FULL_NET1)
    state = res.states[4]
    frame = est.frame_from_state(net1, cfg_full, state, net1.demands_at(state.k))
    frame.flows["P5"] += 300 * units.GPM_TO_CFS  # break some junctions
    before = validate_frame(net1, cfg_full, frame, controls=ctl)

    reduced = dict(FULL_NET1)
    reduced["demand"] = [j for j in FULL_NET1["demand"] if j not in ("J6", "J7")]
    cfg_less = est.SensorConfig.build(**reduced)
    after = validate_frame(net1, cfg_less, frame, controls=ctl)
    assert set(after.mass_violations) <= set(before.mass_violations)
    if before.verdict == "pass":
        assert after.verdict == "pass"


def test_tank_link_energy_checked(simulated):
    net1, ctl, res = simulated
    cfg = est.SensorConfig.build(flow=["P7"], head=["J3"], tank=["T1"])
    state = res.states[3]
    frame = est.frame_from_state(net1, cfg, state, net1.demands_at(state.k))
    report = validate_frame(net1, cfg, frame, controls=ctl)
    assert "P7" in report.energy_violations
    assert abs(report.energy_violations["P7"]) <= 1e-4
    frame.flows["P7"] += 20.0  # short fat pipe: needs a large bump to move head
    report = validate_frame(net1, cfg, frame, controls=ctl)
    assert report.verdict == "fail"
