"""WLS estimation tests: hand-computed cases, simulator oracle, invariants."""

import numpy as np
import pytest

from watersec import estimation as est
from watersec import hydraulics as hyd
from watersec.inp import parse_inp

NET1_SENSORS = dict(
    flow=("P1", "P5", "P7", "P9", "PUMP1"),
    head=("J3",),
    tank=("T1",),
    demand=("J1",),
)


def scalar_system(values, sigmas):
    """One-state system measured len(values) times."""
    rows = np.array([[1.0 / s] for s in sigmas])
    return est.EstimationSystem(
        h=rows,
        z=np.array(values) / np.array(sigmas),
        row_kinds=["measurement"] * len(values),
        columns=["q:X"],
        meas_channels=[f"flow:X{i}" for i in range(len(values))],
        meas_sigma=np.array(sigmas, float),
        meas_rows_raw=np.ones((len(values), 1)),
        meas_values=np.array(values, float),
        mass_junctions=[],
    )


def test_two_equal_measurements_average():
    sol = est.estimate(scalar_system([1.0, 3.0], [1.0, 1.0]))
    assert sol.x[0] == pytest.approx(2.0, abs=1e-12)


def test_weighted_average_hand_case():
    # weights (3, 1): sigma = (1/sqrt(3), 1) -> (3*1 + 1*3)/4 = 1.5
    sol = est.estimate(scalar_system([1.0, 3.0], [1.0 / np.sqrt(3.0), 1.0]))
    assert sol.x[0] == pytest.approx(1.5, abs=1e-12)


def test_identity_measurement_block():
    model = parse_inp("""
[JUNCTIONS]
 J1 10 200
[RESERVOIRS]
 R1 150
[PIPES]
 P1 R1 J1 800 12 110
""").model
    cfg = est.SensorConfig.build(flow=["P1"], head=["J1"],
                                 sigma_flow=1.0, sigma_head=1.0)
    state = hyd.solve_network_step(model, model.demands_at(0), hyd.Controls(), {})
    frame = est.frame_from_state(model, cfg, state, model.demands_at(0))
    sys = est.build_system(model, cfg, frame, prev_flows=state.pipe_flows)
    meas = sys.meas_rows_raw
    # one sensor per state, identity mapping over the measured block
    assert meas.shape == (2, 2)
    assert np.allclose(sorted(np.argmax(meas, axis=1)), [0, 1])
    assert np.allclose(meas[meas > 0], 1.0)


def test_net1_fixture_full_rank(net1):
    cfg = est.SensorConfig.build(**NET1_SENSORS)
    ctl = hyd.Controls(pump_speeds={"PUMP1": 1.0})
    state = hyd.solve_network_step(
        net1, net1.demands_at(0), ctl, {"T1": net1.tanks[0].init_head}
    )
    frame = est.frame_from_state(net1, cfg, state, net1.demands_at(0))
    sys = est.build_system(
        net1, cfg, frame, controls=ctl,
        prev_flows={l.id: state.link_flow(l.id) for l in net1.links()},
    )
    est.check_rank(sys)  # does not raise
    assert sys.n_states == 13 + 9 + 1


def test_head_anchor_loss_is_rank_deficient():
    model = parse_inp("""
[JUNCTIONS]
 J1 10 100
 J2 10 50
[RESERVOIRS]
 R1 150
[PIPES]
 P1 J1 J2 800 12 110
[PUMPS]
 PU1 R1 J1 HEAD C1
[CURVES]
 C1 500 60
""").model
    cfg = est.SensorConfig.build(flow=["P1"])
    ctl = hyd.Controls(pump_speeds={"PU1": 0.0})  # pump off cuts the head anchor
    frame = est.MeasurementFrame(0, flows={"P1": 0.1})
    sys = est.build_system(model, cfg, frame, controls=ctl)
    with pytest.raises(est.ObservabilityError) as excinfo:
        est.check_rank(sys)
    # witness concentrates on the floating head block
    assert any(name.startswith("h:") for name in excinfo.value.witness)


def test_noiseless_recovery_from_simulation(net1):
    ctl = hyd.Controls(pump_speeds={"PUMP1": 1.0})
    res = hyd.simulate(net1, ctl, n_steps=8)
    cfg = est.SensorConfig.build(**NET1_SENSORS)
    for state in res.states[2:6]:
        demands = net1.demands_at(state.k)
        frame = est.frame_from_state(net1, cfg, state, demands)
        frame.k = state.k
        sys = est.build_system(
            net1, cfg, frame, controls=ctl,
            prev_flows={l.id: state.link_flow(l.id) for l in net1.links()},
        )
        sol = est.estimate(sys)
        for l in net1.links():
            assert sol.flow(l.id) == pytest.approx(state.link_flow(l.id), abs=1e-6)
        for j in net1.junctions:
            assert sol.head(j.id) == pytest.approx(state.junction_heads[j.id], abs=1e-6)
        assert np.max(np.abs(sol.residuals)) < 1e-6


def test_idempotence_on_consistent_data():
    sys = scalar_system([2.5, 2.5, 2.5], [0.5, 1.0, 2.0])
    sol = est.estimate(sys)
    assert sol.x[0] == pytest.approx(2.5, abs=1e-12)


def test_weighted_residual_orthogonality(net1):
    rng = np.random.default_rng(5)
    ctl = hyd.Controls(pump_speeds={"PUMP1": 1.0})
    state = hyd.solve_network_step(
        net1, net1.demands_at(0), ctl, {"T1": net1.tanks[0].init_head}
    )
    cfg = est.SensorConfig.build(**NET1_SENSORS)
    demands = net1.demands_at(0)
    frame = est.frame_from_state(net1, cfg, state, demands)
    for lid in frame.flows:
        frame.flows[lid] += rng.normal(0, 1e-4)
    sys = est.build_system(
        net1, cfg, frame, controls=ctl,
        prev_flows={l.id: state.link_flow(l.id) for l in net1.links()},
    )
    sol = est.estimate(sys)
    scaled_residual = sys.z - sys.h @ sol.x
    assert np.max(np.abs(sys.h.T @ scaled_residual)) < 1e-6


def test_sigma_scaling_leaves_consistent_estimate():
    base = est.estimate(scalar_system([4.0, 4.0], [1.0, 2.0]))
    scaled = est.estimate(scalar_system([4.0, 4.0], [3.0, 6.0]))
    assert base.x[0] == pytest.approx(scaled.x[0], abs=1e-12)


def test_missing_reading_raises(net1):
    cfg = est.SensorConfig.build(**NET1_SENSORS)
    frame = est.MeasurementFrame(0)  # empty
    with pytest.raises(est.MissingReadingError):
        est.build_system(net1, cfg, frame)


def test_sensitivities_predict_estimate_shift(net1):
    ctl = hyd.Controls(pump_speeds={"PUMP1": 1.0})
    state = hyd.solve_network_step(
        net1, net1.demands_at(0), ctl, {"T1": net1.tanks[0].init_head}
    )
    cfg = est.SensorConfig.build(**NET1_SENSORS)
    demands = net1.demands_at(0)
    frame = est.frame_from_state(net1, cfg, state, demands)
    prev = {l.id: state.link_flow(l.id) for l in net1.links()}
    sys = est.build_system(net1, cfg, frame, controls=ctl, prev_flows=prev)
    sens = est.sensitivities(sys)
    base = est.estimate(sys)

    bumped = frame.copy()
    bumped.flows["P1"] += 0.05
    sys2 = est.build_system(net1, cfg, bumped, controls=ctl, prev_flows=prev)
    shifted = est.estimate(sys2)
    i = sens.meas_channels.index("flow:P1")
    predicted = base.x + sens.x_per_meas[:, i] * 0.05
    assert np.allclose(predicted, shifted.x, atol=1e-9)
    predicted_res = base.residuals + sens.res_per_meas[:, i] * 0.05
    assert np.allclose(predicted_res, shifted.residuals, atol=1e-9)
