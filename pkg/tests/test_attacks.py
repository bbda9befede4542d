"""Attack engine tests: closed forms, stealth MILP, random FDI, dispatch."""

import numpy as np
import pytest

from watersec import attacks, detection, estimation as est, hydraulics as hyd, units
from watersec.attacks import (
    AttackBounds,
    AttackContext,
    AttackVector,
    KnowledgeInventory,
    RfdiParams,
    RfdiState,
    TargetSet,
)
from watersec.inp import parse_inp
from watersec.validation import validate_frame

TOY_SENSORS = dict(flow=["PUMP1", "P1"], demand=["J1", "J2"])


@pytest.fixture(scope="module")
def toy_setup(toy3):
    """Noiseless toy loop: state, frame, operator pieces shared by tests."""
    ctl = hyd.Controls(pump_speeds={"PUMP1": 1.0})
    demands = toy3.demands_at(0)
    state = hyd.solve_network_step(toy3, demands, ctl, {})
    cfg = est.SensorConfig.build(**TOY_SENSORS)
    frame = est.frame_from_state(toy3, cfg, state, demands)
    prev = {l.id: state.link_flow(l.id) for l in toy3.links()}
    detector = detection.CusumDetector(
        "vectorized", cfg.residual_channels,
        b=np.full(2, 0.02), tau=np.full(2, 0.10),
    )
    return toy3, ctl, cfg, state, frame, prev, detector


def make_ctx(toy_setup, detector=None, **kw):
    toy3, ctl, cfg, state, frame, prev, det = toy_setup
    targets = kw.pop("targets", TargetSet(
        flow_targets=("PUMP1",), demand_targets=("J1",), window=(0, 10),
    ))
    return AttackContext.build(
        toy3, cfg, targets, ctl, prev,
        detector=detector if detector is not None else det, **kw,
    )


class TestClosedForms:
    def test_vectorized_hand_case(self):
        a = attacks.cusum_vectorized_attack(
            r=np.array([0.3]), tau=np.array([5.0]), b=np.array([1.0]),
            c_prev=np.array([2.0]), k=4, k_star=4,
        )
        assert a[0] == pytest.approx(3.7, abs=1e-12)
        # replay through the detector: accumulator lands exactly on tau
        d = detection.CusumDetector("vectorized", ["s"], b=[1.0], tau=[5.0], c=[2.0])
        alarms = d.step(np.array([0.3 + a[0]]), 4)
        assert d.c[0] == pytest.approx(5.0, abs=1e-12)
        assert alarms == []

    def test_threshold_riding_freezes_accumulator(self):
        d = detection.CusumDetector("vectorized", ["s"], b=[1.0], tau=[5.0], c=[2.0])
        rng = np.random.default_rng(0)
        k_star = 3
        frozen = None
        for k in range(3, 30):
            r = rng.normal(0, 0.1, size=1)
            a = attacks.cusum_vectorized_attack(r, [5.0], [1.0], d.c.copy(), k, k_star)
            d.step(r + a, k)
            if k == k_star:
                frozen = d.c[0]
            else:
                assert abs(d.c[0] - frozen) < 1e-10
        assert d.alarm_log == []

    def test_chi2_rides_alpha_exactly(self):
        alpha = detection.calibrate_chi2(1, 200.0)
        det = detection.ChiSquaredDetector(["s"], np.eye(1), alpha)
        r = np.array([0.37])
        a = attacks.chi2_attack(r, np.eye(1), alpha)
        z = det.statistic(r + a)
        assert z == pytest.approx(alpha, abs=1e-12)

    def test_chi2_multichannel_rides_alpha(self):
        rng = np.random.default_rng(7)
        m = 4
        sigma = detection.estimate_sigma(rng.normal(size=(300, m)) * 0.1)
        alpha = detection.calibrate_chi2(m, 500.0)
        det = detection.ChiSquaredDetector([f"s{i}" for i in range(m)],
                                           np.linalg.inv(sigma), alpha)
        r = rng.normal(0, 0.1, size=m)
        a = attacks.chi2_attack(r, sigma, alpha)
        assert det.statistic(r + a) == pytest.approx(alpha, abs=1e-9)

    def test_scalar_cusum_requires_headroom(self):
        with pytest.raises(attacks.ClosedFormInfeasible):
            attacks.cusum_scalar_attack(
                np.zeros(2), np.eye(2), tau=1.0, b=0.5, c_prev=2.0, k=0, k_star=0
            )

    def test_scalar_cusum_rides_threshold(self):
        sigma = np.diag([0.04, 0.09])
        a = attacks.cusum_scalar_attack(
            np.array([0.1, -0.2]), sigma, tau=3.0, b=0.5, c_prev=1.0, k=5, k_star=5
        )
        r_a = np.array([0.1, -0.2]) + a
        z = r_a @ np.linalg.inv(sigma) @ r_a
        assert z == pytest.approx(3.0 + 0.5 - 1.0, abs=1e-9)

    def test_compensation_realizes_targets(self, toy_setup):
        toy3, ctl, cfg, state, frame, prev, _ = toy_setup
        targets = TargetSet(flow_targets=("PUMP1", "P1"), window=(0, 10))
        ctx = AttackContext.build(toy3, cfg, targets, ctl, prev)
        sys = attacks.local_estimation_system(ctx, frame)
        sens = est.sensitivities(sys)
        r0 = est.estimate(sys).residuals
        rho = np.array([0.05, -0.03])
        comp = attacks.compensated_attack(sens, r0, ["flow:PUMP1", "flow:P1"], rho)
        # apply and recompute the operator's residuals
        bumped = frame.copy()
        bumped.flows["PUMP1"] += comp.attack[0]
        bumped.flows["P1"] += comp.attack[1]
        sys2 = attacks.local_estimation_system(ctx, bumped)
        realized = est.estimate(sys2).residuals
        idx = [sys2.meas_channels.index(c) for c in ["flow:PUMP1", "flow:P1"]]
        assert realized[idx] == pytest.approx(rho, abs=1e-9)


class TestTargetsAndDispatch:
    def test_unknown_target_rejected(self, net1):
        cfg = est.SensorConfig.build(flow=["P1"])
        ts = TargetSet(flow_targets=("P9",), window=(0, 5))
        with pytest.raises(ValueError, match="not a configured sensor"):
            ts.validate_against(net1, cfg)

    def test_connectivity_check(self, net1):
        assert attacks.targets_connected(net1, ["flow:PUMP1", "demand:J1", "flow:P1"])
        assert not attacks.targets_connected(net1, ["flow:P1", "flow:P5"])

    def test_subnetwork_interior(self, net1):
        ts = TargetSet(flow_targets=("PUMP1", "P1"), demand_targets=("J1",), window=(0, 5))
        sub = attacks.build_subnetwork(net1, ts)
        assert "J1" in sub.interior_junctions
        assert {"PUMP1", "P1"} <= sub.links

    def test_disconnected_targets_get_bridged(self, net1):
        ts = TargetSet(flow_targets=("PUMP1", "P2"), window=(0, 5))
        sub = attacks.build_subnetwork(net1, ts)
        # bridging pulls in the path through J2
        assert {"R1", "J1", "J2", "J3"} <= sub.nodes

    def test_dispatch_missing_knowledge(self, net1):
        cfg = est.SensorConfig.build(flow=["PUMP1", "P1"], demand=["J1"])
        ts = TargetSet(flow_targets=("PUMP1",), window=(0, 5))
        inv = KnowledgeInventory(measurements=True, topology=True)
        with pytest.raises(attacks.DispatchError) as err:
            attacks.dispatch("fs_fdi", inv, net1, cfg, ts)
        assert "id_params" in err.value.missing

    def test_dispatch_disconnected_suggests_alternatives(self, net1):
        cfg = est.SensorConfig.build(flow=["P1", "P2", "P5", "PUMP1"], demand=["J1"])
        ts = TargetSet(flow_targets=("P1", "P5"), window=(0, 5))
        inv = KnowledgeInventory(measurements=True, topology=True)
        with pytest.raises(attacks.DispatchError) as err:
            attacks.dispatch("ha_fdi", inv, net1, cfg, ts)
        assert err.value.suggestions
        for combo in err.value.suggestions:
            assert len(combo) == 2
            assert attacks.targets_connected(net1, combo)

    def test_r_fdi_needs_only_measurements(self, net1):
        cfg = est.SensorConfig.build(flow=["P1"])
        ts = TargetSet(flow_targets=("P1",), window=(0, 5))
        plan = attacks.dispatch(
            "r_fdi", KnowledgeInventory(measurements=True), net1, cfg, ts
        )
        assert plan.kind == "r_fdi"


class TestStealthMilp:
    def test_zero_bounds_zero_attack(self, toy_setup):
        toy3, ctl, cfg, state, frame, prev, det = toy_setup
        ctx = make_ctx(toy_setup)
        out = attacks.stealth_milp_step("fs", ctx, frame, AttackBounds(0, 0, 0))
        assert out.vector.is_zero()
        assert out.status == "zero"

    def test_ha_respects_mass_and_hits_caps(self, toy_setup):
        toy3, ctl, cfg, state, frame, prev, det = toy_setup
        ctx = make_ctx(toy_setup)
        bounds = AttackBounds(alpha_f=0.10, alpha_d=0.10)
        out = attacks.stealth_milp_step(
            "ha", ctx, frame, bounds,
            physics_check=lambda f: validate_frame(toy3, cfg, f, controls=ctl).verdict == "pass",
        )
        assert out.active
        attacked = out.vector.apply(frame)
        report = validate_frame(toy3, cfg, attacked, controls=ctl)
        assert report.verdict == "pass"
        assert abs(report.mass_violations["J1"]) < 1e-7
        # pump flow and demand move together (P1 untargeted pins the rest)
        assert out.vector.flow["PUMP1"] == pytest.approx(
            out.vector.demand["J1"], abs=1e-7
        )

    def test_hu_opt_breaks_physics(self, toy_setup):
        toy3, ctl, cfg, state, frame, prev, det = toy_setup
        ctx = make_ctx(toy_setup)
        bounds = AttackBounds(alpha_f=0.10, alpha_d=0.10)
        out = attacks.stealth_milp_step("hu_opt", ctx, frame, bounds)
        assert out.active
        attacked = out.vector.apply(frame)
        report = validate_frame(toy3, cfg, attacked, controls=ctl)
        assert report.verdict == "fail"

    def test_feasible_set_inclusion_objectives(self, toy_setup):
        toy3, ctl, cfg, state, frame, prev, det = toy_setup
        ctx = make_ctx(toy_setup)
        bounds = AttackBounds(alpha_f=0.10, alpha_d=0.10)
        fs = attacks.stealth_milp_step("fs", ctx, frame, bounds)
        ha = attacks.stealth_milp_step("ha", ctx, frame, bounds)
        hu = attacks.stealth_milp_step("hu_opt", ctx, frame, bounds)
        assert ha.objective >= fs.objective - 1e-7
        assert hu.objective >= fs.objective - 1e-7

    def test_fs_survives_operator_replay(self, toy_setup):
        toy3, ctl, cfg, state, frame, prev, det = toy_setup
        ctx = make_ctx(toy_setup)
        bounds = AttackBounds(alpha_f=0.10, alpha_d=0.10)

        def replay(attacked):
            sys = est.build_system(toy3, cfg, attacked, prev_flows=prev, controls=ctl)
            sol = est.estimate(sys)
            probe = detection.CusumDetector(
                "vectorized", det.channels, b=det.b.copy(),
                tau=det.tau.copy(), c=det.c.copy(),
            )
            return probe.step(sol.residuals, attacked.k)

        out = attacks.stealth_milp_step("fs", ctx, frame, bounds, operator_replay=replay)
        assert out.active
        assert replay(out.vector.apply(frame)) == []

    def test_locality_constraint_count(self, toy_setup, net1):
        # identical targets and sensor coverage: the embedded MILP matches the
        # standalone one in size even though net1 is much larger
        toy3, ctl, cfg, state, frame, prev, det = toy_setup
        bounds = AttackBounds(alpha_f=0.10, alpha_d=0.10)

        ts_net1 = TargetSet(flow_targets=("PUMP1", "P1"), demand_targets=("J1",),
                            window=(0, 10))
        cfg_net1 = est.SensorConfig.build(flow=["PUMP1", "P1"], demand=["J1"])
        ctl1 = hyd.Controls(pump_speeds={"PUMP1": 1.0})
        st1 = hyd.solve_network_step(
            net1, net1.demands_at(16), ctl1, {"T1": net1.tanks[0].init_head}, k=16
        )
        fr1 = est.frame_from_state(net1, cfg_net1, st1, net1.demands_at(16))
        fr1.k = 16
        ctx1 = AttackContext.build(
            net1, cfg_net1, ts_net1, ctl1,
            {l.id: st1.link_flow(l.id) for l in net1.links()},
        )
        from watersec.attacks.stealth_milp import build_attack_program
        prog1, _, _ = build_attack_program("ha", ctx1, fr1, bounds)

        ts_toy = TargetSet(flow_targets=("PUMP1", "P1"), demand_targets=("J1",),
                           window=(0, 10))
        cfg_toy = est.SensorConfig.build(flow=["PUMP1", "P1"], demand=["J1"])
        ctx_toy = AttackContext.build(toy3, cfg_toy, ts_toy, ctl, prev)
        prog2, _, _ = build_attack_program("ha", ctx_toy, frame, bounds)

        assert prog1.a.shape == prog2.a.shape
        assert prog1.binaries == prog2.binaries


class TestRandomFdi:
    def test_all_components_off(self, toy_setup):
        toy3, ctl, cfg, state, frame, prev, det = toy_setup
        ts = TargetSet(flow_targets=("PUMP1",), window=(0, 10))
        vec, _ = attacks.r_fdi_step(
            RfdiParams(seed=1), frame, ts, toy3, 3, RfdiState()
        )
        assert vec.is_zero()

    def test_clipping_to_alpha_max(self, toy_setup):
        toy3, ctl, cfg, state, frame, prev, det = toy_setup
        ts = TargetSet(flow_targets=("PUMP1",), window=(0, 10))
        params = RfdiParams(sigma_d=1e6, alpha_max=0.1, seed=2)
        vec, _ = attacks.r_fdi_step(params, frame, ts, toy3, 0, RfdiState())
        y = frame.flows["PUMP1"]
        assert abs(vec.flow["PUMP1"]) == pytest.approx(0.1 * abs(y), rel=1e-12)

    def test_window_gating(self, toy_setup):
        toy3, ctl, cfg, state, frame, prev, det = toy_setup
        ts = TargetSet(flow_targets=("PUMP1",), window=(5, 8))
        params = RfdiParams(sigma_d=1.0, seed=3)
        st = RfdiState()
        for k in (0, 4, 9, 20):
            vec, st = attacks.r_fdi_step(params, frame, ts, toy3, k, st)
            assert vec.is_zero()
        vec, st = attacks.r_fdi_step(params, frame, ts, toy3, 6, st)
        assert not vec.is_zero()

    def test_bit_identical_series_and_stream_isolation(self, toy_setup):
        toy3, ctl, cfg, state, frame, prev, det = toy_setup
        params = RfdiParams(sigma_d=0.3, sigma_n=1.0, alpha_n=0.02,
                            alpha_s=0.5, p_s=0.3, seed=11)

        def run(targets):
            st = RfdiState()
            series = []
            for k in range(0, 8):
                vec, st = attacks.r_fdi_step(params, frame, targets, toy3, k, st)
                series.append(vec.flow.get("PUMP1", 0.0))
            return series

        one = TargetSet(flow_targets=("PUMP1",), window=(0, 10))
        two = TargetSet(flow_targets=("PUMP1", "P1"), window=(0, 10))
        s1, s2 = run(one), run(two)
        assert s1 == s2  # adding a sensor never perturbs another's draws
        assert run(one) == s1  # bit-identical reruns
