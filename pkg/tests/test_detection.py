"""Detector tests: recursion semantics, calibration, gamma inversion."""

import math

import numpy as np
import pytest
import scipy.special
import scipy.stats

from watersec import detection as det


def make_cusum(tau=5.0, b=1.0, c=0.0, channels=("flow:A",)):
    return det.CusumDetector(
        mode="vectorized", channels=list(channels),
        b=np.full(len(channels), b), tau=np.full(len(channels), tau),
        c=np.full(len(channels), c),
    )


class TestCusum:
    def test_bias_matched_stays_zero(self):
        d = make_cusum(b=1.0)
        for k in range(50):
            d.step(np.array([1.0]), k)  # z == b every step
        assert d.c[0] == 0.0
        assert d.alarm_log == []

    def test_hand_case_reaches_threshold_without_alarm(self):
        d = make_cusum(tau=5.0, b=1.0, c=2.0)
        alarms = d.step(np.array([4.0]), 0)
        assert d.c[0] == pytest.approx(5.0)
        assert alarms == []  # 5 <= tau
        # accumulator exceeded only after a further push; then the alarm fires
        alarms = d.step(np.array([1.5]), 1)
        assert d.c[0] == pytest.approx(5.5)
        assert len(alarms) == 1
        # the following step takes the reset branch
        d.step(np.array([100.0]), 2)
        assert d.c[0] == 0.0

    def test_zero_distance_keeps_zero(self):
        d = make_cusum()
        for k in range(20):
            d.step(np.array([0.0]), k)
            assert d.c[0] == 0.0

    def test_accumulator_never_negative(self):
        rng = np.random.default_rng(0)
        d = make_cusum(tau=3.0, b=2.0)
        for k in range(200):
            d.step(rng.normal(size=1), k)
            assert d.c[0] >= 0.0

    def test_alarm_implies_prior_exceedance(self):
        rng = np.random.default_rng(1)
        d = make_cusum(tau=1.0, b=0.1)
        for k in range(100):
            before = d.c.copy()
            alarms = d.step(np.abs(rng.normal(size=1)) * 2, k)
            for a in alarms:
                assert a.statistic > a.threshold

    def test_per_sensor_reset_scoping(self):
        d = make_cusum(tau=1.0, b=0.0, channels=("flow:A", "flow:B"))
        d.step(np.array([2.0, 0.5]), 0)  # A exceeds, B accumulates
        assert d.c[0] == pytest.approx(2.0) and d.c[1] == pytest.approx(0.5)
        d.step(np.array([0.0, 0.3]), 1)
        assert d.c[0] == 0.0  # A reset
        assert d.c[1] == pytest.approx(0.8)  # B keeps accumulating

    def test_scalar_mode_quadratic_distance(self):
        d = det.CusumDetector(
            mode="scalar", channels=["flow:A", "flow:B"],
            b=np.array([1.0]), tau=np.array([10.0]),
            sigma_inv=np.eye(2),
        )
        d.step(np.array([3.0, 4.0]), 0)  # z = 25
        assert d.c[0] == pytest.approx(24.0)

    def test_dimension_mismatch(self):
        d = make_cusum()
        with pytest.raises(ValueError):
            d.step(np.array([1.0, 2.0]), 0)


class TestChi2:
    def test_zero_residual_no_alarm(self):
        d = det.ChiSquaredDetector(["a", "b"], np.eye(2), alpha=10.0)
        assert d.step(np.zeros(2), 0) == []

    def test_hand_case_alarm(self):
        d = det.ChiSquaredDetector(["a", "b"], np.eye(2), alpha=10.0)
        alarms = d.step(np.array([3.0, 4.0]), 7)
        assert len(alarms) == 1
        assert alarms[0].statistic == pytest.approx(25.0)
        assert alarms[0].k == 7

    def test_scaling_crosses_boundary_at_root(self):
        d = det.ChiSquaredDetector(["a", "b"], np.eye(2), alpha=10.0)
        r = np.array([1.0, 0.5])
        z1 = d.statistic(r)
        t_star = math.sqrt(d.alpha / z1)
        assert d.step(r * (t_star * 0.999), 0) == []
        assert len(d.step(r * (t_star * 1.001), 1)) == 1

    def test_orthogonal_invariance(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(4, 4))
        q, _ = np.linalg.qr(a)
        sigma = det.estimate_sigma(rng.normal(size=(200, 4)))
        d1 = det.ChiSquaredDetector(list("abcd"), np.linalg.inv(sigma), alpha=5.0)
        sigma_rot = q @ sigma @ q.T
        d2 = det.ChiSquaredDetector(list("abcd"), np.linalg.inv(sigma_rot), alpha=5.0)
        for _ in range(10):
            r = rng.normal(size=4)
            assert d1.statistic(r) == pytest.approx(d2.statistic(q @ r), rel=1e-9)


class TestCalibrateChi2:
    def test_two_dof_closed_form(self):
        for gamma in (10.0, 100.0, 1000.0):
            assert det.calibrate_chi2(2, gamma) == pytest.approx(
                2.0 * math.log(gamma), rel=1e-9
            )

    def test_matches_independent_quantile_oracle(self):
        # scipy's gammaincinv is an independent evaluation route
        for n_y, gamma in [(1, 100.0), (3, 50.0), (8, 1000.0), (13, 24.0)]:
            expected = 2.0 * scipy.special.gammaincinv(n_y / 2.0, 1.0 - 1.0 / gamma)
            assert det.calibrate_chi2(n_y, gamma) == pytest.approx(expected, rel=1e-8)
            # equivalently the chi-square quantile
            assert det.calibrate_chi2(n_y, gamma) == pytest.approx(
                scipy.stats.chi2.ppf(1.0 - 1.0 / gamma, n_y), rel=1e-8
            )

    def test_monotone_in_gamma(self):
        alphas = [det.calibrate_chi2(4, g) for g in (5, 50, 500, 5000)]
        assert all(a < b for a, b in zip(alphas, alphas[1:]))

    def test_rejects_bad_gamma(self):
        with pytest.raises(ValueError):
            det.calibrate_chi2(4, 1.0)


class TestGammaInc:
    def test_against_scipy_grid(self):
        for a in (0.5, 1.0, 2.5, 7.0, 20.0):
            for x in (0.0, 0.1, 1.0, 5.0, 30.0):
                assert det.gammainc_lower(a, x) == pytest.approx(
                    scipy.special.gammainc(a, x), abs=1e-12
                )

    def test_inverse_roundtrip(self):
        for a in (0.5, 2.0, 6.5):
            for p in (0.01, 0.5, 0.99, 0.999):
                x = det.gammainc_lower_inv(a, p)
                assert det.gammainc_lower(a, x) == pytest.approx(p, abs=1e-9)


class TestCalibrateCusum:
    def test_constant_magnitude(self):
        hist = np.full((30, 2), 0.7)
        tau, b = det.calibrate_cusum(hist)
        assert tau == pytest.approx([0.7, 0.7])
        assert b == pytest.approx([0.7, 0.7])

    def test_alternating_hand_case(self):
        hist = np.array([[0.0], [2.0]] * 15)
        tau, b = det.calibrate_cusum(hist)
        assert tau[0] == pytest.approx(4.0)  # mean 1, population std 1
        assert b[0] == pytest.approx(1.5)

    def test_all_zero_warns(self):
        with pytest.warns(RuntimeWarning, match="degenerate"):
            det.calibrate_cusum(np.zeros((30, 1)))

    def test_short_history_rejected(self):
        with pytest.raises(ValueError):
            det.calibrate_cusum(np.ones((10, 1)))

    def test_false_alarm_rate_under_calibration(self):
        rng = np.random.default_rng(42)
        history = rng.normal(0, 0.13, size=(500, 3))
        tau, b = det.calibrate_cusum(history)
        d = det.CusumDetector("vectorized", ["a", "b", "c"], b=b, tau=tau)
        alarms = 0
        steps = 10_000
        for k in range(steps):
            alarms += len(d.step(rng.normal(0, 0.13, size=3), k))
        # loose statistical gate: per-sensor false alarm rate below 2%
        assert alarms / (3 * steps) < 0.02
