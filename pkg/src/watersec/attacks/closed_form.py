"""Closed-form threshold-riding attacks against residual detectors.

The formulas assume residuals respond one-for-one to measurement edits.
Under least-squares estimation the estimate follows the edited readings,
so the raw formula undershoots; ``compensated_attack`` inverts the exact
linear residual response so the operator-side residuals land on the
intended values regardless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from watersec.estimation import Sensitivities


class ClosedFormInfeasible(RuntimeError):
    """The formula's square root has no real solution (tau + b < c)."""


def cusum_vectorized_targets(tau, b, c_prev, k, k_star, sign=1.0):
    """Post-attack residual values that ride a vectorized CUSUM at threshold.

    At k = k_star the accumulator is pushed exactly to tau; afterwards the
    distance matches the bias so the accumulator freezes.
    """
    tau = np.atleast_1d(np.asarray(tau, float))
    b = np.atleast_1d(np.asarray(b, float))
    c_prev = np.atleast_1d(np.asarray(c_prev, float))
    if k < k_star:
        return np.zeros_like(tau), False
    if k == k_star:
        return sign * (tau + b - c_prev), True
    return sign * b, True


def cusum_vectorized_attack(r, tau, b, c_prev, k, k_star, sign=1.0):
    """Attack additive to the measurements: a = target_residual - r."""
    target, active = cusum_vectorized_targets(tau, b, c_prev, k, k_star, sign)
    if not active:
        return np.zeros_like(target)
    return target - np.asarray(r, float)


def cusum_scalar_attack(r, sigma, tau, b, c_prev, k, k_star):
    """Scalar-distance CUSUM closed form over the full residual vector."""
    r = np.asarray(r, float)
    n = r.size
    if k < k_star:
        return np.zeros(n)
    if k == k_star:
        level = tau + b - c_prev
        if level < 0:
            raise ClosedFormInfeasible(
                f"tau + b - c = {level:.6g} < 0; no real attack exists this step"
            )
    else:
        level = b
    target = _sigma_sqrt(sigma) @ np.full(n, math.sqrt(level / n))
    return target - r


def chi2_attack(r, sigma, alpha):
    """Chi-squared closed form: rides the statistic exactly at alpha."""
    r = np.asarray(r, float)
    n = r.size
    target = _sigma_sqrt(sigma) @ np.full(n, math.sqrt(alpha / n))
    return target - r


def _sigma_sqrt(sigma):
    sigma = np.asarray(sigma, float)
    vals, vecs = np.linalg.eigh(sigma)
    if np.any(vals < -1e-12):
        raise ValueError("residual covariance must be positive semidefinite")
    return vecs @ np.diag(np.sqrt(np.maximum(vals, 0.0))) @ vecs.T


@dataclass
class CompensationResult:
    attack: np.ndarray          # additive edits on the targeted channels
    predicted: np.ndarray       # operator residuals on those channels
    condition: float


def compensated_attack(
    sens: Sensitivities,
    r0: np.ndarray,
    target_channels: list[str],
    rho_targets: np.ndarray,
) -> CompensationResult:
    """Solve for edits that realize the desired operator-side residuals.

    Residuals respond linearly: r = r0 + R a.  Restricting to the targeted
    channels gives a square system; its solution makes the realized
    residuals equal rho exactly (up to numerical precision).
    """
    idx = [sens.meas_channels.index(c) for c in target_channels]
    r_tt = sens.res_per_meas[np.ix_(idx, idx)]
    rhs = np.asarray(rho_targets, float) - np.asarray(r0, float)[idx]
    condition = float(np.linalg.cond(r_tt))
    if condition > 1e12:
        raise ValueError(
            "residual response on the targeted sensors is numerically singular; "
            "feedback compensation impossible for this target set"
        )
    a = np.linalg.solve(r_tt, rhs)
    predicted = np.asarray(r0, float)[idx] + r_tt @ a
    return CompensationResult(a, predicted, condition)
