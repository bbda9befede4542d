"""Residual-based intrusion detection: CUSUM and chi-squared detectors.

The chi-squared threshold is calibrated through a self-contained
regularized lower incomplete gamma implementation (series + continued
fraction) inverted by bisection; scipy serves only as a test oracle.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Alarm:
    k: int
    detector: str
    sensor: str
    statistic: float
    threshold: float


# ---------------------------------------------------------------------------
# regularized lower incomplete gamma P(a, x) and its inverse


def _gamma_series(a: float, x: float) -> float:
    ap = a
    summand = 1.0 / a
    total = summand
    for _ in range(500):
        ap += 1.0
        summand *= x / ap
        total += summand
        if abs(summand) < abs(total) * 1e-16:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a: float, x: float) -> float:
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 500):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0:
        raise ValueError("shape parameter must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cf(a, x)


def gammainc_lower_inv(a: float, p: float, tol: float = 1e-10) -> float:
    """Invert P(a, x) = p by bisection on a growing bracket."""
    if not 0.0 <= p < 1.0:
        raise ValueError("p must lie in [0, 1)")
    if p == 0.0:
        return 0.0
    hi = max(a, 1.0)
    while gammainc_lower(a, hi) < p:
        hi *= 2.0
        if hi > 1e12:
            raise ArithmeticError("bracket growth failed")
    lo = 0.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if gammainc_lower(a, mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def calibrate_chi2(n_y: int, gamma: float) -> float:
    """Chi-squared threshold for n_y measurements at mean time gamma between
    false alarms: 2 P^-1(n_y/2, 1 - 1/gamma)."""
    if n_y < 1:
        raise ValueError("need at least one measurement")
    if gamma <= 1:
        raise ValueError("mean time between false alarms must exceed 1 step")
    return 2.0 * gammainc_lower_inv(n_y / 2.0, 1.0 - 1.0 / gamma)


# ---------------------------------------------------------------------------
# detectors


@dataclass
class CusumDetector:
    """CUSUM with per-sensor (vectorized) or aggregated (scalar) distance."""

    mode: str  # "vectorized" | "scalar"
    channels: list[str]
    b: np.ndarray  # per-sensor bias, or length-1 for scalar mode
    tau: np.ndarray
    sigma_inv: np.ndarray | None = None  # scalar mode only
    c: np.ndarray = None
    alarm_log: list[Alarm] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in ("vectorized", "scalar"):
            raise ValueError(f"unknown CUSUM mode {self.mode!r}")
        self.b = np.atleast_1d(np.asarray(self.b, float))
        self.tau = np.atleast_1d(np.asarray(self.tau, float))
        n = len(self.channels) if self.mode == "vectorized" else 1
        if self.b.size == 1 and n > 1:
            self.b = np.full(n, self.b[0])
        if self.tau.size == 1 and n > 1:
            self.tau = np.full(n, self.tau[0])
        if self.b.size != n or self.tau.size != n:
            raise ValueError("bias/threshold length must match sensor count")
        if np.any(self.b < 0) or np.any(self.tau < 0):
            raise ValueError("bias and threshold must be non-negative")
        if self.mode == "scalar" and self.sigma_inv is None:
            raise ValueError("scalar mode requires the residual precision matrix")
        if self.c is None:
            self.c = np.zeros(n)
        else:
            self.c = np.atleast_1d(np.asarray(self.c, float)).copy()

    @property
    def name(self) -> str:
        return f"cusum_{self.mode}"

    def distance(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, float)
        if self.mode == "vectorized":
            if r.size != len(self.channels):
                raise ValueError("residual dimension mismatch")
            return np.abs(r)
        if r.size != self.sigma_inv.shape[0]:
            raise ValueError("residual dimension mismatch")
        return np.array([float(r @ self.sigma_inv @ r)])

    def step(self, r: np.ndarray, k: int) -> list[Alarm]:
        """Advance one step per the CUSUM recursion; returns new alarms."""
        z = self.distance(r)
        alarms = []
        for i in range(self.c.size):
            if self.c[i] > self.tau[i]:
                # reset branch: the alarm fired on the previous step
                self.c[i] = 0.0
            else:
                self.c[i] = max(0.0, self.c[i] + z[i] - self.b[i])
            if self.c[i] > self.tau[i]:
                sensor = self.channels[i] if self.mode == "vectorized" else "global"
                alarms.append(Alarm(k, self.name, sensor, float(self.c[i]), float(self.tau[i])))
        self.alarm_log.extend(alarms)
        return alarms


@dataclass
class ChiSquaredDetector:
    """Stateless quadratic-form test against a gamma-calibrated threshold."""

    channels: list[str]
    sigma_inv: np.ndarray
    alpha: float
    n_y: int = 0
    gamma: float = 0.0
    alarm_log: list[Alarm] = field(default_factory=list)

    def __post_init__(self):
        self.sigma_inv = np.asarray(self.sigma_inv, float)
        if self.alpha <= 0:
            raise ValueError("threshold must be positive")
        if self.sigma_inv.shape[0] != self.sigma_inv.shape[1]:
            raise ValueError("precision matrix must be square")
        if not np.allclose(self.sigma_inv, self.sigma_inv.T, atol=1e-10):
            raise ValueError("precision matrix must be symmetric")

    name = "chi2"

    @classmethod
    def calibrated(cls, channels, sigma_inv, gamma):
        n_y = len(channels)
        return cls(channels, sigma_inv, calibrate_chi2(n_y, gamma), n_y, gamma)

    def statistic(self, r: np.ndarray) -> float:
        r = np.asarray(r, float)
        if r.size != self.sigma_inv.shape[0]:
            raise ValueError("residual dimension mismatch")
        return float(r @ self.sigma_inv @ r)

    def step(self, r: np.ndarray, k: int) -> list[Alarm]:
        z = self.statistic(r)
        if z > self.alpha:
            alarm = Alarm(k, self.name, "global", z, self.alpha)
            self.alarm_log.append(alarm)
            return [alarm]
        return []


# ---------------------------------------------------------------------------
# calibration from attack-free history


def calibrate_cusum(history: np.ndarray, min_steps: int = 24):
    """(tau, b) per sensor from attack-free residuals.

    tau = mean|r| + 3 std|r|, b = mean|r| + 0.5 std|r| with the population
    (1/N) standard deviation.
    """
    history = np.atleast_2d(np.asarray(history, float))
    if history.shape[0] < min_steps:
        raise ValueError(f"need at least {min_steps} steps of history")
    mag = np.abs(history)
    mean = mag.mean(axis=0)
    std = mag.std(axis=0)  # population convention
    tau = mean + 3.0 * std
    b = mean + 0.5 * std
    if np.any(tau <= 0):
        warnings.warn("degenerate CUSUM calibration: residual history is all zero",
                      RuntimeWarning)
    return tau, b


def estimate_sigma(history: np.ndarray, regularization: float = 1e-8) -> np.ndarray:
    """Sample residual covariance with a diagonal ridge."""
    history = np.atleast_2d(np.asarray(history, float))
    centered = history - history.mean(axis=0)
    cov = centered.T @ centered / history.shape[0]
    return cov + regularization * np.eye(cov.shape[0])
