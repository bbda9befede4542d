"""Random FDI: drift + noise + spike components with bounded magnitude.

Every (scenario seed, channel, component) triple owns an independent
counter-based stream (Philox keyed by a stable hash, advanced to the
timestep), so adding a sensor or re-running a window never perturbs
another sensor's draws.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from watersec.attacks.targets import AttackVector, TargetSet

_COMPONENTS = ("drift", "noise", "spike_u", "spike_s")


@dataclass(frozen=True)
class RfdiParams:
    sigma_d: float = 0.0   # drift-step std (reading units)
    sigma_n: float = 0.0   # relative-noise std
    alpha_n: float = 0.0   # noise scale on the reading
    alpha_s: float = 0.0   # spike scale on the reading
    p_s: float = 0.0       # spike probability per step
    alpha_max: float = 0.1  # clip fraction of |reading|
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_s <= 1.0:
            raise ValueError("spike probability must lie in [0, 1]")
        if self.alpha_max <= 0.0:
            raise ValueError("clip fraction must be positive")


@dataclass
class RfdiState:
    drift: dict[str, float] = field(default_factory=dict)


def _stream(seed: int, chan: str, component: str, k: int) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}|{chan}|{component}".encode()).digest()
    key = int.from_bytes(digest[:16], "little")
    bits = np.random.Philox(key=key)
    bits.advance(k * 4)  # disjoint counter block per timestep
    return np.random.Generator(bits)


def r_fdi_step(
    params: RfdiParams,
    frame,
    targets: TargetSet,
    model,
    k: int,
    state: RfdiState,
) -> tuple[AttackVector, RfdiState]:
    """One step of the random attack; returns the vector and updated drift."""
    vec = AttackVector.zero(k)
    if not targets.in_window(k):
        return vec, state
    for chan in targets.channels(model):
        y = frame.reading(chan)
        drift = state.drift.get(chan, 0.0)
        drift += _stream(params.seed, chan, "drift", k).normal(0.0, params.sigma_d)
        state.drift[chan] = drift

        nu = _stream(params.seed, chan, "noise", k).normal(0.0, params.sigma_n)
        noise = nu * params.alpha_n * y

        spike = 0.0
        if _stream(params.seed, chan, "spike_u", k).uniform(0.0, 1.0) <= params.p_s:
            s = _stream(params.seed, chan, "spike_s", k).uniform(-1.0, 1.0)
            spike = s * params.alpha_s * y

        total = drift + noise + spike
        cap = params.alpha_max * abs(y)
        total = min(max(total, -cap), cap)
        if total != 0.0:
            vec.set_component(chan, total)
    return vec, state
