"""Two-state Markov uplink and the per-slot upload budget."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class ChannelState(enum.IntEnum):
    LOW = 0
    HIGH = 1


@dataclass(frozen=True)
class ChannelModel:
    r_high: float = 20e6
    r_low: float = 8e6
    p_hl: float = 0.2          # P(High -> Low)
    p_lh: float = 0.2          # P(Low -> High)
    frame_bits: float = 2e6
    slot_seconds: float = 2.0
    initial: ChannelState = ChannelState.HIGH

    def __post_init__(self):
        if not self.r_high > self.r_low > 0:
            raise ValueError("rates must satisfy r_high > r_low > 0")
        for name in ("p_hl", "p_lh"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be a probability")
        if not (self.frame_bits > 0 and self.slot_seconds > 0):
            raise ValueError("frame_bits and slot_seconds must be positive")

    def rate(self, s: ChannelState) -> float:
        return self.r_high if s == ChannelState.HIGH else self.r_low


def next_state(s: ChannelState, m: ChannelModel, rng: np.random.Generator) -> ChannelState:
    u = rng.random()
    if s == ChannelState.HIGH:
        return ChannelState.LOW if u < m.p_hl else ChannelState.HIGH
    return ChannelState.HIGH if u < m.p_lh else ChannelState.LOW


def budget(s: ChannelState, m: ChannelModel) -> int:
    """Whole frames that fit in one slot: floor(R * tau / d)."""
    # guard against 39.999... from float division of exact ratios
    return max(0, math.floor(m.rate(s) * m.slot_seconds / m.frame_bits + 1e-9))


def stationary_high_fraction(m: ChannelModel) -> float:
    total = m.p_lh + m.p_hl
    if total == 0:
        return float(m.initial == ChannelState.HIGH)
    return m.p_lh / total


def sweep_probabilities(ratio: float, mixing: float = 0.2) -> tuple[float, float]:
    """``(p_hl, p_lh)`` giving a stationary High fraction of ``ratio``."""
    if not 0 < ratio < 1:
        raise ValueError(f"high-rate ratio must lie in (0, 1), got {ratio}")
    if not 0 < mixing <= 1:
        raise ValueError("mixing rate must lie in (0, 1]")
    return mixing * (1 - ratio), mixing * ratio


def simulate(m: ChannelModel, n_slots: int, rng: np.random.Generator) -> np.ndarray:
    """Sequence of states (as ints) for ``n_slots`` slots, starting at ``m.initial``."""
    out = np.empty(n_slots, dtype=np.int8)
    s = m.initial
    for t in range(n_slots):
        out[t] = s
        s = next_state(s, m, rng)
    return out
