"""Shared domain types for the opportunistic WLAN MAC.

Channel quantization, the randomized SNR-to-backoff-slot mapping, 802.11a
MAC/PHY timing, and the system configuration consumed by both the analytical
model and the simulator.

Conventions used throughout the package:
  * channel states are 0-based, 0 = worst, ``num_states - 1`` = best,
  * backoff timers are counted in slots of ``delta_us`` microseconds,
  * a state-``i`` queue draws its timer from the two-slot set
    {b(i), b(i)+1} with b(i) = 2*(num_states - 1 - i),
  * all durations are microseconds, all rates packets/second.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

AP = "ap"
STA = "sta"
SIDES = (AP, STA)


class ParameterError(ValueError):
    """Invalid configuration or operation parameter."""


@dataclass(frozen=True)
class ChannelSpace:
    """Quantized channel: Eb/N0 bins (dB) mapped to PHY data rates (Mbps).

    ``thresholds_db[i]`` is the lower edge of state i; the first edge is 0 dB
    and the lowest state absorbs everything below it (the bin is open below,
    so a state distribution over the space always sums to 1).
    """

    thresholds_db: tuple[float, ...] = (0.0, 19.11, 26.90, 31.88)
    rates_mbps: tuple[float, ...] = (12.0, 24.0, 48.0, 54.0)

    def __post_init__(self):
        if len(self.thresholds_db) != len(self.rates_mbps):
            raise ParameterError("thresholds and rates must have equal length")
        if len(self.rates_mbps) < 1:
            raise ParameterError("at least one channel state required")
        if self.thresholds_db[0] != 0.0:
            raise ParameterError("first Eb/N0 threshold must be 0 dB")
        if any(b >= a for b, a in zip(self.thresholds_db, self.thresholds_db[1:])):
            raise ParameterError("thresholds must be strictly ascending")
        if any(b >= a for b, a in zip(self.rates_mbps, self.rates_mbps[1:])):
            raise ParameterError("rates must be strictly ascending")

    @property
    def num_states(self) -> int:
        return len(self.rates_mbps)

    def thresholds_linear(self) -> np.ndarray:
        """Linear-scale lower bin edges; the first edge is 0 (open below)."""
        edges = [10.0 ** (t / 10.0) for t in self.thresholds_db]
        edges[0] = 0.0
        return np.asarray(edges)

    def state_for_ebn0_db(self, ebn0_db: float) -> int:
        state = 0
        for i, t in enumerate(self.thresholds_db):
            if ebn0_db >= t:
                state = i
        return state


def state_probabilities(space: ChannelSpace, mean_ebn0_db: float) -> np.ndarray:
    """State distribution for Rayleigh fading with the given mean Eb/N0.

    The instantaneous Eb/N0 is exponential with the linear-scale mean, so
    pi_i = exp(-t_i/mu) - exp(-t_{i+1}/mu) with t_i the linear bin edges and
    t_{|H|} = infinity.
    """
    if not math.isfinite(mean_ebn0_db):
        raise ParameterError(f"mean Eb/N0 must be finite, got {mean_ebn0_db!r}")
    mu = 10.0 ** (mean_ebn0_db / 10.0)
    if mu <= 0.0:
        raise ParameterError("linear mean Eb/N0 must be positive")
    edges = space.thresholds_linear()
    upper = np.append(edges[1:], np.inf)
    pi = np.exp(-edges / mu) - np.exp(-upper / mu)
    return pi


@dataclass(frozen=True)
class TimerPolicy:
    """Randomized channel-state-to-backoff mapping.

    A queue seeing state i draws its timer from {b(i), b(i)+1} slots with
    b(i) = 2*(num_states - 1 - i).  The AP side takes the even slot with
    probability ``p``, the STA side with probability ``1 - p``, which keeps
    the two sides of one reciprocal link from always colliding.
    """

    p: float = 0.5
    delta_us: float = 9.0
    num_states: int = 4

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ParameterError(f"p must be in [0, 1], got {self.p}")
        if self.delta_us <= 0:
            raise ParameterError("slot length must be positive")
        if self.num_states < 1:
            raise ParameterError("need at least one channel state")

    @property
    def t_max(self) -> int:
        return 2 * self.num_states - 1

    def base_slot(self, state: int) -> int:
        self._check_state(state)
        return 2 * (self.num_states - 1 - state)

    def slot_probs(self, state: int, side: str) -> dict[int, float]:
        """Timer pmf over backoff slots for one side in one channel state."""
        b = self.base_slot(state)
        p_even = self.p if side == AP else 1.0 - self.p
        return {b: p_even, b + 1: 1.0 - p_even}

    def _check_state(self, state: int) -> None:
        if not 0 <= state < self.num_states:
            raise ParameterError(f"state {state} outside 0..{self.num_states - 1}")


def draw_timer(policy: TimerPolicy, state: int, side: str, rng: np.random.Generator) -> int:
    """Sample a backoff timer (in slots) for one queue."""
    if side not in SIDES:
        raise ParameterError(f"side must be one of {SIDES}, got {side!r}")
    b = policy.base_slot(state)
    p_even = policy.p if side == AP else 1.0 - policy.p
    return b if rng.random() < p_even else b + 1


def state_from_timer(policy: TimerPolicy, slots: int) -> int:
    """Invert a timer length back to the channel state that produced it."""
    if not 0 <= slots <= policy.t_max:
        raise ParameterError(f"timer {slots} outside 0..{policy.t_max}")
    return policy.num_states - 1 - slots // 2


OFDM_SYMBOL_US = 4.0
PHY_OVERHEAD_US = 20.0  # 802.11a preamble + PLCP header
SERVICE_TAIL_BITS = 16 + 6  # PLCP service field + tail bits
SLOT_US = 9.0
SIFS_US = 16.0
DIFS_US = 34.0
ACK_BYTES = 14
ACK_RATE_MBPS = 24.0


def data_airtime_us(payload_bytes: int, rate_mbps: float,
                    mac_header_bytes: int = 28) -> float:
    """802.11a frame airtime: preamble plus whole OFDM symbols."""
    bits = SERVICE_TAIL_BITS + 8 * (payload_bytes + mac_header_bytes)
    bits_per_symbol = rate_mbps * OFDM_SYMBOL_US
    return PHY_OVERHEAD_US + math.ceil(bits / bits_per_symbol) * OFDM_SYMBOL_US


def ack_airtime_us() -> float:
    return data_airtime_us(ACK_BYTES, ACK_RATE_MBPS, mac_header_bytes=0)


@dataclass(frozen=True)
class MacTiming:
    """Single source of MAC/PHY durations for analysis and simulation.

    ``per_state_tx_us[i]`` is the full cost of one successful transmission in
    channel state i: data airtime + SIFS + ACK + DIFS, so that summing one
    such term per attempt accounts for every interframe gap in a cycle.
    ``collision_us`` is the constant charged per collision (airtime the
    channel is blocked plus the trailing DIFS).
    """

    slot_us: float
    difs_us: float
    sifs_us: float
    ack_us: float
    phy_overhead_us: float
    payload_bytes: int
    mac_header_bytes: int
    per_state_tx_us: tuple[float, ...]
    collision_us: float

    def __post_init__(self):
        if any(b <= a for b, a in zip(self.per_state_tx_us, self.per_state_tx_us[1:])):
            raise ParameterError("per-state tx times must strictly decrease with state")
        if self.collision_us <= 0:
            raise ParameterError("collision duration must be positive")

    @classmethod
    def dot11a(cls, space: ChannelSpace, payload_bytes: int = 1500,
               collision_rate_mbps: float | None = None) -> "MacTiming":
        """Standard 802.11a timing for the given channel space.

        ``collision_rate_mbps`` sets the airtime assumed lost per collision;
        by default the lowest PHY rate of the space (the conservative,
        EIFS-like choice: every station defers as if the garbled frame were a
        longest, lowest-rate one).
        """
        ack = ack_airtime_us()
        tx = tuple(
            data_airtime_us(payload_bytes, r) + SIFS_US + ack + DIFS_US
            for r in space.rates_mbps
        )
        col_rate = collision_rate_mbps if collision_rate_mbps is not None else space.rates_mbps[0]
        col = data_airtime_us(payload_bytes, col_rate) + DIFS_US
        return cls(
            slot_us=SLOT_US,
            difs_us=DIFS_US,
            sifs_us=SIFS_US,
            ack_us=ack,
            phy_overhead_us=PHY_OVERHEAD_US,
            payload_bytes=payload_bytes,
            mac_header_bytes=28,
            per_state_tx_us=tx,
            collision_us=col,
        )

    def t_suc(self, state: int) -> float:
        return self.per_state_tx_us[state]

    def t_col(self) -> float:
        return self.collision_us

    def data_airtime(self, state: int) -> float:
        """Airtime of the data frame alone in the given state (no gaps)."""
        return self.per_state_tx_us[state] - self.sifs_us - self.ack_us - self.difs_us


@dataclass(frozen=True)
class SystemConfig:
    """Scenario parameters: population, load, error model, channel mode."""

    n_stations: int
    lambda_pps: float
    per_state_per: tuple[float, ...] = (0.1, 0.1, 0.1, 0.1)
    pi: tuple[float, ...] | None = None
    mean_ebn0_db: float | None = None
    retry_limit: int | None = 7  # None = unlimited (matches the drop-free analysis)
    seed: int = 0

    def __post_init__(self):
        if self.n_stations < 1:
            raise ParameterError("need at least one station")
        if self.lambda_pps < 0:
            raise ParameterError("arrival rate must be nonnegative")
        if any(not 0.0 <= e <= 1.0 for e in self.per_state_per):
            raise ParameterError("per-state PER values must lie in [0, 1]")
        if (self.pi is None) == (self.mean_ebn0_db is None):
            raise ParameterError("specify exactly one of pi / mean_ebn0_db")
        if self.pi is not None:
            if any(w < 0 for w in self.pi):
                raise ParameterError("state probabilities must be nonnegative")
            if abs(sum(self.pi) - 1.0) > 1e-12:
                raise ParameterError("explicit state probabilities must sum to 1")
        if self.retry_limit is not None and self.retry_limit < 0:
            raise ParameterError("retry limit must be nonnegative or None")

    def resolve_pi(self, space: ChannelSpace) -> np.ndarray:
        """State distribution implied by the configured channel mode."""
        if self.pi is not None:
            if len(self.pi) != space.num_states:
                raise ParameterError("pi length does not match channel space")
            return np.asarray(self.pi, dtype=float)
        return state_probabilities(space, self.mean_ebn0_db)
