import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oppmac import (
    AP,
    STA,
    ChannelSpace,
    MacTiming,
    ParameterError,
    SystemConfig,
    TimerPolicy,
    draw_timer,
    state_from_timer,
    state_probabilities,
)
from oppmac.core import ack_airtime_us, data_airtime_us


def test_table_defaults_exact(space):
    assert space.thresholds_db == (0.0, 19.11, 26.90, 31.88)
    assert space.rates_mbps == (12.0, 24.0, 48.0, 54.0)
    assert space.num_states == 4


def test_channel_space_validation():
    with pytest.raises(ParameterError):
        ChannelSpace(thresholds_db=(0.0, 5.0), rates_mbps=(12.0,))
    with pytest.raises(ParameterError):
        ChannelSpace(thresholds_db=(1.0, 5.0, 9.0, 12.0), rates_mbps=(1, 2, 3, 4))
    with pytest.raises(ParameterError):
        ChannelSpace(thresholds_db=(0.0, 9.0, 5.0, 12.0), rates_mbps=(1, 2, 3, 4))
    with pytest.raises(ParameterError):
        ChannelSpace(thresholds_db=(0.0, 5.0, 9.0, 12.0), rates_mbps=(4, 3, 2, 1))


def test_state_probabilities_limits(space):
    hi = state_probabilities(space, 80.0)  # essentially infinite mean
    assert hi[-1] > 0.999
    lo = state_probabilities(space, -30.0)
    assert lo[0] > 0.999


@given(st.floats(min_value=-20.0, max_value=60.0))
@settings(max_examples=50, deadline=None)
def test_state_probabilities_is_distribution(mean_db):
    pi = state_probabilities(ChannelSpace(), mean_db)
    assert abs(pi.sum() - 1.0) < 1e-12
    assert (pi >= 0).all()


def test_state_probabilities_rejects_nonfinite(space):
    for bad in (math.nan, math.inf, -math.inf):
        with pytest.raises(ParameterError):
            state_probabilities(space, bad)


def test_state_probabilities_monte_carlo(space):
    """Quantizing 1e7 exponential draws must reproduce the closed form."""
    mean_db = 25.0
    pi = state_probabilities(space, mean_db)
    rng = np.random.Generator(np.random.PCG64(2024))
    n = 10_000_000
    draws = rng.exponential(10.0 ** (mean_db / 10.0), size=n)
    edges = space.thresholds_linear()[1:]
    states = np.searchsorted(edges, draws, side="right")
    freq = np.bincount(states, minlength=4) / n
    se = np.sqrt(pi * (1 - pi) / n)
    assert (np.abs(freq - pi) <= 3 * se + 1e-9).all()


def test_timer_supports_partition(policy):
    """Across states the draw sets tile {0..2|H|-1} with no overlap."""
    seen = []
    for i in range(policy.num_states):
        for side in (AP, STA):
            assert set(policy.slot_probs(i, side)) == {
                policy.base_slot(i), policy.base_slot(i) + 1}
        seen.extend(policy.slot_probs(i, AP))
    assert sorted(seen) == list(range(2 * policy.num_states))
    assert policy.t_max == 2 * policy.num_states - 1


def test_timer_best_state_slots(policy):
    """Best channel state draws from {0, 1} with probability p / 1-p."""
    probs = policy.slot_probs(3, AP)
    assert probs == {0: 0.5, 1: 0.5}


def test_timer_degenerate_p():
    pol = TimerPolicy(p=1.0, delta_us=9.0, num_states=4)
    rng = np.random.Generator(np.random.PCG64(1))
    assert all(draw_timer(pol, 0, AP, rng) == 6 for _ in range(32))
    assert all(draw_timer(pol, 0, STA, rng) == 7 for _ in range(32))


def test_timer_draw_frequency():
    pol = TimerPolicy(p=0.3, delta_us=9.0, num_states=4)
    rng = np.random.Generator(np.random.PCG64(7))
    n = 1_000_000
    base = pol.base_slot(2)
    hits = sum(draw_timer(pol, 2, AP, rng) == base for _ in range(n))
    assert abs(hits / n - 0.3) < 0.002


@given(st.integers(min_value=0, max_value=3), st.sampled_from([AP, STA]),
       st.integers())
@settings(max_examples=60, deadline=None)
def test_state_from_timer_round_trip(state, side, seed):
    pol = TimerPolicy(p=0.4, delta_us=9.0, num_states=4)
    rng = np.random.Generator(np.random.PCG64(seed % 2**63))
    slots = draw_timer(pol, state, side, rng)
    assert state_from_timer(pol, slots) == state


def test_state_from_timer_edges(policy):
    assert state_from_timer(policy, 0) == 3
    assert state_from_timer(policy, 1) == 3
    assert state_from_timer(policy, 7) == 0
    for bad in (-1, 8):
        with pytest.raises(ParameterError):
            state_from_timer(policy, bad)


def test_airtime_hand_check():
    """1500 B at 12 Mbps: 16+6 service/tail + 8*(1500+28) data bits over
    48 bits/symbol -> 256 symbols -> 1024 us + 20 us preamble."""
    assert data_airtime_us(1500, 12.0) == 20.0 + 256 * 4.0
    assert data_airtime_us(1500, 54.0) == 20.0 + 57 * 4.0
    # ACK: 14 bytes at 24 Mbps -> 2 symbols
    assert ack_airtime_us() == 20.0 + 2 * 4.0


def test_mac_timing_values(space, timing):
    assert timing.per_state_tx_us == (1122.0, 610.0, 354.0, 326.0)
    assert timing.collision_us == 1044.0 + 34.0
    assert timing.t_suc(3) < timing.t_suc(0)
    assert timing.t_col() == timing.collision_us
    # airtime monotonicity: higher rate, strictly shorter
    tx = timing.per_state_tx_us
    assert all(b < a for a, b in zip(tx, tx[1:]))
    assert timing.data_airtime(0) == 1044.0


def test_mac_timing_validation(space):
    with pytest.raises(ParameterError):
        MacTiming(slot_us=9, difs_us=34, sifs_us=16, ack_us=28,
                  phy_overhead_us=20, payload_bytes=1500, mac_header_bytes=28,
                  per_state_tx_us=(100.0, 200.0), collision_us=50.0)


def test_system_config_validation():
    with pytest.raises(ParameterError):
        SystemConfig(n_stations=0, lambda_pps=1.0, pi=(1.0, 0, 0, 0))
    with pytest.raises(ParameterError):
        SystemConfig(n_stations=1, lambda_pps=-1.0, pi=(1.0, 0, 0, 0))
    with pytest.raises(ParameterError):
        SystemConfig(n_stations=1, lambda_pps=1.0)  # no channel mode
    with pytest.raises(ParameterError):
        SystemConfig(n_stations=1, lambda_pps=1.0, pi=(0.5, 0.5, 0.1, 0.0))
    with pytest.raises(ParameterError):
        SystemConfig(n_stations=1, lambda_pps=1.0, pi=(0.25,) * 4,
                     mean_ebn0_db=20.0)
    cfg = SystemConfig(n_stations=2, lambda_pps=5.0, mean_ebn0_db=25.0)
    pi = cfg.resolve_pi(ChannelSpace())
    assert abs(pi.sum() - 1.0) < 1e-12


def test_draw_timer_bad_side(policy):
    rng = np.random.Generator(np.random.PCG64(0))
    with pytest.raises(ParameterError):
        draw_timer(policy, 1, "apsta", rng)
