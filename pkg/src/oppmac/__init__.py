"""Joint uplink/downlink opportunistic scheduling for infrastructure WLANs:
channel-keyed backoff MAC simulator and its renewal-reward analysis."""

from .core import (
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
from .kernels import (
    ConsistencyError,
    KernelTable,
    SystemCensus,
    TaggedCensus,
    build_kernels,
    p_col,
    p_hat_minislot,
    p_suc_ap,
    p_suc_sta,
    transition_prob,
)
from .analysis import (
    AnalysisSolution,
    CycleModel,
    OccupancyPrior,
    capacity_search,
    census_prior,
    fixed_point,
    solve_expected_renewal,
    solve_tagged_success,
)

__all__ = [
    "AP", "STA", "ChannelSpace", "MacTiming", "ParameterError", "SystemConfig",
    "TimerPolicy", "draw_timer", "state_from_timer", "state_probabilities",
    "ConsistencyError", "KernelTable", "SystemCensus", "TaggedCensus",
    "build_kernels", "p_col", "p_hat_minislot", "p_suc_ap", "p_suc_sta",
    "transition_prob", "AnalysisSolution", "CycleModel", "OccupancyPrior",
    "capacity_search", "census_prior", "fixed_point", "solve_expected_renewal",
    "solve_tagged_success",
]

__version__ = "0.1.0"
