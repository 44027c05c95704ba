"""Experiment configuration files.

Flat, human-readable ``section.key = value`` lines; ``#`` starts a comment.
Keys map one-to-one onto the domain types:

    system.n_stations      = 7
    system.lambda_pps      = 60.0
    system.per_state_per   = 0.1, 0.1, 0.1, 0.1
    system.retry_limit     = 7          # or "unlimited"
    system.seed            = 1
    channel.mode           = explicit   # or "rayleigh"
    channel.pi             = 0.25, 0.25, 0.25, 0.25
    channel.mean_ebn0_db   = 28.0       # rayleigh mode only
    channel.thresholds_db  = 0, 19.11, 26.90, 31.88
    channel.rates_mbps     = 12, 24, 48, 54
    timer.p                = 0.5
    timer.delta_us         = 9.0
    timing.payload_bytes   = 1500
    timing.collision_rate_mbps = 12     # analysis collision-cost rate

Unknown keys are rejected by name.  Command-line flags override file keys.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

from .core import ChannelSpace, MacTiming, ParameterError, SystemConfig, TimerPolicy


@dataclass(frozen=True)
class WlanSetup:
    """One fully resolved scenario: population, channel, timer, timing."""

    config: SystemConfig
    policy: TimerPolicy
    timing: MacTiming
    space: ChannelSpace

    def resolve_pi(self):
        return self.config.resolve_pi(self.space)


_DEFAULTS = {
    "system.n_stations": "7",
    "system.lambda_pps": "60.0",
    "system.per_state_per": "0.1, 0.1, 0.1, 0.1",
    "system.retry_limit": "7",
    "system.seed": "1",
    "channel.mode": "explicit",
    "channel.pi": "0.25, 0.25, 0.25, 0.25",
    "channel.mean_ebn0_db": "28.0",
    "channel.thresholds_db": "0, 19.11, 26.90, 31.88",
    "channel.rates_mbps": "12, 24, 48, 54",
    "timer.p": "0.5",
    "timer.delta_us": "9.0",
    "timing.payload_bytes": "1500",
    "timing.collision_rate_mbps": "12",
}


class ConfigError(ParameterError):
    """Malformed configuration file or overrides; carries the offending key."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key {key!r}: {message}")


def parse_config_text(text: str, overrides: dict | None = None) -> WlanSetup:
    values = dict(_DEFAULTS)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno} is not 'key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in values:
            raise ConfigError(key, "unknown key")
        values[key] = val
    for key, val in (overrides or {}).items():
        if key not in values:
            raise ConfigError(key, "unknown override")
        values[key] = str(val)
    return _build_setup(values)


def load_config(path, overrides: dict | None = None) -> WlanSetup:
    with open(path) as fh:
        return parse_config_text(fh.read(), overrides)


def default_setup(overrides: dict | None = None) -> WlanSetup:
    return parse_config_text("", overrides)


def _floats(key: str, val: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in val.split(","))
    except ValueError as exc:
        raise ConfigError(key, f"expected comma-separated numbers, got {val!r}") from exc


def _one(key: str, val: str, cast):
    try:
        return cast(val)
    except ValueError as exc:
        raise ConfigError(key, f"bad value {val!r}") from exc


def _build_setup(v: dict) -> WlanSetup:
    try:
        space = ChannelSpace(
            thresholds_db=_floats("channel.thresholds_db", v["channel.thresholds_db"]),
            rates_mbps=_floats("channel.rates_mbps", v["channel.rates_mbps"]),
        )
        mode = v["channel.mode"]
        if mode == "explicit":
            pi, mean = _floats("channel.pi", v["channel.pi"]), None
        elif mode == "rayleigh":
            pi, mean = None, _one("channel.mean_ebn0_db", v["channel.mean_ebn0_db"], float)
        else:
            raise ConfigError("channel.mode", f"must be explicit|rayleigh, got {mode!r}")
        retry = v["system.retry_limit"]
        retry_limit = None if retry in ("unlimited", "none") else _one(
            "system.retry_limit", retry, int)
        config = SystemConfig(
            n_stations=_one("system.n_stations", v["system.n_stations"], int),
            lambda_pps=_one("system.lambda_pps", v["system.lambda_pps"], float),
            per_state_per=_floats("system.per_state_per", v["system.per_state_per"]),
            pi=pi,
            mean_ebn0_db=mean,
            retry_limit=retry_limit,
            seed=_one("system.seed", v["system.seed"], int),
        )
        policy = TimerPolicy(
            p=_one("timer.p", v["timer.p"], float),
            delta_us=_one("timer.delta_us", v["timer.delta_us"], float),
            num_states=space.num_states,
        )
        timing = MacTiming.dot11a(
            space,
            payload_bytes=_one("timing.payload_bytes", v["timing.payload_bytes"], int),
            collision_rate_mbps=_one("timing.collision_rate_mbps",
                                     v["timing.collision_rate_mbps"], float),
        )
    except ConfigError:
        raise
    except ParameterError as exc:
        raise ConfigError("<setup>", str(exc)) from exc
    if config.pi is not None and len(config.pi) != space.num_states:
        raise ConfigError("channel.pi", "length does not match channel states")
    if len(config.per_state_per) != space.num_states:
        raise ConfigError("system.per_state_per", "length does not match channel states")
    return WlanSetup(config=config, policy=policy, timing=timing, space=space)


def setup_hash(setup: WlanSetup) -> str:
    """Short stable digest of everything that determines the outputs."""
    payload = {
        "config": {k: (list(x) if isinstance(x, tuple) else x)
                   for k, x in setup.config.__dict__.items()},
        "policy": dict(setup.policy.__dict__),
        "timing": {k: (list(x) if isinstance(x, tuple) else x)
                   for k, x in setup.timing.__dict__.items()},
        "space": {k: list(x) for k, x in setup.space.__dict__.items()},
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]
