"""Classical metering policies: no control, fixed-time, and ALINEA.

All policies speak the same protocol: ``begin(n_sites)`` once per run,
then ``decide(interval_index, windows)`` after every completed detector
window, returning one metering rate per site (or ``None`` to hold the
current rates).
"""

from __future__ import annotations

from dataclasses import dataclass

from .corridor import RATE_MAX_VPH, RATE_MIN_VPH, DetectorAggregate


class ConfigError(ValueError):
    """Controller configuration outside its legal range."""


@dataclass(frozen=True)
class AlineaConfig:
    """Integral feedback gain and setpoint for ALINEA.

    ``gain`` is in veh/h per unit occupancy fraction (7000 corresponds to
    the customary 70 veh/h per occupancy percentage point).
    """

    gain: float = 7000.0
    target_occupancy: float = 0.22
    r_min: float = RATE_MIN_VPH
    r_max: float = RATE_MAX_VPH

    def __post_init__(self) -> None:
        if not (0.0 < self.target_occupancy < 1.0):
            raise ConfigError(f"target occupancy {self.target_occupancy} outside (0, 1)")
        if self.gain <= 0:
            raise ConfigError(f"gain must be positive, got {self.gain}")
        if not self.r_min < self.r_max:
            raise ConfigError("r_min must be below r_max")


def alinea_update(prev_rate: float, downstream_occupancy: float, cfg: AlineaConfig) -> float:
    """One feedback step: previous rate plus gain times the occupancy gap,
    clamped to the legal rate band."""
    raw = prev_rate + cfg.gain * (cfg.target_occupancy - downstream_occupancy)
    return min(max(raw, cfg.r_min), cfg.r_max)


def fixed_time_rate(rate_vph: float) -> float:
    """Validate and return a constant metering rate."""
    if not (RATE_MIN_VPH <= rate_vph <= RATE_MAX_VPH):
        raise ConfigError(
            f"fixed rate {rate_vph} veh/h outside [{RATE_MIN_VPH}, {RATE_MAX_VPH}]"
        )
    return float(rate_vph)


def rate_to_cycle(rate_vph: float, vehicles_per_green: int) -> float:
    """Signal cycle length (s) realizing a rate; diagnostic only, the plant
    consumes rates directly."""
    return 3600.0 * vehicles_per_green / rate_vph


class StaticPolicy:
    """Holds every meter at one rate; models both no-control (rate = r_max,
    meter effectively open) and fixed-time metering."""

    def __init__(self, rate_vph: float = RATE_MAX_VPH):
        self.rate = fixed_time_rate(rate_vph)
        self.n_sites = 0

    def begin(self, n_sites: int) -> None:
        self.n_sites = n_sites

    def decide(self, interval_index: int, windows: list[list[DetectorAggregate]]):
        return [self.rate] * self.n_sites


class AlineaPolicy:
    """Per-site ALINEA loops updated every control interval from the
    previous completed window's downstream occupancy."""

    def __init__(self, cfg: AlineaConfig | None = None, initial_rate: float = RATE_MAX_VPH):
        self.cfg = cfg or AlineaConfig()
        self.initial_rate = initial_rate
        self.rates: list[float] = []

    def begin(self, n_sites: int) -> None:
        self.rates = [self.initial_rate] * n_sites

    def decide(self, interval_index: int, windows: list[list[DetectorAggregate]]):
        for s_idx, aggs in enumerate(windows):
            occ = next(a.occupancy for a in aggs if a.group == "downstream_mainline")
            self.rates[s_idx] = alinea_update(self.rates[s_idx], occ, self.cfg)
        return list(self.rates)
