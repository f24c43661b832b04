"""Macroscopic freeway corridor with metered on-ramps.

First-order cell-transmission dynamics on a single directional mainline:
triangular/trapezoidal fundamental diagram per cell, Daganzo priority
merges where on-ramps attach, FIFO diverges at off-ramp exits, and point
queues for ramp and upstream-boundary storage. Vehicle counts are
continuous; metered releases are quantized through a per-site release
accumulator so the commanded rate turns into discrete "greens".

Unit conventions
----------------
  lengths        m
  speeds         m/s
  demands/rates  veh/h  (converted to veh per tick internally)
  vehicle state  veh    (continuous)
  densities      veh/km/lane for configuration, veh/m internally
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Metering-rate bounds enforced whenever a controller commands a rate.
RATE_MIN_VPH = 400.0
RATE_MAX_VPH = 1600.0

# Detector groups attached to every metered site, in fixed order.
DETECTOR_GROUPS = (
    "upstream_mainline",
    "ramp_entrance",
    "ramp_stopbar",
    "downstream_mainline",
)

_RELEASE_EPS = 1e-12  # guards floor() against accumulated rounding
_EMPTY_EPS = 1e-9


class CorridorError(ValueError):
    """Invalid geometry, clock, or simulator input."""


@dataclass(frozen=True)
class Cell:
    """One mainline segment with its fundamental-diagram parameters.

    ``capacity_drop`` models the queue-discharge loss at an active
    bottleneck: once the cell's density passes critical, its sending
    capacity falls by this fraction until the queue clears. Without it a
    first-order model lets a jammed merge discharge at full capacity and
    metering has almost nothing to buy.
    """

    length_m: float = 100.0
    lanes: int = 3
    free_flow_speed_ms: float = 30.0
    capacity_per_lane_vph: float = 2200.0
    jam_density_per_lane_vpkm: float = 120.0
    wave_speed_ms: float = 6.7
    capacity_drop: float = 0.10

    @property
    def jam_vehicles(self) -> float:
        return self.jam_density_per_lane_vpkm * self.lanes * self.length_m / 1000.0

    @property
    def capacity_vps(self) -> float:
        return self.capacity_per_lane_vph * self.lanes / 3600.0

    @property
    def critical_vehicles(self) -> float:
        return self.capacity_vps * self.length_m / self.free_flow_speed_ms


@dataclass(frozen=True)
class RampSite:
    """A metered on-ramp feeding one mainline cell.

    ``vehicles_per_green`` is the number of vehicles one green releases
    (two only where two acceleration lanes exist); it sets the release
    quantization granularity, not the commanded flow.
    """

    attach_cell: int
    queue_lanes: int = 1
    vehicles_per_green: int = 1
    queue_storage_per_lane: float = 50.0  # veh, used for entrance occupancy


@dataclass(frozen=True)
class DetectorAggregate:
    """One detector group's 30-second aggregate."""

    group: str
    volume: float      # veh crossing during the window
    occupancy: float   # dimensionless, in [0, 1]


@dataclass(frozen=True)
class SimClock:
    tick_s: float = 1.0
    control_interval_s: float = 30.0

    def __post_init__(self) -> None:
        if self.tick_s <= 0:
            raise CorridorError(f"tick must be positive, got {self.tick_s}")
        ratio = self.control_interval_s / self.tick_s
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise CorridorError(
                "control interval must be an integer multiple of the tick: "
                f"{self.control_interval_s} s vs {self.tick_s} s"
            )

    @property
    def ticks_per_interval(self) -> int:
        return int(round(self.control_interval_s / self.tick_s))


class CorridorGeometry:
    """Immutable corridor layout: cells, ramp sites, off-ramp splits."""

    def __init__(
        self,
        cells: list[Cell],
        sites: list[RampSite],
        exit_splits: dict[int, float] | None = None,
        tick_s: float = 1.0,
    ):
        errors: list[str] = []
        if not cells:
            errors.append("corridor needs at least one cell")
        for i, c in enumerate(cells):
            if c.length_m <= 0 or c.lanes <= 0:
                errors.append(f"cell {i}: non-positive length or lanes")
            if c.free_flow_speed_ms * tick_s > c.length_m + 1e-12:
                errors.append(
                    f"cell {i}: CFL violated, free-flow speed {c.free_flow_speed_ms} m/s "
                    f"x tick {tick_s} s exceeds length {c.length_m} m"
                )
            if c.wave_speed_ms * tick_s > c.length_m + 1e-12:
                errors.append(
                    f"cell {i}: CFL violated for wave speed {c.wave_speed_ms} m/s"
                )
            if c.capacity_per_lane_vph <= 0 or c.jam_density_per_lane_vpkm <= 0:
                errors.append(f"cell {i}: capacity and jam density must be positive")
            if not (0.0 <= c.capacity_drop < 1.0):
                errors.append(f"cell {i}: capacity_drop {c.capacity_drop} outside [0, 1)")
        n = len(cells)
        seen: set[int] = set()
        for s_idx, site in enumerate(sites):
            if not (1 <= site.attach_cell <= n - 2):
                errors.append(
                    f"site {s_idx}: attach_cell {site.attach_cell} outside [1, {n - 2}] "
                    "(needs an upstream and a downstream detector cell)"
                )
            if site.attach_cell in seen:
                errors.append(f"site {s_idx}: duplicate attach_cell {site.attach_cell}")
            seen.add(site.attach_cell)
            if site.queue_lanes not in (1, 2):
                errors.append(f"site {s_idx}: queue_lanes must be 1 or 2")
            if site.vehicles_per_green not in (1, 2):
                errors.append(f"site {s_idx}: vehicles_per_green must be 1 or 2")
        for cell_idx, split in (exit_splits or {}).items():
            if not (0 <= cell_idx < n):
                errors.append(f"off-ramp on nonexistent cell {cell_idx}")
            if not (0.0 <= split < 1.0):
                errors.append(f"off-ramp split {split} outside [0, 1)")
        if sorted(sites, key=lambda s: s.attach_cell) != list(sites):
            errors.append("ramp sites must be listed in upstream-to-downstream order")
        if errors:
            raise CorridorError("; ".join(errors))

        self.cells = list(cells)
        self.sites = list(sites)
        self.exit_splits = dict(exit_splits or {})
        self.n_cells = n
        self.n_sites = len(sites)

        self.length = np.array([c.length_m for c in cells])
        self.lanes = np.array([c.lanes for c in cells], dtype=float)
        self.vf = np.array([c.free_flow_speed_ms for c in cells])
        self.capacity = np.array([c.capacity_vps for c in cells])  # veh/s total
        self.jam = np.array([c.jam_vehicles for c in cells])       # veh
        self.wave = np.array([c.wave_speed_ms for c in cells])
        self.critical = np.array([c.critical_vehicles for c in cells])  # veh
        self.drop = np.array([c.capacity_drop for c in cells])
        self.split = np.zeros(n)
        for cell_idx, split in self.exit_splits.items():
            self.split[cell_idx] = split
        self.attribution = self._attribute_cells()

    def _attribute_cells(self) -> np.ndarray:
        """Map each cell to the nearest site, midpoint boundaries.

        A cell whose center lies exactly on a boundary belongs to the
        downstream site.
        """
        if not self.sites:
            return np.full(self.n_cells, -1, dtype=int)
        starts = np.concatenate(([0.0], np.cumsum(self.length)[:-1]))
        centers = starts + self.length / 2.0
        site_pos = np.array([centers[s.attach_cell] for s in self.sites])
        boundaries = (site_pos[:-1] + site_pos[1:]) / 2.0
        return np.searchsorted(boundaries, centers, side="right")

    @property
    def total_length_m(self) -> float:
        return float(self.length.sum())


def _median3(a: float, b: float, c: float) -> float:
    return a + b + c - max(a, b, c) - min(a, b, c)


@dataclass
class _SiteState:
    queue: float = 0.0
    meter_rate: float = RATE_MAX_VPH
    release_acc: float = 0.0   # entitlement accumulating toward the next green
    staged: float = 0.0        # fired green awaiting queue/merge service


@dataclass
class _WindowAcc:
    """Per-site detector accumulators for the current 30-s window."""

    volume: np.ndarray = field(default_factory=lambda: np.zeros(4))
    occupancy: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def reset(self) -> None:
        self.volume[:] = 0.0
        self.occupancy[:] = 0.0


@dataclass(frozen=True)
class TickResult:
    """Flows realized during one tick, in vehicles."""

    inflow: float           # vehicles entering the system (boundary + ramp arrivals)
    outflow: float          # vehicles leaving (sink + off-ramp exits)
    cell_outflow: np.ndarray
    ramp_release: np.ndarray


class CorridorSimulator:
    """Deterministic fixed-step corridor plant.

    One instance owns all mutable state (cell vehicle counts, boundary
    queue, ramp queues, release accumulators, detector windows). The same
    geometry can back many concurrent instances.
    """

    def __init__(self, geometry: CorridorGeometry, clock: SimClock | None = None):
        self.geom = geometry
        self.clock = clock or SimClock()
        self.vehicles = np.zeros(geometry.n_cells)
        self.source_queue = 0.0
        self.site_state = [_SiteState() for _ in geometry.sites]
        self._windows = [_WindowAcc() for _ in geometry.sites]
        self._ticks_in_window = 0
        self._completed: list[list[DetectorAggregate]] | None = None
        self.window_count = 0
        self.tick_count = 0
        self.injected_total = 0.0
        self.exited_total = 0.0
        self.max_conservation_error = 0.0

    # -- commands ----------------------------------------------------------

    def set_meter_rate(self, site_idx: int, rate_vph: float) -> None:
        if not (RATE_MIN_VPH - 1e-9 <= rate_vph <= RATE_MAX_VPH + 1e-9):
            raise CorridorError(
                f"meter rate {rate_vph} veh/h outside [{RATE_MIN_VPH}, {RATE_MAX_VPH}]"
            )
        self.site_state[site_idx].meter_rate = float(rate_vph)

    @property
    def meter_rates(self) -> list[float]:
        return [s.meter_rate for s in self.site_state]

    # -- observation -------------------------------------------------------

    def total_vehicles(self) -> float:
        return float(
            self.vehicles.sum()
            + self.source_queue
            + sum(s.queue for s in self.site_state)
        )

    def vehicle_counts(self, site_idx: int) -> tuple[float, float]:
        """(mainline vehicles attributed to the site, vehicles on its ramp).

        Mainline attribution uses midpoint boundaries between sites with
        ties going downstream. The ramp count is the point queue; merging
        vehicles are already inside the attach cell and count as mainline.
        """
        mask = self.geom.attribution == site_idx
        n_main = max(float(self.vehicles[mask].sum()), 0.0)
        return n_main, max(self.site_state[site_idx].queue, 0.0)

    def window_ready(self) -> bool:
        return self._completed is not None

    def pop_window(self) -> list[list[DetectorAggregate]]:
        """Return the last completed window's four aggregates per site.

        Each completed window can be popped exactly once; unpopped windows
        are replaced when the next one completes.
        """
        if self._completed is None:
            raise CorridorError("no completed aggregation window to pop")
        out, self._completed = self._completed, None
        return out

    def _roll_window(self) -> None:
        ticks = self.clock.ticks_per_interval
        out: list[list[DetectorAggregate]] = []
        for acc in self._windows:
            aggs = []
            for g, group in enumerate(DETECTOR_GROUPS):
                occ = min(max(acc.occupancy[g] / ticks, 0.0), 1.0)
                aggs.append(
                    DetectorAggregate(group=group, volume=max(acc.volume[g], 0.0), occupancy=occ)
                )
            out.append(aggs)
            acc.reset()
        self._ticks_in_window = 0
        self._completed = out
        self.window_count += 1

    # -- dynamics ----------------------------------------------------------

    def step(self, mainline_demand_vph: float, ramp_demands_vph: list[float]) -> TickResult:
        """Advance one tick under the given demands and current meter rates."""
        g = self.geom
        dt = self.clock.tick_s
        if mainline_demand_vph < 0 or any(d < 0 for d in ramp_demands_vph):
            raise CorridorError("demands must be non-negative")
        if len(ramp_demands_vph) != g.n_sites:
            raise CorridorError(
                f"expected {g.n_sites} ramp demands, got {len(ramp_demands_vph)}"
            )

        total_before = self.total_vehicles()

        # Arrivals enter the boundary and ramp point queues.
        arrivals_main = mainline_demand_vph * dt / 3600.0
        self.source_queue += arrivals_main
        arrivals_ramp = np.zeros(g.n_sites)
        for s_idx, dem in enumerate(ramp_demands_vph):
            arrivals_ramp[s_idx] = dem * dt / 3600.0
            self.site_state[s_idx].queue += arrivals_ramp[s_idx]

        # Release entitlements: a green fires once a full green's worth of
        # entitlement accumulates, staging vehicles_per_green vehicles for
        # the merge; at most one green is outstanding and at most one more
        # banked, so blocked meters cannot dump a backlog later.
        pending = np.zeros(g.n_sites)
        for s_idx, site in enumerate(g.sites):
            st = self.site_state[s_idx]
            vpg = float(site.vehicles_per_green)
            st.release_acc += st.meter_rate * dt / 3600.0
            if st.staged < vpg - _RELEASE_EPS and st.release_acc >= vpg - _RELEASE_EPS:
                fire = vpg - st.staged
                st.release_acc -= fire
                st.staged += fire
            st.release_acc = min(st.release_acc, vpg)
            pending[s_idx] = min(st.staged, st.queue)

        # Sending/receiving in vehicles per tick (CFL makes both <= state room).
        # Cells past critical density discharge at their dropped capacity.
        n = self.vehicles
        discharge_cap = g.capacity * np.where(n > g.critical, 1.0 - g.drop, 1.0)
        send = np.minimum(g.vf * dt / g.length * n, discharge_cap * dt)
        recv = np.minimum(g.capacity * dt, np.maximum(g.wave * dt / g.length * (g.jam - n), 0.0))

        merge_of = {site.attach_cell: s_idx for s_idx, site in enumerate(g.sites)}

        flow = np.zeros(g.n_cells)      # mainline flow out of cell i (to i+1 or sink)
        exits = np.zeros(g.n_cells)     # off-ramp flow out of cell i
        releases = np.zeros(g.n_sites)  # ramp flow into attach cells

        source_in = min(self.source_queue, recv[0])

        last = g.n_cells - 1
        for i in range(g.n_cells):
            beta = g.split[i]
            desired_main = (1.0 - beta) * send[i]
            if i == last:
                q_main = desired_main
            else:
                supply = recv[i + 1]
                s_idx = merge_of.get(i + 1)
                if s_idx is None:
                    q_main = min(desired_main, supply)
                else:
                    s_ramp = pending[s_idx]
                    if desired_main + s_ramp <= supply:
                        q_main, q_ramp = desired_main, s_ramp
                    else:
                        prio = g.lanes[i + 1] / (g.lanes[i + 1] + 1.0)
                        q_main = _median3(desired_main, supply - s_ramp, prio * supply)
                        q_ramp = _median3(s_ramp, supply - desired_main, (1.0 - prio) * supply)
                    releases[s_idx] = q_ramp
            flow[i] = q_main
            if beta > 0.0 and send[i] > 0.0:
                # FIFO diverge: exit flow scales with the served mainline share.
                exits[i] = q_main * beta / (1.0 - beta)

        # State update.
        self.vehicles[0] += source_in - flow[0] - exits[0]
        if g.n_cells > 1:
            self.vehicles[1:] += flow[:-1] - flow[1:] - exits[1:]
        for s_idx, site in enumerate(g.sites):
            st = self.site_state[s_idx]
            self.vehicles[site.attach_cell] += releases[s_idx]
            st.queue -= releases[s_idx]
            st.staged = max(st.staged - releases[s_idx], 0.0)
        self.source_queue -= source_in

        inflow = arrivals_main + float(arrivals_ramp.sum())
        outflow = flow[last] + float(exits.sum())
        self.injected_total += inflow
        self.exited_total += outflow

        # Per-tick conservation: inflow - outflow must equal the state change.
        err = abs((self.total_vehicles() - total_before) - (inflow - outflow))
        if err > self.max_conservation_error:
            self.max_conservation_error = err

        self._accumulate_detectors(flow, releases, arrivals_ramp)
        self.tick_count += 1
        return TickResult(
            inflow=inflow,
            outflow=float(outflow),
            cell_outflow=flow + exits,
            ramp_release=releases,
        )

    def _accumulate_detectors(
        self, flow: np.ndarray, releases: np.ndarray, arrivals_ramp: np.ndarray
    ) -> None:
        g = self.geom
        for s_idx, site in enumerate(g.sites):
            st = self.site_state[s_idx]
            acc = self._windows[s_idx]
            up, down = site.attach_cell - 1, site.attach_cell + 1
            storage = site.queue_storage_per_lane * site.queue_lanes
            # upstream mainline station: flow past cell up, density there
            acc.volume[0] += flow[up]
            acc.occupancy[0] += self.vehicles[up] / g.jam[up]
            # ramp entrance (check-in): queue arrivals, queue fill fraction
            acc.volume[1] += arrivals_ramp[s_idx]
            acc.occupancy[1] += min(st.queue / storage, 1.0)
            # ramp stop bar (check-out): releases, stop-bar presence
            acc.volume[2] += releases[s_idx]
            acc.occupancy[2] += min(st.queue, 1.0)
            # downstream mainline station
            acc.volume[3] += flow[site.attach_cell]
            acc.occupancy[3] += self.vehicles[down] / g.jam[down]
        self._ticks_in_window += 1
        if self._ticks_in_window == self.clock.ticks_per_interval:
            self._roll_window()

    def is_empty(self) -> bool:
        return self.total_vehicles() <= _EMPTY_EPS
