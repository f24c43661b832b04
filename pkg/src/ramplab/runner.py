"""Episode engine: drives the corridor plant under a control policy.

One code path serves evaluation rollouts (full per-tick logs for metrics)
and training episodes (lean scalar accumulation). Demands come from the
scenario's schedule; random schedules redraw one (mainline, ramp) pair
per epoch from the shared training pool. After the scheduled horizon,
demand drops to zero and the run continues until the corridor empties or
the dissipation cap is hit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corridor import CorridorSimulator
from .scenario import DemandSchedule, ScenarioConfig, demand_at_time, sample_training_demand


@dataclass
class TickLog:
    """Per-tick trajectories collected during an evaluation rollout."""

    dt: float
    cell_vehicles: np.ndarray   # (ticks, cells)
    cell_outflow: np.ndarray    # (ticks, cells) vehicles leaving per tick
    ramp_queues: np.ndarray     # (ticks, sites)
    source_queue: np.ndarray    # (ticks,)
    horizon_ticks: int          # scheduled portion (speed matrices stop here)


@dataclass
class EpisodeStats:
    ttt_overall: float                  # veh*s including boundary and ramp queues
    ttt_per_site: np.ndarray            # veh*s, attributed cells + own queue
    rate_log: np.ndarray                # (intervals, sites) commanded veh/h
    ticks: int
    injected: float
    exited: float
    max_conservation_error: float
    log: TickLog | None = None


class _DemandFeed:
    """Resolves per-tick demands; random programs redraw at epoch starts."""

    def __init__(self, schedule: DemandSchedule, n_sites: int, horizon_min: float,
                 rng: np.random.Generator | None):
        self.schedule = schedule
        self.n_sites = n_sites
        self.horizon_min = horizon_min
        self.rng = rng
        self._current: tuple[float, list[float]] = (0.0, [0.0] * n_sites)
        self._epoch_idx = -1
        if schedule.kind == "random" and rng is None:
            raise ValueError("random demand schedule needs an rng")

    def at(self, t_s: float) -> tuple[float, list[float]]:
        t_min = t_s / 60.0
        if t_min >= self.horizon_min:
            return 0.0, [0.0] * self.n_sites
        if self.schedule.kind == "fixed":
            ml, site = demand_at_time(self.schedule, t_min, self.n_sites)
            return ml, list(site)
        epoch = int(t_min // self.schedule.epoch_minutes)
        if epoch != self._epoch_idx:
            ml, ramp = sample_training_demand(self.rng)
            self._current = (ml, [ramp] * self.n_sites)
            self._epoch_idx = epoch
        return self._current[0], list(self._current[1])


def run_episode(
    scenario: ScenarioConfig,
    policy,
    demand_rng: np.random.Generator | None = None,
    collect: bool = False,
) -> EpisodeStats:
    """Simulate one full run: scheduled horizon plus dissipation.

    ``policy`` follows the control protocol (``begin``/``decide``); it is
    consulted after every completed detector window and may additionally
    expose ``observe_counts(interval_index, counts, done)`` to receive the
    per-site vehicle counts at each decision instant (used for training
    rewards and diagnostics).
    """
    geom = scenario.geometry
    clock = scenario.clock
    sim = CorridorSimulator(geom, clock)
    feed = _DemandFeed(scenario.schedule, geom.n_sites, scenario.run.horizon_min, demand_rng)

    dt = clock.tick_s
    horizon_ticks = int(round(scenario.run.horizon_min * 60.0 / dt))
    max_ticks = horizon_ticks + int(round(scenario.run.dissipation_cap_min * 60.0 / dt))

    policy.begin(geom.n_sites)
    observe = getattr(policy, "observe_counts", None)

    ttt_overall = 0.0
    ttt_site = np.zeros(geom.n_sites)
    rate_rows: list[list[float]] = []
    site_masks = [geom.attribution == s for s in range(geom.n_sites)]

    if collect:
        n_hist = np.empty((max_ticks, geom.n_cells))
        out_hist = np.empty((max_ticks, geom.n_cells))
        q_hist = np.empty((max_ticks, geom.n_sites))
        src_hist = np.empty(max_ticks)

    tick = 0
    interval = 0
    while tick < max_ticks:
        t_s = tick * dt
        ml, ramps = feed.at(t_s)
        result = sim.step(ml, ramps)

        ttt_overall += dt * sim.total_vehicles()
        for s in range(geom.n_sites):
            ttt_site[s] += dt * (
                float(sim.vehicles[site_masks[s]].sum()) + sim.site_state[s].queue
            )
        if collect:
            n_hist[tick] = sim.vehicles
            out_hist[tick] = result.cell_outflow
            q_hist[tick] = [st.queue for st in sim.site_state]
            src_hist[tick] = sim.source_queue

        tick += 1
        if sim.window_ready():
            windows = sim.pop_window()
            done = tick >= max_ticks or (tick >= horizon_ticks and sim.is_empty())
            if observe is not None:
                counts = [sim.vehicle_counts(s) for s in range(geom.n_sites)]
                observe(interval, counts, done)
            rates = policy.decide(interval, windows)
            if rates is not None:
                for s, rate in enumerate(rates):
                    sim.set_meter_rate(s, rate)
            rate_rows.append(list(sim.meter_rates))
            interval += 1
        if tick >= horizon_ticks and sim.is_empty():
            break

    # A run that ends between window boundaries still owes the policy its
    # terminal observation.
    if observe is not None and tick % clock.ticks_per_interval != 0:
        counts = [sim.vehicle_counts(s) for s in range(geom.n_sites)]
        observe(interval, counts, True)

    log = None
    if collect:
        log = TickLog(
            dt=dt,
            cell_vehicles=n_hist[:tick].copy(),
            cell_outflow=out_hist[:tick].copy(),
            ramp_queues=q_hist[:tick].copy(),
            source_queue=src_hist[:tick].copy(),
            horizon_ticks=min(tick, horizon_ticks),
        )
    return EpisodeStats(
        ttt_overall=ttt_overall,
        ttt_per_site=ttt_site,
        rate_log=np.array(rate_rows) if rate_rows else np.zeros((0, geom.n_sites)),
        ticks=tick,
        injected=sim.injected_total,
        exited=sim.exited_total,
        max_conservation_error=sim.max_conservation_error,
        log=log,
    )
