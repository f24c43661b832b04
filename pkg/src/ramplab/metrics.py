"""Run scoring: total travel time and space-time speed matrices.

TTT is integrated per tick (vehicle count times tick length) over the
whole run including dissipation, and covers mainline cells, ramp queues,
and the upstream boundary queue. Per-site figures use the simulator's
midpoint cell attribution plus the site's own queue, so the boundary
queue shows up only in the overall number (non-negative remainder).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .corridor import CorridorGeometry
from .runner import TickLog

# Published overall TTT (seconds) for the five-interchange test corridor
# under a microscopic simulator. Loaded purely as comparison-table
# annotations; the macroscopic plant here is not expected to reproduce
# the absolute values, only the orderings.
REFERENCE_TTT_S: dict[str, float] = {
    "no_control": 15_958_515.0,
    "alinea": 14_880_797.0,
    "dql": 12_594_484.0,
    "dql_to_green": 14_419_896.0,
    "dql_to_red": 14_602_978.0,
}


@dataclass
class RunOutcome:
    """Everything a scored run produces."""

    label: str
    scenario_name: str
    seed: int
    controller: str
    ttt_overall: float
    ttt_per_site: list[float]
    speed_matrix: np.ndarray
    rate_log: np.ndarray
    max_conservation_error: float
    attack_metrics: dict[str, float] | None = None
    notes: dict[str, float] = field(default_factory=dict)


def total_travel_time(log: TickLog, attribution: np.ndarray) -> tuple[float, np.ndarray]:
    """(overall, per-site) TTT in veh*s from a per-tick log."""
    dt = log.dt
    overall = dt * float(
        log.cell_vehicles.sum() + log.ramp_queues.sum() + log.source_queue.sum()
    )
    n_sites = log.ramp_queues.shape[1]
    per_site = np.zeros(n_sites)
    for s in range(n_sites):
        mask = attribution == s
        per_site[s] = dt * float(
            log.cell_vehicles[:, mask].sum() + log.ramp_queues[:, s].sum()
        )
    return overall, per_site


def speed_matrix(
    log: TickLog,
    geometry: CorridorGeometry,
    space_bin_m: float = 100.0,
    time_bin_min: float = 5.0,
) -> np.ndarray:
    """Vehicle-time-weighted mean speed (m/s) per 100 m x 5 min bin.

    Cell speed is flow over density capped at free-flow; bins with no
    vehicle-time report free-flow speed. Only the scheduled horizon is
    binned, giving horizon/5 min columns.
    """
    dt = log.dt
    ticks = log.horizon_ticks
    n = log.cell_vehicles[:ticks]
    out = log.cell_outflow[:ticks]
    dens = n / geometry.length  # veh/m
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(dens > 1e-12, (out / dt) / np.maximum(dens, 1e-300), geometry.vf)
    v = np.minimum(v, geometry.vf)

    starts = np.concatenate(([0.0], np.cumsum(geometry.length)[:-1]))
    centers = starts + geometry.length / 2.0
    row_of = (centers // space_bin_m).astype(int)
    n_rows = int(np.ceil(geometry.total_length_m / space_bin_m - 1e-9))
    ticks_per_col = int(round(time_bin_min * 60.0 / dt))
    n_cols = int(np.ceil(ticks / ticks_per_col - 1e-9)) if ticks else 0

    vf_rows = np.zeros(n_rows)
    counts = np.zeros(n_rows)
    np.add.at(vf_rows, row_of, geometry.vf)
    np.add.at(counts, row_of, np.ones(geometry.n_cells))
    vf_mean = vf_rows / np.maximum(counts, 1)
    vf_max = np.zeros(n_rows)
    np.maximum.at(vf_max, row_of, geometry.vf)

    matrix = np.empty((n_rows, n_cols))
    for col in range(n_cols):
        sl = slice(col * ticks_per_col, min((col + 1) * ticks_per_col, ticks))
        w = n[sl]
        wsum = np.zeros(n_rows)
        vsum = np.zeros(n_rows)
        np.add.at(wsum, row_of, w.sum(axis=0))
        np.add.at(vsum, row_of, (w * v[sl]).sum(axis=0))
        empty = wsum <= 1e-12
        matrix[:, col] = np.where(empty, vf_mean, vsum / np.where(empty, 1.0, wsum))
    return np.minimum(matrix, vf_max[:, None])


def compare_runs(outcomes: list[RunOutcome]) -> tuple[list[str], list[list[str]]]:
    """Comparison table: one row per run, overall and per-site TTT plus the
    percent change against the no-control row (first row if none present)."""
    if not outcomes:
        raise ValueError("no runs to compare")
    scenario = outcomes[0].scenario_name
    n_sites = len(outcomes[0].ttt_per_site)
    for o in outcomes:
        if o.scenario_name != scenario or len(o.ttt_per_site) != n_sites:
            raise ValueError(
                f"run {o.label!r} is on scenario {o.scenario_name!r}, "
                f"cannot compare against {scenario!r}"
            )
    baseline = next((o for o in outcomes if o.controller == "none"), outcomes[0])
    header = ["label", "scenario", "seed", "ttt_overall"]
    header += [f"ttt_site_{k + 1}" for k in range(n_sites)]
    header += ["pct_vs_no_control"]
    rows = []
    for o in outcomes:
        delta = 100.0 * (o.ttt_overall - baseline.ttt_overall) / baseline.ttt_overall
        row = [o.label, o.scenario_name, str(o.seed), f"{o.ttt_overall:.3f}"]
        row += [f"{v:.3f}" for v in o.ttt_per_site]
        row += [f"{delta:.3f}"]
        rows.append(row)
    return header, rows


# -- CSV emission -----------------------------------------------------------

TTT_COLUMNS = [
    "scenario", "controller", "seed", "ttt_overall",
]
ATTACK_COLUMNS = ["mode", "epsilon", "flip_rate", "mean_rate_clean", "mean_rate_attacked"]


def write_ttt_csv(path, outcomes: list[RunOutcome]) -> None:
    n_sites = len(outcomes[0].ttt_per_site) if outcomes else 0
    has_attack = any(o.attack_metrics for o in outcomes)
    header = TTT_COLUMNS + [f"ttt_site_{k + 1}" for k in range(n_sites)]
    if has_attack:
        header += ATTACK_COLUMNS
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for o in outcomes:
            row = [o.scenario_name, o.controller, o.seed, f"{o.ttt_overall:.3f}"]
            row += [f"{v:.3f}" for v in o.ttt_per_site]
            if has_attack:
                m = o.attack_metrics or {}
                row += [
                    m.get("mode", "none"),
                    m.get("epsilon", 0.0),
                    f"{m.get('flip_rate', 0.0):.6f}",
                    f"{m.get('mean_rate_clean', 0.0):.3f}",
                    f"{m.get('mean_rate_attacked', 0.0):.3f}",
                ]
            writer.writerow(row)


def write_speed_csv(path, matrix: np.ndarray) -> None:
    """Rows are 100 m space bins (upstream first), columns 5 min time bins."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["space_bin"] + [f"t{c}" for c in range(matrix.shape[1])])
        for r in range(matrix.shape[0]):
            writer.writerow([r] + [f"{v:.4f}" for v in matrix[r]])


def write_comparison_csv(path, header: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
