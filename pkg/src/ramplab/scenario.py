"""Scenario definitions: corridor layouts, demand programs, run settings.

Two corridors ship built in:

``train_fig3``
    Schematic 3 km training corridor with three on-ramps of deliberately
    different geometry (two-lane queues at sites 1-2, a double release at
    site 2, a single queue lane at site 3, and a weaving off-ramp just
    past site 1). Demands are redrawn every 15 minutes from the training
    demand pool.

``test_i24``
    An 8 km, five-interchange corridor patterned after the metered I-24
    approach into Nashville, driven by a fixed two-hour demand schedule
    that deliberately oversaturates the peak quarter-hours.

Scenario files are INI-style text with sections [geometry], [site N],
[demand], [controller], [attack], [run]; unknown keys or sections are
rejected, and validation reports every problem at once.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace

import numpy as np

from .corridor import Cell, CorridorGeometry, RampSite, SimClock

BUILTIN_NAMES = ("train_fig3", "test_i24")

# Training demand pool: (mean, std) in veh/h. One mainline and one ramp
# option are drawn uniformly at each 15-minute epoch; the ramp draw is
# shared by every site.
TRAINING_RAMP_POOL: tuple[tuple[float, float], ...] = (
    (400.0, 20.0),
    (500.0, 25.0),
    (600.0, 30.0),
    (800.0, 40.0),
    (1000.0, 50.0),
    (1200.0, 60.0),
    (1300.0, 65.0),
    (1400.0, 70.0),
)
TRAINING_MAINLINE_POOL: tuple[tuple[float, float], ...] = (
    (2000.0, 40.0),
    (2500.0, 50.0),
    (3000.0, 60.0),
    (3500.0, 70.0),
    (4000.0, 80.0),
    (4500.0, 90.0),
    (5000.0, 100.0),
    (5500.0, 110.0),
)

# Fixed two-hour test program: (start_min, end_min, mainline, wide-site
# rate, narrow-site rate). Sites 1/3/4 carry the first ramp column,
# sites 2/5 the second.
TEST_PROGRAM: tuple[tuple[float, float, float, float, float], ...] = (
    (0.0, 15.0, 5500.0, 1100.0, 700.0),
    (15.0, 30.0, 6000.0, 1200.0, 800.0),
    (30.0, 45.0, 6500.0, 1300.0, 900.0),
    (45.0, 60.0, 6000.0, 1400.0, 1000.0),
    (60.0, 75.0, 5500.0, 1500.0, 1200.0),
    (75.0, 90.0, 5000.0, 1400.0, 1000.0),
    (90.0, 105.0, 4500.0, 1300.0, 900.0),
    (105.0, 120.0, 4000.0, 1200.0, 800.0),
)


class ScenarioError(ValueError):
    """Unparseable or semantically invalid scenario definition."""


@dataclass(frozen=True)
class DemandEpoch:
    start_min: float
    end_min: float
    mainline_vph: float
    site_vph: tuple[float, ...]


@dataclass(frozen=True)
class DemandSchedule:
    """Either a fixed epoch table or a random program redrawn per epoch."""

    kind: str  # "fixed" | "random"
    epochs: tuple[DemandEpoch, ...] = ()
    epoch_minutes: float = 15.0

    def validate(self, n_sites: int, horizon_min: float) -> list[str]:
        errors: list[str] = []
        if self.kind == "random":
            if self.epoch_minutes <= 0:
                errors.append("epoch_minutes must be positive")
            return errors
        if not self.epochs:
            errors.append("fixed schedule has no epochs")
            return errors
        prev_end = 0.0
        for ep in self.epochs:
            if len(ep.site_vph) != n_sites:
                errors.append(
                    f"epoch {ep.start_min}-{ep.end_min}: {len(ep.site_vph)} site rates "
                    f"for {n_sites} sites"
                )
            if abs(ep.start_min - prev_end) > 1e-9:
                errors.append(f"epoch starting {ep.start_min} is not contiguous")
            if ep.end_min <= ep.start_min:
                errors.append(f"epoch {ep.start_min}-{ep.end_min} is empty")
            if ep.mainline_vph < 0 or any(r < 0 for r in ep.site_vph):
                errors.append(f"epoch {ep.start_min}-{ep.end_min} has negative demand")
            prev_end = ep.end_min
        if abs(prev_end - horizon_min) > 1e-9:
            errors.append(f"schedule covers [0, {prev_end}) min but horizon is {horizon_min} min")
        return errors


def demand_at_time(schedule: DemandSchedule, t_min: float, n_sites: int) -> tuple[float, tuple[float, ...]]:
    """Demands applying at minute ``t_min``; zero after the schedule ends
    (dissipation phase)."""
    if schedule.kind != "fixed":
        raise ScenarioError("demand_at_time applies to fixed schedules only")
    for ep in schedule.epochs:
        if ep.start_min <= t_min < ep.end_min:
            return ep.mainline_vph, ep.site_vph
    return 0.0, tuple(0.0 for _ in range(n_sites))


def sample_training_demand(rng: np.random.Generator) -> tuple[float, float]:
    """Draw one (mainline, ramp) demand pair from the training pool.

    One mainline and one ramp option are picked uniformly, the rate is
    Gaussian with the option's mean/std, truncated at zero. The single
    ramp draw applies to every site in the epoch.
    """
    ml_mean, ml_std = TRAINING_MAINLINE_POOL[rng.integers(len(TRAINING_MAINLINE_POOL))]
    or_mean, or_std = TRAINING_RAMP_POOL[rng.integers(len(TRAINING_RAMP_POOL))]
    mainline = max(rng.normal(ml_mean, ml_std), 0.0)
    ramp = max(rng.normal(or_mean, or_std), 0.0)
    return mainline, ramp


@dataclass(frozen=True)
class ControllerSpec:
    kind: str = "none"  # none | fixed | alinea | dql
    fixed_rate_vph: float = 900.0
    alinea_gain: float = 7000.0
    alinea_target_occupancy: float = 0.22
    checkpoint: str | None = None


@dataclass(frozen=True)
class AttackSettings:
    mode: str = "none"  # none | to_green | to_red | random_noise
    epsilon: float = 0.1
    target_site: int | None = None  # None = every site


@dataclass(frozen=True)
class RunSettings:
    tick_s: float = 1.0
    control_interval_s: float = 30.0
    horizon_min: float = 120.0
    dissipation_cap_min: float = 60.0
    seed: int = 0


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    geometry: CorridorGeometry
    schedule: DemandSchedule
    controller: ControllerSpec = field(default_factory=ControllerSpec)
    attack: AttackSettings = field(default_factory=AttackSettings)
    run: RunSettings = field(default_factory=RunSettings)

    @property
    def clock(self) -> SimClock:
        return SimClock(tick_s=self.run.tick_s, control_interval_s=self.run.control_interval_s)

    def with_overrides(self, **kwargs) -> "ScenarioConfig":
        return replace(self, **kwargs)


# ---------------------------------------------------------------------------
# Built-in corridors
# ---------------------------------------------------------------------------

def _uniform_cells(n: int, **kwargs) -> list[Cell]:
    return [Cell(**kwargs) for _ in range(n)]


def builtin_scenario(name: str) -> ScenarioConfig:
    if name == "train_fig3":
        cells = _uniform_cells(30)
        sites = [
            RampSite(attach_cell=8, queue_lanes=2, vehicles_per_green=1),
            RampSite(attach_cell=16, queue_lanes=2, vehicles_per_green=2),
            RampSite(attach_cell=24, queue_lanes=1, vehicles_per_green=1),
        ]
        # Weaving at site 1: off-ramp 200 m past the merge.
        geometry = CorridorGeometry(cells, sites, exit_splits={10: 0.10})
        schedule = DemandSchedule(kind="random", epoch_minutes=15.0)
        return ScenarioConfig(name=name, geometry=geometry, schedule=schedule)

    if name == "test_i24":
        cells = _uniform_cells(80)
        attach = (12, 26, 40, 54, 68)
        wide = {0: True, 1: False, 2: True, 3: True, 4: False}  # sites 1/3/4 vs 2/5
        sites = [
            RampSite(
                attach_cell=a,
                queue_lanes=2 if wide[k] else 1,
                vehicles_per_green=2 if wide[k] else 1,
            )
            for k, a in enumerate(attach)
        ]
        # Interchange exits sit 300 m upstream of each merge; congestion
        # spilling back over them is what metering protects against.
        exit_splits = {a - 3: 0.15 for a in attach}
        geometry = CorridorGeometry(cells, sites, exit_splits=exit_splits)
        epochs = tuple(
            DemandEpoch(
                start_min=row[0],
                end_min=row[1],
                mainline_vph=row[2],
                site_vph=(row[3], row[4], row[3], row[3], row[4]),
            )
            for row in TEST_PROGRAM
        )
        schedule = DemandSchedule(kind="fixed", epochs=epochs)
        return ScenarioConfig(name=name, geometry=geometry, schedule=schedule)

    raise ScenarioError(f"unknown built-in scenario {name!r}; choices: {', '.join(BUILTIN_NAMES)}")


# ---------------------------------------------------------------------------
# Scenario files
# ---------------------------------------------------------------------------

_GEOMETRY_KEYS = {
    "length_m", "cell_length_m", "lanes", "free_flow_speed_ms",
    "capacity_per_lane_vph", "jam_density_per_lane_vpkm", "wave_speed_ms",
    "capacity_drop",
}
_SITE_KEYS = {
    "attach_cell", "queue_lanes", "vehicles_per_green",
    "queue_storage_per_lane", "off_ramp_cell", "off_ramp_split",
}
_DEMAND_KEYS = {"profile", "epoch_minutes", "rows"}
_CONTROLLER_KEYS = {"type", "fixed_rate_vph", "alinea_gain", "alinea_target_occupancy"}
_ATTACK_KEYS = {"mode", "epsilon", "target_site"}
_RUN_KEYS = {"tick_s", "control_interval_s", "horizon_min", "dissipation_cap_min", "seed"}


def load_scenario(path_or_name: str) -> ScenarioConfig:
    """Load a built-in scenario by name or parse a scenario file."""
    if path_or_name in BUILTIN_NAMES:
        return builtin_scenario(path_or_name)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    read = parser.read(path_or_name)
    if not read:
        raise ScenarioError(
            f"scenario {path_or_name!r} is neither a built-in name "
            f"({', '.join(BUILTIN_NAMES)}) nor a readable file"
        )
    try:
        return _parse_scenario(parser, path_or_name)
    except configparser.Error as exc:
        raise ScenarioError(f"{path_or_name}: {exc}") from exc


def _check_keys(section, allowed: set[str], errors: list[str], name: str) -> None:
    unknown = set(section.keys()) - allowed
    if unknown:
        errors.append(f"[{name}]: unknown keys {sorted(unknown)}")


def _parse_scenario(parser: configparser.ConfigParser, origin: str) -> ScenarioConfig:
    errors: list[str] = []
    known_sections = {"geometry", "demand", "controller", "attack", "run"}

    def site_number(section: str) -> int | None:
        parts = section.split()
        if len(parts) == 2 and parts[0] == "site" and parts[1].isdigit():
            return int(parts[1])
        return None

    site_sections = sorted(
        (s for s in parser.sections() if site_number(s) is not None),
        key=lambda s: site_number(s),
    )
    for s in parser.sections():
        if s not in known_sections and s not in site_sections:
            errors.append(f"unknown section [{s}]")

    has_geo = parser.has_section("geometry")
    geo = parser["geometry"] if has_geo else {}
    if not has_geo:
        errors.append("missing [geometry] section")
    else:
        _check_keys(geo, _GEOMETRY_KEYS, errors, "geometry")

    def fget(section, key, default):
        return float(section.get(key, default))

    cell_length = fget(geo, "cell_length_m", 100.0) if geo else 100.0
    length = fget(geo, "length_m", 3000.0) if geo else 3000.0
    n_cells = int(round(length / cell_length)) if cell_length > 0 else 0
    cell_kwargs = dict(
        length_m=cell_length,
        lanes=int(fget(geo, "lanes", 3)) if geo else 3,
        free_flow_speed_ms=fget(geo, "free_flow_speed_ms", 30.0) if geo else 30.0,
        capacity_per_lane_vph=fget(geo, "capacity_per_lane_vph", 2200.0) if geo else 2200.0,
        jam_density_per_lane_vpkm=fget(geo, "jam_density_per_lane_vpkm", 120.0) if geo else 120.0,
        wave_speed_ms=fget(geo, "wave_speed_ms", 6.7) if geo else 6.7,
        capacity_drop=fget(geo, "capacity_drop", 0.10) if geo else 0.10,
    )

    sites: list[RampSite] = []
    exit_splits: dict[int, float] = {}
    for sec_name in site_sections:
        sec = parser[sec_name]
        _check_keys(sec, _SITE_KEYS, errors, sec_name)
        if "attach_cell" not in sec:
            errors.append(f"[{sec_name}]: attach_cell is required")
            continue
        sites.append(
            RampSite(
                attach_cell=int(sec["attach_cell"]),
                queue_lanes=int(sec.get("queue_lanes", 1)),
                vehicles_per_green=int(sec.get("vehicles_per_green", 1)),
                queue_storage_per_lane=float(sec.get("queue_storage_per_lane", 50.0)),
            )
        )
        if "off_ramp_cell" in sec:
            exit_splits[int(sec["off_ramp_cell"])] = float(sec.get("off_ramp_split", 0.10))
    if not sites:
        errors.append("scenario defines no [site N] sections")

    run_sec = parser["run"] if parser.has_section("run") else {}
    if run_sec:
        _check_keys(run_sec, _RUN_KEYS, errors, "run")
    run = RunSettings(
        tick_s=fget(run_sec, "tick_s", 1.0),
        control_interval_s=fget(run_sec, "control_interval_s", 30.0),
        horizon_min=fget(run_sec, "horizon_min", 120.0),
        dissipation_cap_min=fget(run_sec, "dissipation_cap_min", 60.0),
        seed=int(run_sec.get("seed", 0)) if run_sec else 0,
    )

    dem_sec = parser["demand"] if parser.has_section("demand") else {}
    if not dem_sec:
        errors.append("missing [demand] section")
        schedule = DemandSchedule(kind="random")
    else:
        _check_keys(dem_sec, _DEMAND_KEYS, errors, "demand")
        profile = dem_sec.get("profile", "schedule")
        if profile == "random":
            schedule = DemandSchedule(kind="random", epoch_minutes=fget(dem_sec, "epoch_minutes", 15.0))
        elif profile == "schedule":
            epochs = []
            for line in dem_sec.get("rows", "").strip().splitlines():
                parts = line.split()
                if len(parts) != 3 + len(sites):
                    errors.append(
                        f"[demand] row {line!r}: expected start end mainline + {len(sites)} site rates"
                    )
                    continue
                vals = [float(p) for p in parts]
                epochs.append(
                    DemandEpoch(
                        start_min=vals[0], end_min=vals[1],
                        mainline_vph=vals[2], site_vph=tuple(vals[3:]),
                    )
                )
            schedule = DemandSchedule(kind="fixed", epochs=tuple(epochs))
        else:
            errors.append(f"[demand]: unknown profile {profile!r}")
            schedule = DemandSchedule(kind="random")

    ctrl_sec = parser["controller"] if parser.has_section("controller") else {}
    if ctrl_sec:
        _check_keys(ctrl_sec, _CONTROLLER_KEYS, errors, "controller")
    controller = ControllerSpec(
        kind=ctrl_sec.get("type", "none") if ctrl_sec else "none",
        fixed_rate_vph=fget(ctrl_sec, "fixed_rate_vph", 900.0),
        alinea_gain=fget(ctrl_sec, "alinea_gain", 7000.0),
        alinea_target_occupancy=fget(ctrl_sec, "alinea_target_occupancy", 0.22),
    )
    if controller.kind not in ("none", "fixed", "alinea", "dql"):
        errors.append(f"[controller]: unknown type {controller.kind!r}")

    atk_sec = parser["attack"] if parser.has_section("attack") else {}
    if atk_sec:
        _check_keys(atk_sec, _ATTACK_KEYS, errors, "attack")
    target_raw = atk_sec.get("target_site", "all") if atk_sec else "all"
    attack = AttackSettings(
        mode=atk_sec.get("mode", "none") if atk_sec else "none",
        epsilon=fget(atk_sec, "epsilon", 0.1),
        target_site=None if target_raw == "all" else int(target_raw),
    )
    if attack.mode not in ("none", "to_green", "to_red", "random_noise"):
        errors.append(f"[attack]: unknown mode {attack.mode!r}")
    if attack.epsilon < 0:
        errors.append("[attack]: epsilon must be non-negative")

    geometry = None
    if not errors:
        try:
            geometry = CorridorGeometry(
                _uniform_cells(n_cells, **cell_kwargs), sites, exit_splits, tick_s=run.tick_s
            )
        except ValueError as exc:
            errors.append(str(exc))
    if geometry is not None:
        errors.extend(schedule.validate(len(sites), run.horizon_min))
    if errors:
        raise ScenarioError(f"{origin}: " + "; ".join(errors))
    assert geometry is not None
    return ScenarioConfig(
        name=origin,
        geometry=geometry,
        schedule=schedule,
        controller=controller,
        attack=attack,
        run=run,
    )


def serialize_scenario(cfg: ScenarioConfig, extra: dict[str, dict[str, str]] | None = None) -> str:
    """Render a config (plus optional extra sections) back to scenario-file
    text; the echo written into every run directory is produced here."""
    lines: list[str] = []
    c0 = cfg.geometry.cells[0]
    lines.append("[geometry]")
    lines.append(f"length_m = {cfg.geometry.total_length_m}")
    lines.append(f"cell_length_m = {c0.length_m}")
    lines.append(f"lanes = {c0.lanes}")
    lines.append(f"free_flow_speed_ms = {c0.free_flow_speed_ms}")
    lines.append(f"capacity_per_lane_vph = {c0.capacity_per_lane_vph}")
    lines.append(f"jam_density_per_lane_vpkm = {c0.jam_density_per_lane_vpkm}")
    lines.append(f"wave_speed_ms = {c0.wave_speed_ms}")
    lines.append(f"capacity_drop = {c0.capacity_drop}")
    splits_by_site: dict[int, tuple[int, float]] = {}
    remaining = dict(cfg.geometry.exit_splits)
    for idx, site in enumerate(cfg.geometry.sites):
        best = None
        for cell_idx, split in remaining.items():
            dist = abs(cell_idx - site.attach_cell)
            if best is None or dist < best[0]:
                best = (dist, cell_idx, split)
        if best is not None:
            splits_by_site[idx] = (best[1], best[2])
            del remaining[best[1]]
    for idx, site in enumerate(cfg.geometry.sites):
        lines.append("")
        lines.append(f"[site {idx + 1}]")
        lines.append(f"attach_cell = {site.attach_cell}")
        lines.append(f"queue_lanes = {site.queue_lanes}")
        lines.append(f"vehicles_per_green = {site.vehicles_per_green}")
        lines.append(f"queue_storage_per_lane = {site.queue_storage_per_lane}")
        if idx in splits_by_site:
            cell_idx, split = splits_by_site[idx]
            lines.append(f"off_ramp_cell = {cell_idx}")
            lines.append(f"off_ramp_split = {split}")
    lines.append("")
    lines.append("[demand]")
    if cfg.schedule.kind == "random":
        lines.append("profile = random")
        lines.append(f"epoch_minutes = {cfg.schedule.epoch_minutes}")
    else:
        lines.append("profile = schedule")
        lines.append("rows =")
        for ep in cfg.schedule.epochs:
            rates = " ".join(str(r) for r in ep.site_vph)
            lines.append(f"    {ep.start_min} {ep.end_min} {ep.mainline_vph} {rates}")
    lines.append("")
    lines.append("[controller]")
    lines.append(f"type = {cfg.controller.kind}")
    lines.append(f"fixed_rate_vph = {cfg.controller.fixed_rate_vph}")
    lines.append(f"alinea_gain = {cfg.controller.alinea_gain}")
    lines.append(f"alinea_target_occupancy = {cfg.controller.alinea_target_occupancy}")
    lines.append("")
    lines.append("[attack]")
    lines.append(f"mode = {cfg.attack.mode}")
    lines.append(f"epsilon = {cfg.attack.epsilon}")
    target = "all" if cfg.attack.target_site is None else str(cfg.attack.target_site)
    lines.append(f"target_site = {target}")
    lines.append("")
    lines.append("[run]")
    lines.append(f"tick_s = {cfg.run.tick_s}")
    lines.append(f"control_interval_s = {cfg.run.control_interval_s}")
    lines.append(f"horizon_min = {cfg.run.horizon_min}")
    lines.append(f"dissipation_cap_min = {cfg.run.dissipation_cap_min}")
    lines.append(f"seed = {cfg.run.seed}")
    for section, kv in (extra or {}).items():
        lines.append("")
        lines.append(f"[{section}]")
        for key, value in kv.items():
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
