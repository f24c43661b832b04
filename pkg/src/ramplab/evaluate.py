"""Scored evaluation runs for every controller behind one entry point."""

from __future__ import annotations

from .control import AlineaConfig, AlineaPolicy, StaticPolicy
from .corridor import RATE_MAX_VPH
from .dqn import DqlPolicy
from .metrics import RunOutcome, speed_matrix, total_travel_time
from .mlp import QNetwork
from .runner import run_episode
from .scenario import ControllerSpec, ScenarioConfig
from .seeding import named_stream

CONTROLLER_KINDS = ("none", "fixed", "alinea", "dql")


def build_policy(spec: ControllerSpec, scenario: ScenarioConfig, net: QNetwork | None = None):
    if spec.kind == "none":
        return StaticPolicy(RATE_MAX_VPH)
    if spec.kind == "fixed":
        return StaticPolicy(spec.fixed_rate_vph)
    if spec.kind == "alinea":
        cfg = AlineaConfig(gain=spec.alinea_gain, target_occupancy=spec.alinea_target_occupancy)
        return AlineaPolicy(cfg)
    if spec.kind == "dql":
        if net is None:
            raise ValueError("dql controller needs a trained network checkpoint")
        return DqlPolicy(net, scenario.geometry)
    raise ValueError(f"unknown controller {spec.kind!r}; choices: {CONTROLLER_KINDS}")


def evaluate_controller(
    scenario: ScenarioConfig,
    spec: ControllerSpec,
    seed: int,
    net: QNetwork | None = None,
    label: str | None = None,
) -> RunOutcome:
    """One scored rollout: full logs, TTT, speed matrix, rate trace."""
    policy = build_policy(spec, scenario, net)
    demand_rng = named_stream(seed, "demand") if scenario.schedule.kind == "random" else None
    stats = run_episode(scenario, policy, demand_rng=demand_rng, collect=True)
    overall, per_site = total_travel_time(stats.log, scenario.geometry.attribution)
    return RunOutcome(
        label=label or spec.kind,
        scenario_name=scenario.name,
        seed=seed,
        controller=spec.kind,
        ttt_overall=overall,
        ttt_per_site=list(per_site),
        speed_matrix=speed_matrix(stats.log, scenario.geometry),
        rate_log=stats.rate_log,
        max_conservation_error=stats.max_conservation_error,
    )
