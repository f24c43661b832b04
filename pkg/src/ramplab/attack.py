"""False-data injection against the learned controller.

Targeted single-step gradient-sign perturbations push the detector state
toward whichever action the attacker wants (fully open or fully
restricted meter), and a uniform random-noise attack provides the
baseline corruption at matched magnitude. Both operate in the normalized
state space, clipped back to the unit box, between detector read and
controller decision. The attacker is white-box: it sees the true state
and the network gradients.
"""

from __future__ import annotations

import numpy as np

from .dqn import ACTION_RATES, DqlPolicy, N_ACTIONS
from .metrics import RunOutcome, speed_matrix, total_travel_time
from .mlp import QNetwork
from .runner import run_episode
from .scenario import AttackSettings, ScenarioConfig
from .seeding import named_stream

TARGETED_MODES = ("to_green", "to_red")
ATTACK_MODES = ("none", "to_green", "to_red", "random_noise")


class AttackError(ValueError):
    """Attack mode or parameters invalid."""


def resolve_target(mode: str) -> int:
    """Action index a targeted attack drives toward: the most permissive
    rate for to_green, the most restrictive for to_red."""
    if mode == "to_green":
        return N_ACTIONS - 1
    if mode == "to_red":
        return 0
    raise AttackError(f"mode {mode!r} has no target action (targeted modes: {TARGETED_MODES})")


def fgsm_perturb(net: QNetwork, state: np.ndarray, target_action: int, epsilon: float) -> np.ndarray:
    """One signed gradient step raising the target action's Q-value.

    Components with zero gradient stay put; the result is clipped to the
    unit box the normalized state lives in.
    """
    if epsilon < 0:
        raise AttackError(f"epsilon must be non-negative, got {epsilon}")
    g = net.input_gradient(state, target_action)
    return np.clip(state + epsilon * np.sign(g), 0.0, 1.0)


def random_noise_perturb(state: np.ndarray, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Independent uniform noise in [-epsilon, epsilon] per component,
    clipped to the unit box."""
    if epsilon < 0:
        raise AttackError(f"epsilon must be non-negative, got {epsilon}")
    return np.clip(state + rng.uniform(-epsilon, epsilon, size=state.shape), 0.0, 1.0)


def make_state_transform(net: QNetwork, settings: AttackSettings,
                         rng: np.random.Generator | None):
    """Per-decision state corruption for the evaluation policy, or ``None``
    for an identity attack. ``target_site`` restricts the victim."""
    if settings.mode == "none" or settings.epsilon == 0.0:
        return None
    if settings.mode not in ATTACK_MODES:
        raise AttackError(f"unknown attack mode {settings.mode!r}; choices: {ATTACK_MODES}")

    if settings.mode == "random_noise":
        if rng is None:
            raise AttackError("random_noise attack needs an rng")

        def transform(site_idx: int, state: np.ndarray) -> np.ndarray:
            if settings.target_site is not None and site_idx != settings.target_site:
                return state
            return random_noise_perturb(state, settings.epsilon, rng)

        return transform

    target = resolve_target(settings.mode)

    def transform(site_idx: int, state: np.ndarray) -> np.ndarray:
        if settings.target_site is not None and site_idx != settings.target_site:
            return state
        return fgsm_perturb(net, state, target, settings.epsilon)

    return transform


def attacked_rollout(scenario: ScenarioConfig, net: QNetwork, settings: AttackSettings,
                     seed: int, label: str | None = None) -> RunOutcome:
    """Greedy rollout of the learned controller under attack.

    Structure matches a clean evaluation; attack metrics add the fraction
    of decisions whose argmax flipped (to the target action for targeted
    modes) and the mean commanded rate with and without the corruption.
    """
    noise_rng = named_stream(seed, "noise") if settings.mode == "random_noise" else None
    transform = make_state_transform(net, settings, noise_rng)
    flip_target = resolve_target(settings.mode) if settings.mode in TARGETED_MODES else None
    policy = DqlPolicy(net, scenario.geometry, state_transform=transform, flip_target=flip_target)
    demand_rng = named_stream(seed, "demand") if scenario.schedule.kind == "random" else None
    stats = run_episode(scenario, policy, demand_rng=demand_rng, collect=True)
    overall, per_site = total_travel_time(stats.log, scenario.geometry.attribution)
    metrics = policy.metrics()
    metrics["mode"] = settings.mode
    metrics["epsilon"] = settings.epsilon
    return RunOutcome(
        label=label or f"dql_{settings.mode}",
        scenario_name=scenario.name,
        seed=seed,
        controller="dql",
        ttt_overall=overall,
        ttt_per_site=list(per_site),
        speed_matrix=speed_matrix(stats.log, scenario.geometry),
        rate_log=stats.rate_log,
        max_conservation_error=stats.max_conservation_error,
        attack_metrics=metrics,
    )


def collect_decision_states(scenario: ScenarioConfig, net: QNetwork, seed: int) -> list[np.ndarray]:
    """States the greedy controller actually sees on a clean rollout; the
    sample set for offline flip-rate comparisons."""
    states: list[np.ndarray] = []

    def recorder(site_idx: int, state: np.ndarray) -> np.ndarray:
        states.append(state.copy())
        return state

    policy = DqlPolicy(net, scenario.geometry, state_transform=recorder)
    demand_rng = named_stream(seed, "demand") if scenario.schedule.kind == "random" else None
    run_episode(scenario, policy, demand_rng=demand_rng, collect=False)
    return states


def flip_rates(net: QNetwork, states: list[np.ndarray], epsilon: float,
               target_action: int, rng: np.random.Generator) -> tuple[float, float]:
    """(gradient-sign, random-noise) flip-to-target rates on a common state
    sample at matched perturbation size."""
    if not states:
        raise AttackError("no states to attack")
    fgsm_flips = 0
    noise_flips = 0
    eligible = 0
    for state in states:
        clean = int(np.argmax(net.forward(state)))
        if clean == target_action:
            continue
        eligible += 1
        adv = fgsm_perturb(net, state, target_action, epsilon)
        if int(np.argmax(net.forward(adv))) == target_action:
            fgsm_flips += 1
        noisy = random_noise_perturb(state, epsilon, rng)
        if int(np.argmax(net.forward(noisy))) == target_action:
            noise_flips += 1
    if eligible == 0:
        return 0.0, 0.0
    return fgsm_flips / eligible, noise_flips / eligible
