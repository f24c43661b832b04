"""Deep Q-learning ramp metering: states, rewards, replay, training.

One network is shared by every metered site; each site feeds it its own
16-component state (four detector groups x volume/occupancy x the last
two 30-second windows) and receives a metering rate from a 9-level
action set spanning the legal rate band. Rewards are the negative count
of vehicles attributed to the site (mainline segment plus ramp queue),
so return maximizing is total-travel-time minimizing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .corridor import DETECTOR_GROUPS, DetectorAggregate
from .mlp import QNetwork, TrainingFault, make_optimizer
from .runner import run_episode
from .scenario import ScenarioConfig
from .seeding import named_stream

# Candidate metering rates, most restrictive first.
ACTION_RATES: tuple[float, ...] = (400.0, 550.0, 700.0, 850.0, 1000.0, 1150.0, 1300.0, 1450.0, 1600.0)
N_ACTIONS = len(ACTION_RATES)
STATE_DIM = 16

# Volume normalization basis: veh/h per detector lane.
VOLUME_BASIS_VPH = 2400.0


class StateError(ValueError):
    """Detector windows unusable for state assembly."""


def site_group_lanes(geometry, site_idx: int) -> dict[str, int]:
    """Lane count per detector group, used to normalize volumes."""
    site = geometry.sites[site_idx]
    mainline = geometry.cells[site.attach_cell].lanes
    return {
        "upstream_mainline": mainline,
        "ramp_entrance": site.queue_lanes,
        "ramp_stopbar": site.queue_lanes,
        "downstream_mainline": mainline,
    }


def assemble_state(
    window_t1: list[DetectorAggregate],
    window_t2: list[DetectorAggregate],
    group_lanes: dict[str, int],
    window_s: float = 30.0,
) -> np.ndarray:
    """Build the 16-vector from the last two completed windows.

    Component order: for each group in the fixed detector order, the
    normalized volume then the occupancy, each for window t-1 (newest)
    then t-2. Volumes normalize by lanes x 2400 veh/h over the window and
    clip to [0, 1]; occupancies pass through.
    """
    state = np.zeros(STATE_DIM)
    for g, group in enumerate(DETECTOR_GROUPS):
        per_window = []
        for window in (window_t1, window_t2):
            if window is None:
                raise StateError(f"missing detector window for group {group}")
            agg = next((a for a in window if a.group == group), None)
            if agg is None:
                raise StateError(f"window lacks detector group {group}")
            per_window.append(agg)
        basis = group_lanes[group] * VOLUME_BASIS_VPH / 3600.0 * window_s
        for w, agg in enumerate(per_window):
            state[g * 4 + 0 + w] = min(max(agg.volume / basis, 0.0), 1.0)
            state[g * 4 + 2 + w] = min(max(agg.occupancy, 0.0), 1.0)
    return state


def compute_reward(n_mainline: float, n_ramp: float) -> float:
    """Negative of all vehicles the site currently holds."""
    if n_mainline < 0 or n_ramp < 0:
        raise ValueError("vehicle counts cannot be negative")
    return -(n_mainline + n_ramp)


def select_action(net: QNetwork, state: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over the action set; greedy ties break low."""
    if not (0.0 <= epsilon <= 1.0):
        raise ValueError(f"epsilon {epsilon} outside [0, 1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(net.n_actions))
    return int(np.argmax(net.forward(state)))


def bellman_target(reward: float, next_state: np.ndarray, net: QNetwork,
                   gamma: float, terminal: bool) -> float:
    """One-step target: reward, plus the discounted best next value when the
    transition is not terminal (full replacement, no old-value blending)."""
    if not (0.0 <= gamma < 1.0):
        raise ValueError(f"gamma {gamma} outside [0, 1)")
    if terminal:
        return float(reward)
    return float(reward + gamma * np.max(net.forward(next_state)))


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool

    def __post_init__(self) -> None:
        if self.reward > 0:
            raise ValueError(f"rewards are vehicle counts negated, got {self.reward}")


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform batch sampling
    (without replacement inside a batch)."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = capacity
        self.rng = rng
        self._ring: list[Transition] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._ring)

    def push(self, transition: Transition) -> None:
        if len(self._ring) < self.capacity:
            self._ring.append(transition)
        else:
            self._ring[self._next] = transition
        self._next = (self._next + 1) % self.capacity

    def sample(self, batch_size: int) -> list[Transition]:
        if batch_size > len(self._ring):
            raise ValueError(
                f"cannot sample {batch_size} transitions from buffer of {len(self._ring)}"
            )
        idx = self.rng.choice(len(self._ring), size=batch_size, replace=False)
        return [self._ring[i] for i in idx]


@dataclass(frozen=True)
class TrainingConfig:
    episodes: int = 200
    gamma: float = 0.85
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    batch_size: int = 64
    replay_capacity: int = 100_000
    epsilon_start: float = 1.0
    epsilon_floor: float = 0.05
    epsilon_decay_fraction: float = 0.7
    target_sync_every: int = 500
    hidden_dims: tuple[int, ...] = (64, 64)


def epsilon_at(decision_index: int, total_decision_budget: int, cfg: TrainingConfig) -> float:
    """Linear decay from start to floor over the first ``decay_fraction`` of
    the decision budget, then flat."""
    knee = max(int(total_decision_budget * cfg.epsilon_decay_fraction), 1)
    frac = min(decision_index / knee, 1.0)
    return cfg.epsilon_start + frac * (cfg.epsilon_floor - cfg.epsilon_start)


class DqnTrainer:
    """Owns the online network, the lagged target copy, and the optimizer."""

    def __init__(self, net: QNetwork, cfg: TrainingConfig, rng: np.random.Generator):
        self.net = net
        self.target_net = net.copy()
        self.cfg = cfg
        self.buffer = ReplayBuffer(cfg.replay_capacity, rng)
        self.optimizer = make_optimizer(cfg.optimizer, cfg.learning_rate)
        self.decisions_seen = 0
        self._steps_since_sync = 0

    def note_decision(self) -> None:
        self.decisions_seen += 1

    def train_step(self) -> float:
        """One fitted-Q regression step on a uniform batch; returns the
        pre-step mean squared error."""
        cfg = self.cfg
        batch = self.buffer.sample(cfg.batch_size)
        states = np.stack([t.state for t in batch])
        next_states = np.stack([t.next_state for t in batch])
        actions = np.array([t.action for t in batch])
        rewards = np.array([t.reward for t in batch])
        terminal = np.array([t.terminal for t in batch])

        next_q = self.target_net.forward_batch(next_states).max(axis=1)
        targets = rewards + np.where(terminal, 0.0, cfg.gamma * next_q)

        preds_all = self.net.forward_batch(states)
        preds = preds_all[np.arange(len(batch)), actions]
        err = preds - targets
        loss = float(np.mean(err ** 2))

        out_grad = np.zeros_like(preds_all)
        out_grad[np.arange(len(batch)), actions] = 2.0 * err / len(batch)
        grads = self.net.backward(states, out_grad)
        self.optimizer.apply(self.net, grads)

        self._steps_since_sync += 1
        if self._steps_since_sync >= cfg.target_sync_every:
            self.sync_target()
        return loss

    def sync_target(self) -> None:
        self.target_net = self.net.copy()
        self._steps_since_sync = 0


class _SiteMemory:
    __slots__ = ("prev_window", "last_state", "last_action")

    def __init__(self):
        self.prev_window = None
        self.last_state = None
        self.last_action = None


class TrainingPolicy:
    """Control-protocol adapter that explores, stores transitions, and runs
    one training step per site decision."""

    def __init__(self, trainer: DqnTrainer, geometry, decision_budget: int,
                 explore_rng: np.random.Generator):
        self.trainer = trainer
        self.geometry = geometry
        self.budget = decision_budget
        self.rng = explore_rng
        self.episode_return = 0.0
        self.last_epsilon = trainer.cfg.epsilon_start
        self._sites: list[_SiteMemory] = []
        self._counts: list[tuple[float, float]] | None = None
        self._done = False

    def begin(self, n_sites: int) -> None:
        self._sites = [_SiteMemory() for _ in range(n_sites)]
        self._counts = None
        self._done = False
        self.episode_return = 0.0

    def observe_counts(self, interval: int, counts, done: bool) -> None:
        self._counts = counts
        if done:
            self._finish_terminal()
            self._done = True

    def _reward(self, s_idx: int) -> float:
        n_main, n_ramp = self._counts[s_idx]
        r = compute_reward(n_main, n_ramp)
        self.episode_return += r
        return r

    def _finish_terminal(self) -> None:
        if self._done:
            return
        for s_idx, mem in enumerate(self._sites):
            if mem.last_state is not None and self._counts is not None:
                self.trainer.buffer.push(
                    Transition(
                        state=mem.last_state,
                        action=mem.last_action,
                        reward=self._reward(s_idx),
                        next_state=np.zeros(STATE_DIM),
                        terminal=True,
                    )
                )
                mem.last_state = None

    def decide(self, interval: int, windows):
        if self._done:
            return None
        rates = None
        for s_idx, window in enumerate(windows):
            mem = self._sites[s_idx]
            if mem.prev_window is None:
                mem.prev_window = window
                continue
            lanes = site_group_lanes(self.geometry, s_idx)
            state = assemble_state(window, mem.prev_window, lanes)
            mem.prev_window = window

            if mem.last_state is not None:
                self.trainer.buffer.push(
                    Transition(
                        state=mem.last_state,
                        action=mem.last_action,
                        reward=self._reward(s_idx),
                        next_state=state,
                        terminal=False,
                    )
                )
            eps = epsilon_at(self.trainer.decisions_seen, self.budget, self.trainer.cfg)
            self.last_epsilon = eps
            action = select_action(self.trainer.net, state, eps, self.rng)
            self.trainer.note_decision()
            mem.last_state = state
            mem.last_action = action
            if len(self.trainer.buffer) >= self.trainer.cfg.batch_size:
                self.trainer.train_step()
            if rates is None:
                rates = [None] * len(self._sites)
            rates[s_idx] = ACTION_RATES[action]
        if rates is None:
            return None
        return [r if r is not None else ACTION_RATES[-1] for r in rates]


class DqlPolicy:
    """Greedy evaluation policy for a frozen network.

    ``state_transform(site_idx, state) -> state`` lets an attack harness
    corrupt the state between detector read and decision; flip statistics
    against the clean argmax are recorded either way.
    """

    def __init__(self, net: QNetwork, geometry, state_transform=None,
                 flip_target: int | None = None):
        if net.input_dim != STATE_DIM or net.n_actions != N_ACTIONS:
            raise ValueError(
                f"network is {net.input_dim}->{net.n_actions}, "
                f"controller needs {STATE_DIM}->{N_ACTIONS}"
            )
        self.net = net
        self.geometry = geometry
        self.state_transform = state_transform
        self.flip_target = flip_target
        self._sites: list[_SiteMemory] = []
        self.decisions = 0
        self.changed = 0
        self.flipped_to_target = 0
        self.sum_rate_clean = 0.0
        self.sum_rate_attacked = 0.0

    def begin(self, n_sites: int) -> None:
        self._sites = [_SiteMemory() for _ in range(n_sites)]

    def decide(self, interval: int, windows):
        rates = None
        for s_idx, window in enumerate(windows):
            mem = self._sites[s_idx]
            if mem.prev_window is None:
                mem.prev_window = window
                continue
            lanes = site_group_lanes(self.geometry, s_idx)
            state = assemble_state(window, mem.prev_window, lanes)
            mem.prev_window = window

            clean_action = int(np.argmax(self.net.forward(state)))
            if self.state_transform is not None:
                adv = self.state_transform(s_idx, state)
                action = int(np.argmax(self.net.forward(adv)))
            else:
                action = clean_action
            self.decisions += 1
            if action != clean_action:
                self.changed += 1
            if self.flip_target is not None and action == self.flip_target != clean_action:
                self.flipped_to_target += 1
            self.sum_rate_clean += ACTION_RATES[clean_action]
            self.sum_rate_attacked += ACTION_RATES[action]
            if rates is None:
                rates = [None] * len(self._sites)
            rates[s_idx] = ACTION_RATES[action]
        if rates is None:
            return None
        return [r if r is not None else ACTION_RATES[-1] for r in rates]

    def metrics(self) -> dict[str, float]:
        d = max(self.decisions, 1)
        if self.flip_target is not None:
            flips = self.flipped_to_target / d
        else:
            flips = self.changed / d
        return {
            "decisions": float(self.decisions),
            "flip_rate": flips,
            "changed_rate": self.changed / d,
            "mean_rate_clean": self.sum_rate_clean / d,
            "mean_rate_attacked": self.sum_rate_attacked / d,
        }


@dataclass
class EpisodeRecord:
    episode: int
    seed: int
    scenario: str
    epsilon: float
    episode_return: float
    ttt: float


def write_training_log(path, records: list[EpisodeRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "seed", "scenario", "epsilon", "return", "ttt"])
        for r in records:
            writer.writerow(
                [r.episode, r.seed, r.scenario, f"{r.epsilon:.6f}",
                 f"{r.episode_return:.3f}", f"{r.ttt:.3f}"]
            )


def run_training(
    scenarios: list[ScenarioConfig],
    cfg: TrainingConfig,
    seed: int,
    fault_checkpoint_path=None,
) -> tuple[QNetwork, list[EpisodeRecord]]:
    """Train one shared network across the given scenarios' sites.

    Episodes cycle through the scenario list; every randomness source
    (weights, exploration, demand draws) hangs off the root seed through
    its own named stream, so identical calls produce identical networks.
    On a training fault the last good parameters are checkpointed before
    the fault propagates.
    """
    if not scenarios:
        raise ValueError("need at least one training scenario")
    init_rng = named_stream(seed, "init")
    explore_rng = named_stream(seed, "explore")
    demand_rng = named_stream(seed, "demand")

    net = QNetwork.initialized((STATE_DIM, *cfg.hidden_dims, N_ACTIONS), init_rng)
    trainer = DqnTrainer(net, cfg, explore_rng)

    intervals_per_episode = max(
        int(round(sc.run.horizon_min * 60.0 / sc.run.control_interval_s)) for sc in scenarios
    )
    sites = max(sc.geometry.n_sites for sc in scenarios)
    budget = cfg.episodes * intervals_per_episode * sites

    policy = TrainingPolicy(trainer, scenarios[0].geometry, budget, explore_rng)
    records: list[EpisodeRecord] = []
    for episode in range(cfg.episodes):
        sc = scenarios[episode % len(scenarios)]
        policy.geometry = sc.geometry
        try:
            stats = run_episode(sc, policy, demand_rng=demand_rng, collect=False)
        except TrainingFault:
            if fault_checkpoint_path is not None:
                trainer.net.save(fault_checkpoint_path)
            raise
        records.append(
            EpisodeRecord(
                episode=episode,
                seed=seed,
                scenario=sc.name,
                epsilon=policy.last_epsilon,
                episode_return=policy.episode_return,
                ttt=stats.ttt_overall,
            )
        )
    return trainer.net, records
