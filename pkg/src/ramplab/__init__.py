"""Ramp-metering laboratory.

A self-contained corridor simulator with metered on-ramps, classical
(ALINEA, fixed-time) and deep Q-learning controllers, a false-data
injection attack harness, and total-travel-time / speed-matrix scoring.
"""

from .attack import fgsm_perturb, flip_rates, random_noise_perturb, resolve_target
from .control import AlineaConfig, alinea_update, fixed_time_rate, rate_to_cycle
from .corridor import (
    Cell,
    CorridorGeometry,
    CorridorSimulator,
    DetectorAggregate,
    RampSite,
    SimClock,
)
from .dqn import (
    ACTION_RATES,
    ReplayBuffer,
    Transition,
    TrainingConfig,
    assemble_state,
    bellman_target,
    compute_reward,
    run_training,
    select_action,
)
from .evaluate import evaluate_controller
from .metrics import RunOutcome, compare_runs, speed_matrix, total_travel_time
from .mlp import AdamOptimizer, GradientBundle, QNetwork, SgdOptimizer, TrainingFault
from .scenario import (
    ScenarioConfig,
    ScenarioError,
    builtin_scenario,
    demand_at_time,
    load_scenario,
    sample_training_demand,
)

__version__ = "0.1.0"
