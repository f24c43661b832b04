"""Command-line front end: train, eval, attack, compare.

Every run writes its outputs into a fresh directory (refusing to touch
an existing one unless --force is given) together with a resolved
configuration echo sufficient to replay the run. Exit codes: 0 success,
2 usage or configuration problem, 3 runtime fault.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .attack import AttackError, attacked_rollout
from .control import ConfigError
from .corridor import CorridorError
from .dqn import STATE_DIM, N_ACTIONS, TrainingConfig, run_training, write_training_log
from .evaluate import CONTROLLER_KINDS, evaluate_controller
from .metrics import (
    RunOutcome,
    compare_runs,
    write_comparison_csv,
    write_speed_csv,
    write_ttt_csv,
)
from .mlp import CheckpointError, QNetwork, TrainingFault
from .scenario import (
    AttackSettings,
    ControllerSpec,
    ScenarioError,
    load_scenario,
    serialize_scenario,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FAULT = 3

_CONFIG_ERRORS = (ScenarioError, ConfigError, CorridorError, AttackError, CheckpointError)


class UsageError(ValueError):
    pass


def _prepare_out_dir(out: str, force: bool) -> Path:
    path = Path(out)
    if path.exists() and not force:
        raise UsageError(f"output directory {out!r} exists; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_resolved_config(path: Path, scenario, extra: dict[str, dict[str, str]]) -> None:
    (path / "resolved_config.ini").write_text(serialize_scenario(scenario, extra))


def _load_net(checkpoint: str) -> QNetwork:
    net = QNetwork.load(checkpoint)
    if net.input_dim != STATE_DIM or net.n_actions != N_ACTIONS:
        raise CheckpointError(
            f"checkpoint {checkpoint} holds a {net.input_dim}->{net.n_actions} network; "
            f"this controller requires {STATE_DIM} inputs and {N_ACTIONS} actions"
        )
    return net


def cmd_train(args) -> int:
    scenario = load_scenario(args.scenario)
    out = _prepare_out_dir(args.out, args.force)
    cfg = TrainingConfig(episodes=args.episodes)
    net, records = run_training(
        [scenario], cfg, args.seed,
        fault_checkpoint_path=out / "checkpoint_fault.qnet",
    )
    net.save(out / "checkpoint.qnet")
    write_training_log(out / "training_log.csv", records)
    _write_resolved_config(out, scenario, {
        "cli": {
            "command": "train",
            "episodes": str(args.episodes),
            "seed": str(args.seed),
        },
    })
    print(f"trained {args.episodes} episodes; checkpoint at {out / 'checkpoint.qnet'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.controller == "dql" and not args.checkpoint:
        raise UsageError("--controller dql requires --checkpoint")
    net = _load_net(args.checkpoint) if args.checkpoint else None
    spec = ControllerSpec(
        kind=args.controller,
        fixed_rate_vph=scenario.controller.fixed_rate_vph,
        alinea_gain=scenario.controller.alinea_gain,
        alinea_target_occupancy=scenario.controller.alinea_target_occupancy,
    )
    out = _prepare_out_dir(args.out, args.force)
    outcomes = []
    for seed in args.seed:
        outcome = evaluate_controller(scenario, spec, seed, net=net)
        outcomes.append(outcome)
        write_speed_csv(out / f"speeds_{args.controller}_seed{seed}.csv", outcome.speed_matrix)
    write_ttt_csv(out / "ttt.csv", outcomes)
    _write_resolved_config(out, scenario.with_overrides(controller=spec), {
        "cli": {
            "command": "eval",
            "controller": args.controller,
            "checkpoint": args.checkpoint or "",
            "seeds": " ".join(str(s) for s in args.seed),
        },
    })
    for o in outcomes:
        print(f"{o.controller} seed {o.seed}: TTT {o.ttt_overall:.0f} veh*s")
    return EXIT_OK


def cmd_attack(args) -> int:
    scenario = load_scenario(args.scenario)
    net = _load_net(args.checkpoint)
    settings = AttackSettings(
        mode=args.mode,
        epsilon=args.epsilon,
        target_site=None if args.target_site == "all" else int(args.target_site),
    )
    out = _prepare_out_dir(args.out, args.force)
    outcomes = []
    for seed in args.seed:
        outcome = attacked_rollout(scenario, net, settings, seed)
        outcomes.append(outcome)
        write_speed_csv(out / f"speeds_dql_{args.mode}_seed{seed}.csv", outcome.speed_matrix)
    write_ttt_csv(out / "ttt.csv", outcomes)
    _write_resolved_config(out, scenario.with_overrides(attack=settings), {
        "cli": {
            "command": "attack",
            "checkpoint": args.checkpoint,
            "mode": args.mode,
            "epsilon": str(args.epsilon),
            "seeds": " ".join(str(s) for s in args.seed),
        },
    })
    for o in outcomes:
        m = o.attack_metrics or {}
        print(
            f"dql under {args.mode} (eps={args.epsilon}) seed {o.seed}: "
            f"TTT {o.ttt_overall:.0f} veh*s, flip rate {m.get('flip_rate', 0.0):.3f}"
        )
    return EXIT_OK


def _read_run_dir(run_dir: Path) -> list[RunOutcome]:
    ttt = run_dir / "ttt.csv"
    if not ttt.exists():
        raise UsageError(f"{run_dir} contains no ttt.csv (not a run directory?)")
    outcomes = []
    with open(ttt, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            site_cols = sorted(
                (c for c in row if c.startswith("ttt_site_")),
                key=lambda c: int(c.rsplit("_", 1)[1]),
            )
            label = row["controller"]
            if row.get("mode") and row["mode"] != "none":
                label = f"{label}_{row['mode']}"
            outcomes.append(
                RunOutcome(
                    label=label,
                    scenario_name=row["scenario"],
                    seed=int(row["seed"]),
                    controller=row["controller"],
                    ttt_overall=float(row["ttt_overall"]),
                    ttt_per_site=[float(row[c]) for c in site_cols],
                    speed_matrix=np.zeros((0, 0)),
                    rate_log=np.zeros((0, 0)),
                    max_conservation_error=0.0,
                )
            )
    if not outcomes:
        raise UsageError(f"{run_dir}/ttt.csv holds no runs")
    return outcomes


def cmd_compare(args) -> int:
    outcomes = []
    for run_dir in args.run_dirs:
        outcomes.extend(_read_run_dir(Path(run_dir)))
    try:
        header, rows = compare_runs(outcomes)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _prepare_out_dir(args.out, args.force)
    write_comparison_csv(out / "comparison.csv", header, rows)
    print(f"compared {len(outcomes)} runs into {out / 'comparison.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ramplab",
        description="Ramp-metering laboratory: simulate, train, attack, compare.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the DQL controller")
    p_train.add_argument("--scenario", default="train_fig3")
    p_train.add_argument("--episodes", type=int, default=200)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--force", action="store_true")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a controller on a scenario")
    p_eval.add_argument("--scenario", default="test_i24")
    p_eval.add_argument("--controller", choices=CONTROLLER_KINDS, default="none")
    p_eval.add_argument("--checkpoint", default=None)
    p_eval.add_argument("--seed", type=int, nargs="+", default=[0])
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--force", action="store_true")
    p_eval.set_defaults(func=cmd_eval)

    p_attack = sub.add_parser("attack", help="evaluate the DQL controller under attack")
    p_attack.add_argument("--scenario", default="test_i24")
    p_attack.add_argument("--checkpoint", required=True)
    p_attack.add_argument("--mode", choices=["to_green", "to_red", "random_noise"], required=True)
    p_attack.add_argument("--epsilon", type=float, default=0.1)
    p_attack.add_argument("--target-site", default="all")
    p_attack.add_argument("--seed", type=int, nargs="+", default=[0])
    p_attack.add_argument("--out", required=True)
    p_attack.add_argument("--force", action="store_true")
    p_attack.set_defaults(func=cmd_attack)

    p_cmp = sub.add_parser("compare", help="build a comparison table from run directories")
    p_cmp.add_argument("run_dirs", nargs="+")
    p_cmp.add_argument("--out", required=True)
    p_cmp.add_argument("--force", action="store_true")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, *_CONFIG_ERRORS, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingFault as exc:
        print(f"training fault: {exc}", file=sys.stderr)
        return EXIT_FAULT
    except OSError as exc:
        print(f"runtime fault: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
