"""Command-line entry points: train, run, baseline, evaluate, consistency, export."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness, meta, problems
from .ela import ELAConfig

logger = logging.getLogger("metasaea")


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--seed", type=int, default=None,
                        help="overrides episode.seed from the config file")
    parser.add_argument("--config", type=Path, default=None,
                        help="flat key=value config file")
    parser.add_argument("--out-dir", type=Path, default=Path("runs"))


def _episode_config(args, **overrides) -> harness.EpisodeConfig:
    from dataclasses import replace

    mapping = harness.load_key_value_file(args.config) if args.config else {}
    config = harness.episode_config_from_mapping(mapping)
    if args.seed is not None:
        overrides["seed"] = args.seed
    return replace(config, **overrides) if overrides else config


def _load_policy(spec: str) -> meta.EpisodePolicy:
    if spec == "random":
        return meta.RandomPolicy()
    if spec.startswith("fixed:"):
        return meta.FixedActionPolicy(int(spec.split(":", 1)[1]))
    return meta.NetworkPolicy(meta.MetaPolicy.load(spec), epsilon=0.0)


def cmd_train(args) -> int:
    problem_list = [problems.get_problem(name.strip(), d=args.dim)
                    for name in args.problems.split(",") if name.strip()]
    config = _episode_config(args)
    seed = config.seed
    dqn = meta.DQNConfig(updates_per_step=args.updates_per_step,
                         warmup=args.warmup)
    result = meta.train_meta(problem_list, episodes=args.episodes,
                             workers=args.workers, seed=seed,
                             episode_config=config, ela_config=ELAConfig(),
                             dqn_config=dqn, progress=True)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = args.out if args.out else args.out_dir / "policy.ckpt"
    result.policy.save(ckpt, extra_metadata={
        "episodes": args.episodes, "workers": args.workers, "seed": seed,
        "problems": [p.name for p in problem_list],
        "config": harness.config_to_mapping(config)})
    trace_path = args.out_dir / "reward_trace.csv"
    with open(trace_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "problem", "reward", "sliding_avg"])
        for i, (name, r, avg) in enumerate(zip(result.episode_problems,
                                               result.rewards, result.sliding_avg)):
            writer.writerow([i, name,
                             "" if not np.isfinite(r) else repr(float(r)),
                             "" if not np.isfinite(avg) else repr(float(avg))])
    print(f"checkpoint: {ckpt}")
    print(f"reward trace: {trace_path}")
    if result.discarded_episodes:
        print(f"discarded episodes: {result.discarded_episodes}")
    return 0


def cmd_run(args) -> int:
    problem = problems.get_problem(args.problem, d=args.dim, front_csv=args.front_csv)
    config = _episode_config(args, constraint_mode=args.constraint_mode)
    policy = _load_policy(args.policy)
    archive = harness.run_episode(problem, config, policy)
    paths = harness.export_run(archive, problem, config, args.out_dir)
    final = archive.cycle_log[-1].igd if archive.cycle_log else None
    print(f"evaluations: {len(archive)}")
    print(f"final feasible-front IGD: {'n/a' if final is None else f'{final:.6f}'}")
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


def cmd_baseline(args) -> int:
    problem = problems.get_problem(args.problem, d=args.dim, front_csv=args.front_csv)
    config = _episode_config(args, until_feasible=args.until_feasible,
                             fixed_action=args.fixed_action)
    archive = harness.run_baseline(problem, config, args.mode)
    paths = harness.export_run(archive, problem, config, args.out_dir)
    first = harness.evaluations_to_first_feasible(archive)
    print(f"evaluations: {len(archive)}")
    print(f"evaluations to first feasible: {'never' if first is None else first}")
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


def cmd_evaluate(args) -> int:
    problem = problems.get_problem(args.problem, d=args.dim, front_csv=args.front_csv)
    front = problems.reference_front(problem)
    for path in args.solutions:
        data = harness.read_solutions_csv(path)
        feasible = np.all(data["G"] <= 0.0, axis=1) if data["G"].size else np.ones(len(data["Y"]), bool)
        Y = data["Y"][feasible]
        if Y.shape[0]:
            from .saea import fast_nondominated_sort
            Y = Y[fast_nondominated_sort(Y)[0]]
        value = harness.igd(Y, front)
        print(f"{path}: {'NaN' if value is None else f'{value:.6f}'}")
    return 0


def cmd_consistency(args) -> int:
    problem = problems.get_problem(args.problem, d=args.dim)
    config = _episode_config(args)
    policy_a = _load_policy(args.policy_a)
    policy_b = _load_policy(args.policy_b)
    trace_a, trace_b = harness.run_consistency(problem, config, policy_a, policy_b)
    print(f"decision consistency: {harness.decision_consistency(trace_a, trace_b):.4f}")
    return 0


def cmd_export(args) -> int:
    metadata = harness.import_metadata(Path(args.from_dir) / "metadata.json")
    data = harness.read_solutions_csv(Path(args.from_dir) / "solutions.csv")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    import json
    import shutil
    shutil.copy2(Path(args.from_dir) / "solutions.csv", out / "solutions.csv")
    shutil.copy2(Path(args.from_dir) / "cycles.csv", out / "cycles.csv")
    with open(out / "metadata.json", "w", encoding="utf-8") as fh:
        json.dump(metadata, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"re-exported {len(data['Y'])} solutions to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metasaea",
        description="Surrogate-assisted constrained multi-objective optimization "
                    "with learned region guidance")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="meta-train the region-selection policy")
    p.add_argument("--problems", required=True, help="comma-separated problem names")
    p.add_argument("--episodes", type=int, default=300)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--out", type=Path, default=None, help="checkpoint path")
    p.add_argument("--updates-per-step", type=float, default=1.0)
    p.add_argument("--warmup", type=int, default=1000)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run one guided episode")
    p.add_argument("--problem", required=True)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--policy", default="random",
                   help="random | fixed:<id> | <checkpoint path>")
    p.add_argument("--constraint-mode", default="mmcci",
                   choices=["mmcci", "mean_maxcci", "tanh", "cv"])
    p.add_argument("--front-csv", type=Path, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("baseline", help="run an ablation baseline episode")
    p.add_argument("--problem", required=True)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--mode", required=True, choices=list(harness.BASELINE_RUN_MODES))
    p.add_argument("--fixed-action", type=int, default=0)
    p.add_argument("--until-feasible", action="store_true")
    p.add_argument("--front-csv", type=Path, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", help="feasible-front IGD of exported archives")
    p.add_argument("--problem", required=True)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--front-csv", type=Path, default=None)
    p.add_argument("solutions", nargs="+", help="solutions.csv paths")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("consistency", help="decision agreement of two policies")
    p.add_argument("--problem", required=True)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--policy-a", required=True)
    p.add_argument("--policy-b", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_consistency)

    p = sub.add_parser("export", help="re-export a run directory")
    p.add_argument("--from-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
