"""Episode driver, metrics, baselines, persistence.

One episode: Latin-hypercube initialization, per-constraint calibration from
the initial violations, then batched cycles of state encoding, region-action
selection, diffusion warm-start, surrogate-driven inner evolution, elite-batch
expensive evaluation and archive/reward bookkeeping, stopping exactly at the
evaluation budget.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from . import diffusion as diff
from . import meta
from . import problems as prob
from . import saea
from .mmcci import (CCIFit, CCIParams, CONSTRAINT_MODES, LevelGrid,
                    fit_cci_params, level_fn_for_mode)
from .saea import GenConfig
from .surrogate import SurrogateBundle


class EpisodeError(RuntimeError):
    """A cycle-level failure aborted the episode."""


@dataclass(frozen=True)
class EpisodeConfig:
    n_init: int = 100
    fe_max: int = 300
    batch: int = 5
    grid_k: int = 40
    seed: int = 0
    constraint_mode: str = "mmcci"
    min_region: int = 20
    fixed_action: int = 0
    until_feasible: bool = False
    gen: GenConfig = field(default_factory=GenConfig)
    diffusion: diff.DiffusionConfig = field(default_factory=diff.DiffusionConfig)

    def __post_init__(self):
        if self.n_init < 1 or self.fe_max <= self.n_init:
            raise ValueError("need 1 <= n_init < fe_max")
        if self.batch < 1 or (self.fe_max - self.n_init) % self.batch != 0:
            raise ValueError("budget after initialization must divide into batches")
        if self.constraint_mode not in CONSTRAINT_MODES:
            raise ValueError(f"unknown constraint mode {self.constraint_mode!r}")

    @property
    def cycles(self) -> int:
        return (self.fe_max - self.n_init) // self.batch

    def with_seed(self, seed: int) -> "EpisodeConfig":
        return replace(self, seed=seed)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def igd(points: np.ndarray, reference: np.ndarray) -> float | None:
    """Mean distance from each reference point to its nearest obtained point.

    Returns None when no points were obtained (the "no feasible solution"
    marker); callers restrict `points` to feasible nondominated solutions.
    """
    reference = np.atleast_2d(np.asarray(reference, dtype=float))
    if reference.shape[0] == 0:
        raise ValueError("empty reference front")
    points = np.asarray(points, dtype=float)
    if points.size == 0:
        return None
    points = np.atleast_2d(points)
    return float(cdist(reference, points).min(axis=1).mean())


def feasible_objectives(archive: prob.RunArchive) -> np.ndarray:
    """Objective vectors of truly feasible solutions (all g_j <= 0)."""
    if len(archive) == 0:
        return np.empty((0, 0))
    G = archive.G
    feasible = np.all(G <= 0.0, axis=1) if G.shape[1] else np.ones(len(archive), bool)
    return archive.Y[feasible]


def feasible_nondominated(archive: prob.RunArchive) -> np.ndarray:
    """Feasible solutions filtered to the nondominated subset."""
    Y = feasible_objectives(archive)
    if Y.shape[0] == 0:
        return Y
    front0 = saea.fast_nondominated_sort(Y)[0]
    return Y[front0]


def archive_stats(archive: prob.RunArchive, front: np.ndarray | None) -> meta.ArchiveStats:
    max_level = float(archive.levels.max()) if len(archive) else 0.0
    value = igd(feasible_nondominated(archive), front) if front is not None else None
    return meta.ArchiveStats(max_level=max_level, igd=value)


def state_hash(state) -> str:
    """Digest of the raw archive snapshot behind a state (policy-independent)."""
    h = hashlib.sha256()
    h.update(struct.pack("<d", state.budget_fraction))
    if state.objectives is not None:
        h.update(np.ascontiguousarray(state.objectives, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(state.levels, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def decision_consistency(trace_a: list[prob.TraceEntry],
                         trace_b: list[prob.TraceEntry]) -> float:
    """Fraction of decision steps where both traces picked the same action."""
    if len(trace_a) != len(trace_b):
        raise ValueError("traces have different lengths")
    if not trace_a:
        raise ValueError("empty traces")
    matches = sum(a.action == b.action for a, b in zip(trace_a, trace_b))
    return matches / len(trace_a)


# ---------------------------------------------------------------------------
# Episode driver
# ---------------------------------------------------------------------------

def _fit_cci(G: np.ndarray, mode: str) -> list[CCIFit]:
    """Per-constraint calibration from the initial violations; only the modes
    that consume calibrated levels fit anything."""
    if mode not in ("mmcci", "mean_maxcci") or G.shape[1] == 0:
        return []
    return [fit_cci_params(np.maximum(G[:, j], 0.0)) for j in range(G.shape[1])]


def run_episode(problem: prob.ProblemSpec, config: EpisodeConfig,
                policy: meta.EpisodePolicy,
                on_transition=None,
                shadow_policy: meta.EpisodePolicy | None = None) -> prob.RunArchive:
    """Run one budgeted episode and return the populated archive.

    `on_transition` receives a meta.Transition after every decision cycle
    (training hook). `shadow_policy` is queried on the same states without
    executing its actions; its picks land in the archive's shadow trace for
    decision-consistency analysis.
    """
    t_start = time.perf_counter()
    root = np.random.SeedSequence(config.seed)
    lhs_ss, diff_ss, evo_ss, policy_ss = root.spawn(4)
    diff_rng = np.random.default_rng(diff_ss)
    evo_rng = np.random.default_rng(evo_ss)
    policy_rng = np.random.default_rng(policy_ss)

    grid = LevelGrid(config.grid_k)
    lhs_seed = int(lhs_ss.generate_state(1)[0])
    X0 = prob.lhs_sample(config.n_init, problem, lhs_seed)
    evals = [prob.evaluate(problem, x) for x in X0]
    Y0 = np.array([e[0] for e in evals])
    G0 = np.array([e[1] for e in evals]).reshape(config.n_init, -1)

    cci_fits = _fit_cci(G0, config.constraint_mode)
    cci_params = [f.params for f in cci_fits] or None
    level_fn = level_fn_for_mode(config.constraint_mode, cci_params, grid)
    levels0 = level_fn(G0)

    archive = prob.RunArchive(fe_max=None if config.until_feasible else config.fe_max)
    for x, (y, g), lv in zip(X0, evals, levels0):
        archive.append(prob.EvaluatedSolution(x=x, y=y, g=g, level=float(lv)))
    archive.cci_fits = cci_fits

    front = problem.front
    prev_stats = archive_stats(archive, front)

    def run_cycle(cycle: int, terminal: bool):
        nonlocal prev_stats
        levels_arch = archive.levels
        state = policy.make_state(archive.Y, levels_arch, len(archive), config.fe_max)
        action = policy.select_action(state, policy_rng)
        archive.trace.append(prob.TraceEntry(cycle, state_hash(state), action))
        if shadow_policy is not None:
            shadow_state = shadow_policy.make_state(
                archive.Y, levels_arch, len(archive), config.fe_max)
            archive.shadow_trace.append(prob.TraceEntry(
                cycle, state_hash(shadow_state),
                shadow_policy.select_action(shadow_state, policy_rng)))

        region = meta.select_region(levels_arch, meta.action_interval(action),
                                    config.min_region)
        data = diff.normalize(archive.X[region], problem.lower, problem.upper)
        denoiser, _ = diff.train(data, config.diffusion, diff_rng)
        p_init = diff.sample(denoiser, config.gen.pop_size,
                             problem.lower, problem.upper, diff_rng)

        bundle = SurrogateBundle.fit_from_archive(
            problem.lower, problem.upper, archive.X, archive.Y, archive.G,
            constraint_mode=config.constraint_mode, cci_params=cci_params,
            grid=grid)
        pop = saea.run_inner(p_init, bundle, config.gen, evo_rng)
        remaining = config.fe_max - len(archive)
        # Overtime cycles (until_feasible past the budget) use full batches.
        batch_size = min(config.batch, remaining) if remaining > 0 else config.batch
        X_batch, flagged = saea.elite_batch_select(
            pop, bundle, archive.X, batch_size, evo_rng, eta_m=config.gen.eta_m)

        for x in X_batch:
            x = np.clip(x, problem.lower, problem.upper)
            y, g = prob.evaluate(problem, x)
            level = float(level_fn(g.reshape(1, -1))[0])
            archive.append(prob.EvaluatedSolution(x=x, y=y, g=g, level=level))

        curr_stats = archive_stats(archive, front)
        r = meta.reward(prev_stats, curr_stats)
        feasible_count = int(feasible_objectives(archive).shape[0])
        flags = ("duplicate_fallback",) if flagged else ()
        archive.cycle_log.append(prob.CycleRecord(
            cycle=cycle, action=action, reward=r, igd=curr_stats.igd,
            max_level=curr_stats.max_level, feasible_count=feasible_count,
            flags=flags))
        if on_transition is not None:
            next_state = policy.make_state(archive.Y, archive.levels,
                                           len(archive), config.fe_max)
            on_transition(meta.Transition(state=state, action=action, reward=r,
                                          next_state=next_state, terminal=terminal))
        prev_stats = curr_stats

    for cycle in range(1, config.cycles + 1):
        try:
            run_cycle(cycle, terminal=(cycle == config.cycles))
        except Exception as exc:
            raise EpisodeError(f"{problem.name} seed {config.seed}: "
                               f"cycle {cycle} failed: {exc}") from exc

    if config.until_feasible:
        cycle = config.cycles
        while feasible_objectives(archive).shape[0] == 0:
            cycle += 1
            try:
                run_cycle(cycle, terminal=False)
            except Exception as exc:
                raise EpisodeError(f"{problem.name} seed {config.seed}: "
                                   f"overtime cycle {cycle} failed: {exc}") from exc

    archive.timings["episode_seconds"] = time.perf_counter() - t_start
    return archive


BASELINE_RUN_MODES = ("cv", "tanh", "mean_maxcci", "random_policy", "fixed_action")


def run_baseline(problem: prob.ProblemSpec, config: EpisodeConfig, mode: str,
                 policy: meta.EpisodePolicy | None = None) -> prob.RunArchive:
    """Budgeted episode with the guidance or constraint component substituted.

    Constraint-mode baselines (cv, tanh, mean_maxcci) swap the level machinery
    in selection; random_policy/fixed_action keep the calibrated levels but
    replace the action source. Default policy source is random actions.
    """
    if mode not in BASELINE_RUN_MODES:
        raise ValueError(f"unknown baseline mode {mode!r}")
    if mode in ("cv", "tanh", "mean_maxcci"):
        config = replace(config, constraint_mode=mode)
        policy = policy or meta.RandomPolicy()
    elif mode == "random_policy":
        config = replace(config, constraint_mode="mmcci")
        policy = meta.RandomPolicy()
    else:
        config = replace(config, constraint_mode="mmcci")
        policy = meta.FixedActionPolicy(config.fixed_action)
    return run_episode(problem, config, policy)


def evaluations_to_first_feasible(archive: prob.RunArchive) -> int | None:
    """1-based index of the first truly feasible expensive evaluation."""
    for i, sol in enumerate(archive.solutions):
        if sol.g.size == 0 or np.all(sol.g <= 0.0):
            return i + 1
    return None


def run_consistency(problem: prob.ProblemSpec, config: EpisodeConfig,
                    policy_a: meta.EpisodePolicy, policy_b: meta.EpisodePolicy
                    ) -> tuple[list[prob.TraceEntry], list[prob.TraceEntry]]:
    """Run with policy A while probing policy B on the identical states."""
    archive = run_episode(problem, config, policy_a, shadow_policy=policy_b)
    return archive.trace, archive.shadow_trace


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _fmt(value: float) -> str:
    return repr(float(value))


def config_to_mapping(config: EpisodeConfig) -> dict[str, str]:
    """Flat key=value view of the episode configuration (config-file keys)."""
    gen, dcfg = config.gen, config.diffusion
    return {
        "episode.n_init": str(config.n_init),
        "episode.fe_max": str(config.fe_max),
        "episode.batch": str(config.batch),
        "episode.k": str(config.grid_k),
        "episode.seed": str(config.seed),
        "episode.constraint_mode": config.constraint_mode,
        "episode.min_region": str(config.min_region),
        "episode.fixed_action": str(config.fixed_action),
        "episode.until_feasible": str(config.until_feasible).lower(),
        "evolution.pop_size": str(gen.pop_size),
        "evolution.generations": str(gen.generations),
        "evolution.eta_c": _fmt(gen.eta_c),
        "evolution.eta_m": _fmt(gen.eta_m),
        "evolution.crossover_prob": _fmt(gen.crossover_prob),
        "evolution.mutation_prob": "" if gen.mutation_prob is None else _fmt(gen.mutation_prob),
        "evolution.tournament_size": str(gen.tournament_size),
        "diffusion.T": str(dcfg.steps),
        "diffusion.epochs": str(dcfg.epochs),
        "diffusion.batch": str(dcfg.batch_size),
        "diffusion.beta_start": _fmt(dcfg.beta_start),
        "diffusion.beta_end": _fmt(dcfg.beta_end),
        "diffusion.hidden": str(dcfg.hidden),
        "diffusion.time_dim": str(dcfg.time_dim),
        "diffusion.lr": _fmt(dcfg.lr),
    }


def episode_config_from_mapping(mapping: dict[str, str]) -> EpisodeConfig:
    m = dict(mapping)

    def pick(key, cast, default):
        raw = m.get(key, "")
        return cast(raw) if raw != "" else default

    gen = GenConfig(
        pop_size=pick("evolution.pop_size", int, 50),
        generations=pick("evolution.generations", int, 15),
        eta_c=pick("evolution.eta_c", float, 15.0),
        eta_m=pick("evolution.eta_m", float, 20.0),
        crossover_prob=pick("evolution.crossover_prob", float, 0.9),
        mutation_prob=pick("evolution.mutation_prob", float, None),
        tournament_size=pick("evolution.tournament_size", int, 2),
    )
    dcfg = diff.DiffusionConfig(
        steps=pick("diffusion.T", int, 50),
        epochs=pick("diffusion.epochs", int, 200),
        batch_size=pick("diffusion.batch", int, 16),
        beta_start=pick("diffusion.beta_start", float, 1e-4),
        beta_end=pick("diffusion.beta_end", float, 0.15),
        hidden=pick("diffusion.hidden", int, 64),
        time_dim=pick("diffusion.time_dim", int, 32),
        lr=pick("diffusion.lr", float, 1e-3),
    )
    return EpisodeConfig(
        n_init=pick("episode.n_init", int, 100),
        fe_max=pick("episode.fe_max", int, 300),
        batch=pick("episode.batch", int, 5),
        grid_k=pick("episode.k", int, 40),
        seed=pick("episode.seed", int, 0),
        constraint_mode=m.get("episode.constraint_mode", "mmcci"),
        min_region=pick("episode.min_region", int, 20),
        fixed_action=pick("episode.fixed_action", int, 0),
        until_feasible=m.get("episode.until_feasible", "false") == "true",
        gen=gen,
        diffusion=dcfg,
    )


def load_key_value_file(path: str | Path) -> dict[str, str]:
    """Flat key=value config format; '#' starts a comment line."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def export_run(archive: prob.RunArchive, problem: prob.ProblemSpec,
               config: EpisodeConfig, out_dir: str | Path) -> dict[str, Path]:
    """Write solutions CSV, per-cycle CSV and the metadata JSON."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    d, m, j = problem.d, problem.m, problem.j

    solutions_path = out_dir / "solutions.csv"
    with open(solutions_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["eval_index", "cycle"]
                        + [f"x_{i + 1}" for i in range(d)]
                        + [f"f_{i + 1}" for i in range(m)]
                        + [f"g_{i + 1}" for i in range(j)]
                        + ["level"])
        for idx, sol in enumerate(archive.solutions):
            cycle = 0 if idx < config.n_init else (idx - config.n_init) // config.batch + 1
            writer.writerow([idx, cycle]
                            + [_fmt(v) for v in sol.x]
                            + [_fmt(v) for v in sol.y]
                            + [_fmt(v) for v in sol.g]
                            + [_fmt(sol.level)])

    cycles_path = out_dir / "cycles.csv"
    with open(cycles_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cycle", "action", "reward", "igd", "max_level",
                         "feasible_count", "flags"])
        for rec in archive.cycle_log:
            writer.writerow([rec.cycle, rec.action, _fmt(rec.reward),
                             "" if rec.igd is None else _fmt(rec.igd),
                             _fmt(rec.max_level), rec.feasible_count,
                             ";".join(rec.flags)])

    final_igd = archive.cycle_log[-1].igd if archive.cycle_log else None
    first_feasible = evaluations_to_first_feasible(archive)
    metadata = {
        "problem": problem.name,
        "d": d,
        "M": m,
        "J": j,
        "seed": config.seed,
        "config": config_to_mapping(config),
        "cci_params": [
            {"alpha": f.params.alpha, "beta": f.params.beta, "c": f.params.c,
             "never_violated": f.never_violated, "used_fallback": f.used_fallback}
            for f in getattr(archive, "cci_fits", [])
        ],
        "evaluations": len(archive),
        "evaluations_to_first_feasible": first_feasible,
        "final_igd": final_igd,
        "timings": getattr(archive, "timings", {}),
        "trace": [[e.cycle, e.state_hash, e.action] for e in archive.trace],
    }
    metadata_path = out_dir / "metadata.json"
    with open(metadata_path, "w", encoding="utf-8") as fh:
        json.dump(metadata, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"solutions": solutions_path, "cycles": cycles_path,
            "metadata": metadata_path}


def import_metadata(path: str | Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def read_solutions_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Columns of a solutions CSV grouped into x/f/g matrices plus levels."""
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    data = np.asarray(rows, dtype=float)
    cols = {name: i for i, name in enumerate(header)}
    x_cols = [i for name, i in cols.items() if name.startswith("x_")]
    f_cols = [i for name, i in cols.items() if name.startswith("f_")]
    g_cols = [i for name, i in cols.items() if name.startswith("g_")]
    return {
        "X": data[:, x_cols],
        "Y": data[:, f_cols],
        "G": data[:, g_cols],
        "levels": data[:, cols["level"]],
        "cycle": data[:, cols["cycle"]].astype(int),
    }
