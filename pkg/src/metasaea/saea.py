"""Surrogate-driven NSGA-II inner loop with level-first environmental selection.

All fitness information inside the loop comes from surrogate predictions; no
expensive evaluations happen here. Selection ranks candidates by predicted
region level first, then by Pareto rank and crowding distance within equal
levels. The elite batch for expensive evaluation is the crowding-ranked
nondominated subset at the best predicted level, deduplicated against the
archive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class Individual:
    x: np.ndarray
    pred_y: np.ndarray
    pred_level: float
    rank: int = 0
    crowding: float = 0.0
    index: int = 0  # stable creation order, used as the final tie-break


@dataclass(frozen=True)
class GenConfig:
    pop_size: int = 50
    generations: int = 15
    eta_c: float = 15.0
    crossover_prob: float = 0.9
    eta_m: float = 20.0
    mutation_prob: float | None = None  # default 1/d
    tournament_size: int = 2

    def __post_init__(self):
        if self.pop_size < 2 or self.generations < 0:
            raise ValueError("population must hold >= 2; generations >= 0")
        if not (0.0 <= self.crossover_prob <= 1.0):
            raise ValueError("crossover probability must lie in [0, 1]")
        if self.mutation_prob is not None and not (0.0 <= self.mutation_prob <= 1.0):
            raise ValueError("mutation probability must lie in [0, 1]")


def fast_nondominated_sort(points: np.ndarray) -> list[list[int]]:
    """Indices grouped into fronts by Pareto rank (minimization)."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(P)
    if n == 0:
        raise ValueError("cannot sort an empty point set")
    le = np.all(P[:, None, :] <= P[None, :, :], axis=-1)
    lt = np.any(P[:, None, :] < P[None, :, :], axis=-1)
    dominates = le & lt  # dominates[i, j]: i dominates j
    dom_count = dominates.sum(axis=0).astype(int)
    fronts: list[list[int]] = []
    remaining = np.ones(n, dtype=bool)
    while remaining.any():
        current = np.flatnonzero(remaining & (dom_count == 0))
        fronts.append(current.tolist())
        remaining[current] = False
        dom_count -= dominates[current].sum(axis=0)
    return fronts


def crowding_distance(front: np.ndarray) -> np.ndarray:
    """Per-point crowding: boundary points get inf, interior points the sum of
    range-normalized neighbor gaps per objective."""
    P = np.atleast_2d(np.asarray(front, dtype=float))
    n, m = P.shape
    dist = np.zeros(n)
    if n <= 2:
        return np.full(n, np.inf)
    for col in range(m):
        order = np.argsort(P[:, col], kind="stable")
        span = P[order[-1], col] - P[order[0], col]
        if span > 0:
            gaps = (P[order[2:], col] - P[order[:-2], col]) / span
            dist[order[1:-1]] += gaps
        dist[order[0]] = dist[order[-1]] = np.inf
    return dist


def level_first_compare(a: Individual, b: Individual) -> int:
    """-1 if a ranks ahead of b, +1 if behind, 0 when identical.

    Higher level wins, then lower Pareto rank, then larger crowding, with the
    stable creation index as the final tie-break.
    """
    if a.pred_level != b.pred_level:
        return -1 if a.pred_level > b.pred_level else 1
    if a.rank != b.rank:
        return -1 if a.rank < b.rank else 1
    if a.crowding != b.crowding:
        return -1 if a.crowding > b.crowding else 1
    if a.index != b.index:
        return -1 if a.index < b.index else 1
    return 0


def _sort_key(ind: Individual):
    return (-ind.pred_level, ind.rank, -ind.crowding, ind.index)


def assign_rank_and_crowding(pop: list[Individual]):
    """Recompute ranks and crowding within equal-level groups."""
    levels = np.array([ind.pred_level for ind in pop])
    for level in np.unique(levels):
        group = [i for i, ind in enumerate(pop) if ind.pred_level == level]
        pts = np.array([pop[i].pred_y for i in group])
        for rank, front in enumerate(fast_nondominated_sort(pts)):
            crowd = crowding_distance(pts[front])
            for local, c in zip(front, crowd):
                pop[group[local]].rank = rank
                pop[group[local]].crowding = float(c)


def environmental_select(pop: list[Individual], size: int) -> list[Individual]:
    """Level-first truncation to `size` after rank/crowding assignment."""
    assign_rank_and_crowding(pop)
    return sorted(pop, key=_sort_key)[:size]


def _sbx_pairs(p1: np.ndarray, p2: np.ndarray, eta_c: float, crossover_prob: float,
               rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n, d = p1.shape
    do_cross = rng.random(n) < crossover_prob
    u = rng.random((n, d))
    beta = np.where(u <= 0.5,
                    (2.0 * u) ** (1.0 / (eta_c + 1.0)),
                    (2.0 * (1.0 - u)) ** (-1.0 / (eta_c + 1.0)))
    c1 = 0.5 * ((1.0 + beta) * p1 + (1.0 - beta) * p2)
    c2 = 0.5 * ((1.0 - beta) * p1 + (1.0 + beta) * p2)
    mask = do_cross[:, None]
    return np.where(mask, c1, p1), np.where(mask, c2, p2)


def _polynomial_mutation(X: np.ndarray, eta_m: float, mutation_prob: float,
                         lower: np.ndarray, upper: np.ndarray,
                         rng: np.random.Generator) -> np.ndarray:
    span = upper - lower
    mutate = rng.random(X.shape) < mutation_prob
    u = rng.random(X.shape)
    d1 = (X - lower) / span
    d2 = (upper - X) / span
    low_branch = (2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1) ** (eta_m + 1.0)) ** (1.0 / (eta_m + 1.0)) - 1.0
    high_branch = 1.0 - (2.0 * (1.0 - u) + (2.0 * u - 1.0) * (1.0 - d2) ** (eta_m + 1.0)) ** (1.0 / (eta_m + 1.0))
    delta = np.where(u < 0.5, low_branch, high_branch)
    return np.where(mutate, X + delta * span, X)


def _tournament(pop: list[Individual], count: int, tournament_size: int,
                rng: np.random.Generator) -> np.ndarray:
    """Decision vectors of tournament winners under the level-first comparator."""
    draws = rng.integers(0, len(pop), size=(count, tournament_size))
    winners = np.empty((count, pop[0].x.size))
    for row, contestants in enumerate(draws):
        best = pop[contestants[0]]
        for idx in contestants[1:]:
            if level_first_compare(pop[idx], best) < 0:
                best = pop[idx]
        winners[row] = best.x
    return winners


def _make_individuals(X: np.ndarray, bundle, start_index: int) -> list[Individual]:
    Y, levels = bundle.predict(X)
    return [Individual(x=X[i].copy(), pred_y=Y[i], pred_level=float(levels[i]),
                       index=start_index + i)
            for i in range(len(X))]


def run_inner(P_init: np.ndarray, bundle, config: GenConfig,
              rng: np.random.Generator) -> list[Individual]:
    """Evolve the warm-start population against the surrogate bundle.

    Each generation: binary tournaments under the level-first comparator,
    simulated binary crossover, polynomial mutation, clipping into bounds,
    surrogate re-prediction and level-first truncation back to the population
    size. Performs no expensive evaluations.
    """
    P_init = np.atleast_2d(np.asarray(P_init, dtype=float))
    lower, upper = bundle.lower, bundle.upper
    mutation_prob = config.mutation_prob
    if mutation_prob is None:
        mutation_prob = 1.0 / P_init.shape[1]

    counter = len(P_init)
    pop = _make_individuals(np.clip(P_init, lower, upper), bundle, 0)
    assign_rank_and_crowding(pop)
    for _ in range(config.generations):
        n_off = len(pop) if len(pop) % 2 == 0 else len(pop) + 1
        parents = _tournament(pop, n_off, config.tournament_size, rng)
        c1, c2 = _sbx_pairs(parents[0::2], parents[1::2], config.eta_c,
                            config.crossover_prob, rng)
        children = np.empty_like(parents)
        children[0::2], children[1::2] = c1, c2
        # The bounded mutation operator assumes in-bounds input, so clip the
        # crossover output first.
        children = np.clip(children[:len(pop)], lower, upper)
        children = _polynomial_mutation(children, config.eta_m, mutation_prob,
                                        lower, upper, rng)
        children = np.clip(children, lower, upper)
        offspring = _make_individuals(children, bundle, counter)
        counter += len(offspring)
        pop = environmental_select(pop + offspring, config.pop_size)
    return pop


def elite_batch_select(final_pop: list[Individual], bundle, archive_X: np.ndarray,
                       batch: int, rng: np.random.Generator,
                       dedupe_tol: float = 1e-9,
                       eta_m: float = 20.0) -> tuple[np.ndarray, bool]:
    """Pick the elite batch for expensive evaluation.

    Candidates at the maximum predicted level are restricted to their
    nondominated subset and ranked by crowding distance; duplicates of archive
    points (or of already chosen points) within `dedupe_tol` in normalized
    space are dropped. Shortfalls are filled by the remaining individuals under
    the level-first comparator; if deduplication exhausts every candidate, the
    top candidates are mutation-perturbed until distinct and the batch is
    flagged.
    """
    if not final_pop:
        raise ValueError("empty final population")
    lower, upper = bundle.lower, bundle.upper
    span = upper - lower
    archive_norm = (np.atleast_2d(archive_X) - lower) / span if len(archive_X) else np.empty((0, len(lower)))

    top_level = max(ind.pred_level for ind in final_pop)
    top = [ind for ind in final_pop if ind.pred_level == top_level]
    pts = np.array([ind.pred_y for ind in top])
    nd_local = fast_nondominated_sort(pts)[0]
    nd = [top[i] for i in nd_local]
    crowd = crowding_distance(pts[nd_local])
    order = sorted(range(len(nd)), key=lambda i: (-crowd[i], nd[i].index))
    ranked = [nd[i] for i in order]
    rest = sorted((ind for ind in final_pop if ind not in nd), key=_sort_key)

    chosen: list[np.ndarray] = []
    chosen_norm: list[np.ndarray] = []

    def is_duplicate(x_norm: np.ndarray) -> bool:
        for pool in (archive_norm, np.array(chosen_norm) if chosen_norm else None):
            if pool is None or len(pool) == 0:
                continue
            if np.min(np.linalg.norm(pool - x_norm, axis=1)) < dedupe_tol:
                return True
        return False

    for ind in ranked + rest:
        if len(chosen) == batch:
            break
        x_norm = (ind.x - lower) / span
        if is_duplicate(x_norm):
            continue
        chosen.append(ind.x.copy())
        chosen_norm.append(x_norm)

    flagged = False
    if len(chosen) < batch:
        # Every remaining candidate duplicates the archive: perturb the best
        # candidates until distinct so the evaluation budget stays exact.
        flagged = True
        candidates = ranked + rest
        i = 0
        while len(chosen) < batch:
            seed_x = candidates[i % len(candidates)].x.copy()
            for _ in range(100):
                perturbed = _polynomial_mutation(seed_x[None, :], eta_m, 1.0,
                                                 lower, upper, rng)[0]
                perturbed = np.clip(perturbed, lower, upper)
                x_norm = (perturbed - lower) / span
                if not is_duplicate(x_norm):
                    chosen.append(perturbed)
                    chosen_norm.append(x_norm)
                    break
            else:
                raise RuntimeError("could not produce a non-duplicate candidate")
            i += 1
    return np.array(chosen), flagged
