"""Problem interface, Latin hypercube initialization and built-in test problems.

Constraints follow the g_j(x) <= 0 convention. Built-ins TOY-A and TOY-B share
the objectives (x1, 1 - x1) on [0, 1]^d; TOY-A adds the inactive constraint
0.2 - x2 <= 0 while TOY-B truncates the front with x1 - 0.5 <= 0. Additional
problems register through `register_problem` and are sanity-checked on
construction only (shapes, finiteness), never against published result tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np


class BoundsViolationError(ValueError):
    """Candidate outside the box bounds; callers must clip first."""


class NoReferenceFrontError(LookupError):
    """The problem ships no reference front, so IGD is unavailable."""


class ProblemRegistryError(KeyError):
    pass


@dataclass(frozen=True)
class ProblemSpec:
    """Immutable black-box problem definition over a box-bounded domain."""

    name: str
    d: int
    m: int
    j: int
    lower: np.ndarray
    upper: np.ndarray
    objective_fn: Callable[[np.ndarray], np.ndarray]
    constraint_fn: Callable[[np.ndarray], np.ndarray] | None = None
    front: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        if self.d < 1 or self.m < 2 or self.j < 0:
            raise ValueError("need d >= 1, M >= 2, J >= 0")
        if self.lower.shape != (self.d,) or self.upper.shape != (self.d,):
            raise ValueError("bounds must have length d")
        if not np.all(self.lower < self.upper):
            raise ValueError("need lower < upper componentwise")
        if self.j > 0 and self.constraint_fn is None:
            raise ValueError("J > 0 requires a constraint function")
        if self.front is not None:
            front = np.asarray(self.front, dtype=float)
            object.__setattr__(self, "front", front)
            _validate_front(front, self.m)


def _validate_front(front: np.ndarray, m: int):
    if front.ndim != 2 or front.shape[1] != m or front.shape[0] < 2:
        raise ValueError("reference front must be a (>=2, M) point set")
    if not np.all(np.isfinite(front)):
        raise ValueError("reference front contains non-finite values")
    le = np.all(front[:, None, :] <= front[None, :, :], axis=-1)
    lt = np.any(front[:, None, :] < front[None, :, :], axis=-1)
    if np.any(le & lt):
        raise ValueError("reference front points must be mutually non-dominated")


def evaluate(problem: ProblemSpec, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Expensive evaluation of one decision vector; pure and deterministic."""
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.d,):
        raise ValueError(f"decision vector must have length {problem.d}")
    if np.any(x < problem.lower) or np.any(x > problem.upper):
        raise BoundsViolationError(f"{problem.name}: x outside box bounds")
    y = np.asarray(problem.objective_fn(x), dtype=float)
    if y.shape != (problem.m,) or not np.all(np.isfinite(y)):
        raise ValueError(f"{problem.name}: objective_fn must return {problem.m} finite values")
    if problem.j == 0:
        return y, np.empty(0)
    g = np.asarray(problem.constraint_fn(x), dtype=float)
    if g.shape != (problem.j,) or not np.all(np.isfinite(g)):
        raise ValueError(f"{problem.name}: constraint_fn must return {problem.j} finite values")
    return y, g


def clip_to_bounds(problem: ProblemSpec, X: np.ndarray) -> np.ndarray:
    """Componentwise clipping of out-of-bound candidates before evaluation."""
    return np.clip(X, problem.lower, problem.upper)


def lhs_sample(n: int, problem: ProblemSpec, seed: int) -> np.ndarray:
    """Latin hypercube design: per dimension, one uniform point per stratum."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = np.random.default_rng(seed)
    out = np.empty((n, problem.d))
    width = problem.upper - problem.lower
    for i in range(problem.d):
        strata = rng.permutation(n)
        offsets = rng.random(n)
        out[:, i] = problem.lower[i] + (strata + offsets) / n * width[i]
    return out


def reference_front(problem: ProblemSpec) -> np.ndarray:
    if problem.front is None:
        raise NoReferenceFrontError(f"{problem.name} has no reference front")
    return problem.front


@dataclass
class EvaluatedSolution:
    """One expensively evaluated point: inputs, objectives, constraints, level."""

    x: np.ndarray
    y: np.ndarray
    g: np.ndarray
    level: float


@dataclass
class CycleRecord:
    """Per-cycle log entry of the outer expensive-evaluation loop."""

    cycle: int
    action: int
    reward: float
    igd: float | None
    max_level: float
    feasible_count: int
    flags: tuple[str, ...] = ()


@dataclass
class TraceEntry:
    cycle: int
    state_hash: str
    action: int


class ArchiveFullError(RuntimeError):
    pass


class RunArchive:
    """Append-only log of expensively evaluated solutions plus cycle metadata."""

    def __init__(self, fe_max: int | None = None):
        self.fe_max = fe_max
        self.solutions: list[EvaluatedSolution] = []
        self.cycle_log: list[CycleRecord] = []
        self.trace: list[TraceEntry] = []
        self.shadow_trace: list[TraceEntry] = []
        self.cci_fits: list = []
        self.timings: dict[str, float] = {}

    def __len__(self) -> int:
        return len(self.solutions)

    def append(self, sol: EvaluatedSolution):
        if self.fe_max is not None and len(self.solutions) >= self.fe_max:
            raise ArchiveFullError("evaluation budget exhausted")
        self.solutions.append(sol)

    def extend(self, sols):
        for sol in sols:
            self.append(sol)

    @property
    def X(self) -> np.ndarray:
        return np.array([s.x for s in self.solutions])

    @property
    def Y(self) -> np.ndarray:
        return np.array([s.y for s in self.solutions])

    @property
    def G(self) -> np.ndarray:
        if not self.solutions:
            return np.empty((0, 0))
        return np.array([s.g for s in self.solutions]).reshape(len(self.solutions), -1)

    @property
    def levels(self) -> np.ndarray:
        return np.array([s.level for s in self.solutions])


def _front_segment(f1_max: float, n_points: int = 100) -> np.ndarray:
    a = np.linspace(0.0, f1_max, n_points)
    return np.column_stack([a, 1.0 - a])


def toy_a(d: int = 8) -> ProblemSpec:
    """Two linear objectives on [0,1]^d; the constraint never binds the front."""
    if d < 2:
        raise ValueError("toy-a needs d >= 2")
    return ProblemSpec(
        name="toy-a",
        d=d,
        m=2,
        j=1,
        lower=np.zeros(d),
        upper=np.ones(d),
        objective_fn=lambda x: np.array([x[0], 1.0 - x[0]]),
        constraint_fn=lambda x: np.array([0.2 - x[1]]),
        front=_front_segment(1.0),
    )


def toy_b(d: int = 8) -> ProblemSpec:
    """Same objectives as toy-a; feasibility x1 <= 0.5 truncates the front."""
    if d < 1:
        raise ValueError("toy-b needs d >= 1")
    return ProblemSpec(
        name="toy-b",
        d=d,
        m=2,
        j=1,
        lower=np.zeros(d),
        upper=np.ones(d),
        objective_fn=lambda x: np.array([x[0], 1.0 - x[0]]),
        constraint_fn=lambda x: np.array([x[0] - 0.5]),
        front=_front_segment(0.5),
    )


_REGISTRY: dict[str, Callable[..., ProblemSpec]] = {}


def register_problem(name: str, factory: Callable[..., ProblemSpec],
                     overwrite: bool = False):
    """Register a problem factory (e.g. suite members implemented externally)."""
    if name in _REGISTRY and not overwrite:
        raise ProblemRegistryError(f"problem {name!r} already registered")
    _REGISTRY[name] = factory


def available_problems() -> list[str]:
    return sorted(_REGISTRY)


def get_problem(name: str, d: int | None = None,
                front_csv: str | Path | None = None) -> ProblemSpec:
    """Build a registered problem and run a construction-time sanity check."""
    if name not in _REGISTRY:
        raise ProblemRegistryError(
            f"unknown problem {name!r}; available: {', '.join(available_problems())}")
    problem = _REGISTRY[name](d) if d is not None else _REGISTRY[name]()
    if front_csv is not None:
        front = load_front_csv(front_csv)
        problem = ProblemSpec(
            name=problem.name, d=problem.d, m=problem.m, j=problem.j,
            lower=problem.lower, upper=problem.upper,
            objective_fn=problem.objective_fn, constraint_fn=problem.constraint_fn,
            front=front)
    _sanity_check(problem)
    return problem


def _sanity_check(problem: ProblemSpec):
    mid = 0.5 * (problem.lower + problem.upper)
    evaluate(problem, mid)
    evaluate(problem, problem.lower.copy())


def load_front_csv(path: str | Path) -> np.ndarray:
    """Load a reference front from CSV with header f1,...,fM, one point per row."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if not all(col.strip().startswith("f") for col in header):
            raise ValueError(f"{path}: expected header f1,...,fM")
        rows = [[float(v) for v in line.strip().split(",")]
                for line in fh if line.strip()]
    front = np.asarray(rows, dtype=float)
    if front.ndim != 2 or front.shape[1] != len(header):
        raise ValueError(f"{path}: ragged rows")
    return front


register_problem("toy-a", toy_a)
register_problem("toy-b", toy_b)
