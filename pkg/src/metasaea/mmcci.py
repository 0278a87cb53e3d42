"""Constraint-calibrated region levels.

A constraint value g <= 0 maps to level 1; a violation g > 0 maps to the
largest lambda in (0, 1] satisfying lambda^alpha * g <= C * (1 - lambda)^beta,
scanned on a uniform K-grid from 1 downward. Multiple constraints aggregate
by the worst (minimum) per-constraint level, so the overall level is set by
the bottleneck constraint. Calibration triples (alpha, beta, C) are fitted
per constraint from the violation quantiles of the initial sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ConstraintModeError(ValueError):
    """Unknown constraint-handling mode."""


@dataclass(frozen=True)
class CCIParams:
    """Calibration triple for one constraint: alpha, beta >= 1 and C > 0."""

    alpha: float
    beta: float
    c: float

    def __post_init__(self):
        if not (self.alpha >= 1.0 and self.beta >= 1.0 and self.c > 0.0):
            raise ValueError(f"invalid calibration triple {(self.alpha, self.beta, self.c)}")


@dataclass(frozen=True)
class LevelGrid:
    """Uniform partition of (0, 1] into k intervals; values {1 - t/k : t = 0..k}."""

    k: int = 40

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("partition count must be positive")

    def values(self) -> np.ndarray:
        """Grid values scanned from 1 downward, excluding the terminal 0."""
        t = np.arange(self.k)
        return (self.k - t) / self.k


@dataclass(frozen=True)
class AnchorSet:
    """Violation quantile levels paired with target calibrated levels."""

    quantiles: tuple = (0.95, 0.75, 0.50, 0.25, 0.05)
    targets: tuple = (0.01, 0.125, 0.25, 0.375, 0.50)

    def __post_init__(self):
        if len(self.quantiles) != len(self.targets):
            raise ValueError("anchor cardinalities differ")
        if not all(a > b for a, b in zip(self.quantiles, self.quantiles[1:])):
            raise ValueError("quantile levels must be strictly decreasing")
        if not all(a < b for a, b in zip(self.targets, self.targets[1:])):
            raise ValueError("target levels must be strictly increasing")


@dataclass(frozen=True)
class CCIFit:
    """Fit result: calibration triple plus provenance flags."""

    params: CCIParams
    never_violated: bool = False
    used_fallback: bool = False


def cci_holds(lam: float, g: float, p: CCIParams) -> bool:
    """Whether lambda^alpha * g <= C * (1 - lambda)^beta at the given level."""
    if not 0.0 < lam <= 1.0:
        raise ValueError("lambda must lie in (0, 1]")
    return lam ** p.alpha * g <= p.c * (1.0 - lam) ** p.beta


def max_cci_level(g: float, p: CCIParams, grid: LevelGrid = LevelGrid()) -> float:
    """Largest grid level satisfying the calibrated inequality; 0 if none does."""
    for lam in grid.values():
        if cci_holds(lam, g, p):
            return float(lam)
    return 0.0


def max_cci_levels(g: np.ndarray, p: CCIParams, grid: LevelGrid = LevelGrid()) -> np.ndarray:
    """Vectorized grid scan over a column of constraint values."""
    g = np.asarray(g, dtype=float)
    lams = grid.values()  # descending from 1
    lhs = np.power(lams, p.alpha)[:, None] * g[None, :]
    rhs = (p.c * np.power(1.0 - lams, p.beta))[:, None]
    holds = lhs <= rhs
    any_holds = holds.any(axis=0)
    first = holds.argmax(axis=0)  # index of the first satisfying level, 1 downward
    return np.where(any_holds, lams[first], 0.0)


def analytic_max_cci(g: float, p: CCIParams, tol: float = 1e-12) -> float:
    """Continuous calibrated level: 1 for g <= 0, else the unique boundary root.

    For g > 0 the boundary condition lambda^alpha * g = C (1 - lambda)^beta has
    exactly one root in (0, 1) because C (1-lambda)^beta / lambda^alpha is
    strictly decreasing; bisection converges to absolute tolerance `tol`.
    """
    if g <= 0.0:
        return 1.0
    lo, hi = 0.0, 1.0
    # phi(lam) = C (1-lam)^beta - lam^alpha g is strictly decreasing with
    # phi(0) = C > 0 and phi(1) = -g < 0.
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if p.c * (1.0 - mid) ** p.beta - mid ** p.alpha * g >= 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def mm_cci_level(g: np.ndarray, params: list[CCIParams],
                 grid: LevelGrid = LevelGrid()) -> float:
    """Worst-constraint aggregation: min over per-constraint grid levels.

    A problem with no constraints is fully feasible (level 1).
    """
    g = np.atleast_1d(np.asarray(g, dtype=float))
    if g.size == 0:
        return 1.0
    if g.size != len(params):
        raise ValueError("constraint vector and calibration list lengths differ")
    return min(max_cci_level(float(gj), pj, grid) for gj, pj in zip(g, params))


def mm_cci_levels(G: np.ndarray, params: list[CCIParams],
                  grid: LevelGrid = LevelGrid()) -> np.ndarray:
    """Row-wise worst-constraint levels for a (n, J) matrix of constraint values."""
    G = np.asarray(G, dtype=float)
    if G.ndim != 2:
        raise ValueError("expected a (n, J) constraint matrix")
    n, j = G.shape
    if j == 0:
        return np.ones(n)
    per = np.stack([max_cci_levels(G[:, jj], params[jj], grid) for jj in range(j)])
    return per.min(axis=0)


def fit_cci_params(violations: np.ndarray, anchors: AnchorSet = AnchorSet()) -> CCIFit:
    """Fit (alpha, beta, C) from nonnegative violations of the initial sample.

    Only strictly positive violations enter the fit. With >= 5 of them, the
    empirical quantiles at the anchor levels are matched to the tight form of
    the calibrated inequality via linear least squares in
    (log C, beta, alpha), then projected onto alpha, beta >= 1 and C > 0.
    With 1-4 positive violations the shape is fixed to alpha=1, beta=2 and C is
    solved from the single median anchor (lambda = 0.5), giving C = 2 * median.
    With none, the constraint is flagged never-violated and defaults to
    (1, 2, 1).
    """
    v = np.asarray(violations, dtype=float)
    if np.any(v < 0):
        raise ValueError("violations must be nonnegative (use max(0, g))")
    pos = v[v > 0]
    if pos.size == 0:
        return CCIFit(CCIParams(1.0, 2.0, 1.0), never_violated=True, used_fallback=True)
    if pos.size < len(anchors.quantiles):
        median = float(np.quantile(pos, 0.5))
        return CCIFit(CCIParams(1.0, 2.0, 2.0 * median), used_fallback=True)

    q = np.quantile(pos, list(anchors.quantiles))
    lam = np.asarray(anchors.targets, dtype=float)
    # log v_r = log C + beta log(1 - lam_r) - alpha log lam_r
    a_mat = np.column_stack([np.ones_like(lam), np.log1p(-lam), -np.log(lam)])
    rhs = np.log(q)
    (log_c, beta, alpha), *_ = np.linalg.lstsq(a_mat, rhs, rcond=None)
    alpha = max(float(alpha), 1.0)
    beta = max(float(beta), 1.0)
    c = max(float(np.exp(log_c)), np.finfo(float).tiny)
    return CCIFit(CCIParams(alpha, beta, c))


BASELINE_MODES = ("tanh", "cv", "mean_maxcci")
CONSTRAINT_MODES = ("mmcci",) + BASELINE_MODES


def baseline_level(g: np.ndarray, mode: str, params: list[CCIParams] | None = None,
                   grid: LevelGrid = LevelGrid()) -> float:
    """Ablation alternatives to the worst-constraint calibrated level.

    tanh        -> min_j (1 - tanh(max(0, g_j))), a fixed-shape [0, 1] mapping
    mean_maxcci -> arithmetic mean of the per-constraint grid levels
    cv          -> comparator key: 1 when feasible, else minus the total
                   violation (feasible-first, then smaller violation wins)
    """
    g = np.atleast_1d(np.asarray(g, dtype=float))
    if mode == "tanh":
        if g.size == 0:
            return 1.0
        return float(np.min(1.0 - np.tanh(np.maximum(g, 0.0))))
    if mode == "mean_maxcci":
        if g.size == 0:
            return 1.0
        if params is None or len(params) != g.size:
            raise ValueError("mean_maxcci requires one calibration triple per constraint")
        return float(np.mean([max_cci_level(float(gj), pj, grid)
                              for gj, pj in zip(g, params)]))
    if mode == "cv":
        total = float(np.maximum(g, 0.0).sum()) if g.size else 0.0
        return 1.0 if total == 0.0 else -total
    raise ConstraintModeError(f"unknown constraint mode: {mode!r}")


def baseline_levels(G: np.ndarray, mode: str, params: list[CCIParams] | None = None,
                    grid: LevelGrid = LevelGrid()) -> np.ndarray:
    """Row-wise baseline levels for a (n, J) constraint matrix."""
    G = np.asarray(G, dtype=float)
    if G.ndim != 2:
        raise ValueError("expected a (n, J) constraint matrix")
    n, j = G.shape
    if mode == "tanh":
        if j == 0:
            return np.ones(n)
        return np.min(1.0 - np.tanh(np.maximum(G, 0.0)), axis=1)
    if mode == "mean_maxcci":
        if j == 0:
            return np.ones(n)
        per = np.stack([max_cci_levels(G[:, jj], params[jj], grid) for jj in range(j)])
        return per.mean(axis=0)
    if mode == "cv":
        total = np.maximum(G, 0.0).sum(axis=1) if j else np.zeros(n)
        return np.where(total == 0.0, 1.0, -total)
    raise ConstraintModeError(f"unknown constraint mode: {mode!r}")


def level_fn_for_mode(mode: str, params: list[CCIParams] | None,
                      grid: LevelGrid):
    """Level function G -> (n,) for the configured constraint mode."""
    if mode == "mmcci":
        return lambda G: mm_cci_levels(G, params, grid)
    if mode in BASELINE_MODES:
        return lambda G: baseline_levels(G, mode, params, grid)
    raise ConstraintModeError(f"unknown constraint mode: {mode!r}")
