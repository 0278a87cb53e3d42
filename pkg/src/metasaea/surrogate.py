"""Gaussian-process surrogates for objectives and constraints.

One independent GP per output, squared-exponential kernel with an isotropic
lengthscale, constant-mean centering and a small noise floor. Hyperparameters
come from a coarse log-marginal-likelihood grid: five lengthscales scaled by
sqrt(d) and three noise levels, with the signal variance pinned to the target
variance. At archive sizes of a few hundred points this is cheaper and more
robust than gradient-based marginal-likelihood optimization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .mmcci import CCIParams, LevelGrid, level_fn_for_mode

LENGTHSCALE_FACTORS = (0.05, 0.1, 0.2, 0.5, 1.0)
NOISE_LEVELS = (1e-6, 1e-4, 1e-2)


class GPFitError(RuntimeError):
    """Kernel matrix stayed singular through the escalating-jitter retries."""


@dataclass(frozen=True)
class GPModel:
    """Fitted GP: training data, kernel hyperparameters and cached Cholesky."""

    X: np.ndarray
    y: np.ndarray
    mean: float
    signal_var: float
    lengthscale: float
    noise_var: float
    chol: np.ndarray
    alpha: np.ndarray
    log_marginal: float


def _sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    a2 = np.sum(A * A, axis=1)[:, None]
    b2 = np.sum(B * B, axis=1)[None, :]
    d2 = a2 + b2 - 2.0 * A @ B.T
    return np.maximum(d2, 0.0)


def _kernel(d2: np.ndarray, signal_var: float, lengthscale: float) -> np.ndarray:
    return signal_var * np.exp(-0.5 * d2 / lengthscale**2)


def _chol_with_jitter(K: np.ndarray, scale: float) -> tuple[np.ndarray, float]:
    jitter = 0.0
    for _ in range(10):
        try:
            L = cholesky(K + jitter * np.eye(len(K)), lower=True, check_finite=False)
            return L, jitter
        except np.linalg.LinAlgError:
            jitter = max(jitter * 10.0, 1e-10 * max(scale, 1.0))
    raise GPFitError("kernel matrix is singular even with maximum jitter")


def fit(X: np.ndarray, y: np.ndarray, _d2: np.ndarray | None = None) -> GPModel:
    """Fit one GP to inputs in [0, 1]^d via the marginal-likelihood grid."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least two training points")
    if y.shape != (n,):
        raise ValueError("targets must align with the inputs")
    mean = float(y.mean())
    yc = y - mean
    signal_var = max(float(yc.var()), 1e-12)
    d2 = _sq_dists(X, X) if _d2 is None else _d2

    best: GPModel | None = None
    for factor in LENGTHSCALE_FACTORS:
        lengthscale = factor * np.sqrt(d)
        K_unit = _kernel(d2, signal_var, lengthscale)
        for noise_var in NOISE_LEVELS:
            K = K_unit + noise_var * np.eye(n)
            try:
                L, _ = _chol_with_jitter(K, signal_var)
            except GPFitError:
                continue
            alpha = cho_solve((L, True), yc, check_finite=False)
            lml = float(-0.5 * yc @ alpha - np.log(np.diag(L)).sum()
                        - 0.5 * n * np.log(2.0 * np.pi))
            if best is None or lml > best.log_marginal:
                best = GPModel(X=X, y=y, mean=mean, signal_var=signal_var,
                               lengthscale=lengthscale, noise_var=noise_var,
                               chol=L, alpha=alpha, log_marginal=lml)
    if best is None:
        raise GPFitError("all hyperparameter candidates failed to factorize")
    return best


def predict_mean(model: GPModel, Xq: np.ndarray) -> np.ndarray:
    """Posterior mean at query points; deterministic."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    k_star = _kernel(_sq_dists(Xq, model.X), model.signal_var, model.lengthscale)
    return model.mean + k_star @ model.alpha


def predict_variance(model: GPModel, Xq: np.ndarray) -> np.ndarray:
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    k_star = _kernel(_sq_dists(Xq, model.X), model.signal_var, model.lengthscale)
    v = solve_triangular(model.chol, k_star.T, lower=True, check_finite=False)
    return np.maximum(model.signal_var - np.sum(v * v, axis=0), 0.0)


def predicted_level(models_g: Sequence[GPModel], X: np.ndarray,
                    cci_params: Sequence[CCIParams],
                    grid: LevelGrid = LevelGrid()) -> np.ndarray:
    """Region levels computed on surrogate-predicted constraint values.

    Uses the same calibration triples and grid as the real evaluations, so the
    quantized output is robust to small prediction perturbations that do not
    cross a grid boundary.
    """
    from .mmcci import mm_cci_levels

    X = np.atleast_2d(np.asarray(X, dtype=float))
    if len(models_g) == 0:
        return np.ones(len(X))
    G_pred = np.column_stack([predict_mean(m, X) for m in models_g])
    return mm_cci_levels(G_pred, list(cci_params), grid)


class SurrogateBundle:
    """Fitted surrogates plus the level rule used inside the inner loop."""

    def __init__(self, lower: np.ndarray, upper: np.ndarray,
                 objective_models: list[GPModel], constraint_models: list[GPModel],
                 level_fn: Callable[[np.ndarray], np.ndarray]):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.objective_models = objective_models
        self.constraint_models = constraint_models
        self.level_fn = level_fn

    @classmethod
    def fit_from_archive(cls, lower: np.ndarray, upper: np.ndarray,
                         X: np.ndarray, Y: np.ndarray, G: np.ndarray,
                         constraint_mode: str = "mmcci",
                         cci_params: Sequence[CCIParams] | None = None,
                         grid: LevelGrid = LevelGrid()) -> "SurrogateBundle":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        Xn = (np.asarray(X, dtype=float) - lower) / (upper - lower)
        d2 = _sq_dists(Xn, Xn)  # shared across the per-output fits
        objective_models = [fit(Xn, Y[:, m], _d2=d2) for m in range(Y.shape[1])]
        constraint_models = [fit(Xn, G[:, j], _d2=d2) for j in range(G.shape[1])]
        params = list(cci_params) if cci_params is not None else None
        level_fn = level_fn_for_mode(constraint_mode, params, grid)
        return cls(lower, upper, objective_models, constraint_models, level_fn)

    def normalize(self, X: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(np.asarray(X, dtype=float)) - self.lower) / (self.upper - self.lower)

    def predict(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Predicted objectives (n, M) and region levels (n,) at raw-space points."""
        Xn = self.normalize(X)
        Y = np.column_stack([predict_mean(m, Xn) for m in self.objective_models])
        if self.constraint_models:
            G = np.column_stack([predict_mean(m, Xn) for m in self.constraint_models])
            levels = self.level_fn(G)
        else:
            levels = np.ones(len(Xn))
        return Y, levels


class OracleBundle:
    """Exact-evaluation stand-in with the SurrogateBundle interface (tests)."""

    def __init__(self, problem, constraint_mode: str = "mmcci",
                 cci_params: Sequence[CCIParams] | None = None,
                 grid: LevelGrid = LevelGrid(), use_constraints: bool = True):
        self.lower = problem.lower
        self.upper = problem.upper
        self._problem = problem
        self._use_constraints = use_constraints and problem.j > 0
        params = list(cci_params) if cci_params is not None else None
        self._level_fn = level_fn_for_mode(constraint_mode, params, grid)

    def predict(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.array([self._problem.objective_fn(x) for x in X], dtype=float)
        if self._use_constraints:
            G = np.array([self._problem.constraint_fn(x) for x in X], dtype=float)
            levels = self._level_fn(G.reshape(len(X), -1))
        else:
            levels = np.ones(len(X))
        return Y, levels
