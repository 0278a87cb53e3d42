"""Denoising diffusion model for region-conditioned population warm-starts.

Each cycle a fresh model is trained on the decision vectors of the selected
region (normalized to [-1, 1] via the box bounds) and ancestral sampling
produces the initial population for the inner evolutionary loop. The noise
predictor is a small MLP taking the noisy point concatenated with a sinusoidal
step embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import neurocompute as nc


@dataclass(frozen=True)
class DiffusionConfig:
    steps: int = 50
    # The endpoint is chosen so the forward process essentially reaches the
    # standard-normal prior within `steps` (cumulative alpha < 0.05).
    beta_start: float = 1e-4
    beta_end: float = 0.15
    epochs: int = 200
    batch_size: int = 16
    hidden: int = 64
    time_dim: int = 32
    lr: float = 1e-3

    def __post_init__(self):
        if not (0.0 < self.beta_start < self.beta_end < 1.0):
            raise ValueError("need 0 < beta_start < beta_end < 1")
        if self.steps < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("steps, epochs and batch size must be positive")


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta schedule with cached per-step and cumulative coefficients."""

    betas: np.ndarray

    @classmethod
    def linear(cls, steps: int, beta_start: float, beta_end: float) -> "NoiseSchedule":
        return cls(betas=np.linspace(beta_start, beta_end, steps))

    @classmethod
    def from_config(cls, config: DiffusionConfig) -> "NoiseSchedule":
        return cls.linear(config.steps, config.beta_start, config.beta_end)

    @property
    def steps(self) -> int:
        return len(self.betas)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    def alpha_bar_prev(self, t: int) -> float:
        """Cumulative alpha one step earlier, with the convention abar_0 = 1."""
        return 1.0 if t == 1 else float(self.alpha_bars[t - 2])

    def sigma(self, t: int) -> float:
        abar_t = float(self.alpha_bars[t - 1])
        beta_t = float(self.betas[t - 1])
        return float(np.sqrt((1.0 - self.alpha_bar_prev(t)) / (1.0 - abar_t) * beta_t))


def normalize(X: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Map box-bounded points to [-1, 1] per coordinate."""
    return 2.0 * (X - lower) / (upper - lower) - 1.0


def denormalize(X: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    return lower + (X + 1.0) / 2.0 * (upper - lower)


class Denoiser:
    """Noise-prediction MLP: (x_t, step embedding) -> predicted noise."""

    def __init__(self, d: int, config: DiffusionConfig, rng: np.random.Generator):
        self.d = d
        self.config = config
        self.params = nc.ParameterSet()
        self.net = nc.MLP(self.params, "eps",
                          [d + config.time_dim, config.hidden, config.hidden, d], rng)
        # Step embeddings for t = 0..steps (row t used for diffusion step t).
        self.time_table = nc.sinusoidal_table(config.steps + 1, config.time_dim)

    def inputs(self, x_t: np.ndarray, t: np.ndarray | int) -> np.ndarray:
        x_t = np.atleast_2d(np.asarray(x_t, dtype=float))
        t_arr = np.full(len(x_t), t, dtype=int) if np.isscalar(t) else np.asarray(t, dtype=int)
        return np.concatenate([x_t, self.time_table[t_arr]], axis=1)

    def forward_graph(self, x_t: np.ndarray, t) -> nc.Tensor:
        return self.net(nc.constant(self.inputs(x_t, t)))

    def predict(self, x_t: np.ndarray, t) -> np.ndarray:
        with nc.no_grad():
            return self.forward_graph(x_t, t).data


def forward_marginal(x0: np.ndarray, t: int, eps: np.ndarray,
                     schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form noising: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    if not 1 <= t <= schedule.steps:
        raise ValueError(f"step must lie in [1, {schedule.steps}]")
    abar = schedule.alpha_bars[t - 1]
    return np.sqrt(abar) * np.asarray(x0, dtype=float) + np.sqrt(1.0 - abar) * np.asarray(eps, dtype=float)


def ddpm_loss(batch_x0: np.ndarray, denoiser: Denoiser, schedule: NoiseSchedule,
              rng: np.random.Generator) -> nc.Tensor:
    """Mean over the batch of the squared noise-prediction error.

    Steps are drawn uniformly from {1..T} and noise from N(0, I); the squared
    norm is summed over coordinates, so a zero predictor scores about d.
    """
    batch_x0 = np.atleast_2d(np.asarray(batch_x0, dtype=float))
    if batch_x0.shape[0] == 0:
        raise ValueError("empty training batch")
    n = batch_x0.shape[0]
    t = rng.integers(1, schedule.steps + 1, size=n)
    eps = rng.standard_normal(batch_x0.shape)
    abar = schedule.alpha_bars[t - 1][:, None]
    x_t = np.sqrt(abar) * batch_x0 + np.sqrt(1.0 - abar) * eps
    pred = denoiser.forward_graph(x_t, t)
    diff = nc.sub(pred, nc.constant(eps))
    return nc.scale(nc.sum_all(nc.mul(diff, diff)), 1.0 / n)


def train(data: np.ndarray, config: DiffusionConfig,
          rng: np.random.Generator) -> tuple[Denoiser, list[float]]:
    """Train a freshly initialized denoiser on normalized region data.

    Returns the model and the per-epoch mean losses. Parameters are
    re-initialized every call: region membership changes discontinuously
    between cycles, so warm-starting would carry a stale distribution.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] == 0:
        raise ValueError("cannot train the denoiser on an empty region")
    schedule = NoiseSchedule.from_config(config)
    denoiser = Denoiser(data.shape[1], config, rng)
    adam = nc.adam_init(denoiser.params, config.lr)
    epoch_losses: list[float] = []
    n = data.shape[0]
    for _ in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            batch = data[order[start:start + config.batch_size]]
            denoiser.params.zero_grads()
            loss = ddpm_loss(batch, denoiser, schedule, rng)
            nc.backward(loss)
            nc.adam_step(denoiser.params, adam)
            losses.append(loss.item())
        epoch_losses.append(float(np.mean(losses)))
    return denoiser, epoch_losses


def sample(denoiser: Denoiser, n: int, lower: np.ndarray, upper: np.ndarray,
           rng: np.random.Generator, schedule: NoiseSchedule | None = None) -> np.ndarray:
    """Ancestral sampling from the learned region distribution.

    Runs the reverse chain from N(0, I) with variance (1-abar_{t-1})/(1-abar_t)
    * beta_t and no noise at the final step, then denormalizes and clips the
    samples into the box bounds.
    """
    if schedule is None:
        schedule = NoiseSchedule.from_config(denoiser.config)
    x = rng.standard_normal((n, denoiser.d))
    alphas = schedule.alphas
    abars = schedule.alpha_bars
    for t in range(schedule.steps, 0, -1):
        pred = denoiser.predict(x, t)
        coef = (1.0 - alphas[t - 1]) / np.sqrt(1.0 - abars[t - 1])
        x = (x - coef * pred) / np.sqrt(alphas[t - 1])
        if t > 1:
            x = x + schedule.sigma(t) * rng.standard_normal((n, denoiser.d))
    raw = denormalize(x, lower, upper)
    return np.clip(raw, lower, upper)
