"""Surrogate-assisted constrained multi-objective optimization with learned
region guidance: calibrated constraint levels, diffusion warm-starts, an
attention state encoder, a Double-DQN region policy and a GP-backed NSGA-II
inner loop under a strict evaluation budget."""

__version__ = "0.1.0"
