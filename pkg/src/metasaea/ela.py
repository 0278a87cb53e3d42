"""Attention-based encoding of the evaluated archive into a fixed-length state.

The archive's objective values are min-max normalized per objective and paired
with the region levels, giving an (M, N, 2) tensor. Pairs are embedded with a
2 -> h linear map, one attention block mixes information across the population
axis, the tensor is transposed, sinusoidal position codes are added over the
objective axis, a second attention block mixes across objectives, and mean
pooling over both axes yields an h-vector. The budget fraction appended at the
end makes the policy input h+1 long. Decision variables are deliberately not
part of the input, which keeps the encoding scale-free across problems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import neurocompute as nc


@dataclass(frozen=True)
class ELAConfig:
    hidden: int = 16
    heads: int = 1
    ff_mult: int = 4

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ValueError("hidden dim must be divisible by head count")


@dataclass
class StateVector:
    """Meta-policy input: h-dim archive embedding plus the budget fraction.

    The raw archive snapshot (objectives, levels) travels along so the
    embedding can be recomputed under updated encoder parameters during
    training; it is absent for states restored from external sources.
    """

    embedding: np.ndarray | None
    budget_fraction: float
    objectives: np.ndarray | None = None
    levels: np.ndarray | None = None

    def vector(self) -> np.ndarray:
        if self.embedding is None:
            raise ValueError("state has no embedding; encode it with a policy first")
        return np.concatenate([self.embedding, [self.budget_fraction]])


def build_input_tensor(Y: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Pair min-max normalized objectives with levels: shape (M, N, 2).

    A degenerate objective column (max == min) normalizes to constant 0.5.
    """
    Y = np.asarray(Y, dtype=float)
    levels = np.asarray(levels, dtype=float)
    if Y.ndim != 2 or Y.shape[0] == 0:
        raise ValueError("archive must contain at least one evaluated solution")
    n, m = Y.shape
    if levels.shape != (n,):
        raise ValueError("levels must align with the archive rows")
    return _build_input_batch(Y[None], levels[None])[0]


def _build_input_batch(Ys: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Stacked variant: (B, N, M) objectives + (B, N) levels -> (B, M, N, 2)."""
    lo = Ys.min(axis=1, keepdims=True)
    hi = Ys.max(axis=1, keepdims=True)
    span = hi - lo
    normalized = np.where(span > 0, (Ys - lo) / np.where(span > 0, span, 1.0), 0.5)
    b, n, m = Ys.shape
    out = np.empty((b, m, n, 2))
    out[:, :, :, 0] = normalized.transpose(0, 2, 1)
    out[:, :, :, 1] = levels[:, None, :]
    return out


class StateEncoder:
    """Two-block attention encoder over the evaluated archive."""

    PARAM_PREFIX = "ela"

    def __init__(self, config: ELAConfig, rng: np.random.Generator,
                 params: nc.ParameterSet | None = None):
        self.config = config
        self.params = params if params is not None else nc.ParameterSet()
        h = config.hidden
        self.w_emb = self.params.add(f"{self.PARAM_PREFIX}.w_emb",
                                     nc.xavier_uniform(rng, 2, h, (2, h)))
        self.attn_pop = nc.AttentionBlock(self.params, f"{self.PARAM_PREFIX}.attn_pop",
                                          h, config.heads, rng, config.ff_mult)
        self.attn_obj = nc.AttentionBlock(self.params, f"{self.PARAM_PREFIX}.attn_obj",
                                          h, config.heads, rng, config.ff_mult)

    def embed_graph_batch(self, Ys: np.ndarray, levels: np.ndarray) -> nc.Tensor:
        """Differentiable embeddings for a stack of same-shape snapshots.

        Ys is (B, N, M) with levels (B, N); returns a (B, h) tensor. Batching
        same-shape snapshots lets one training update share a single graph.
        """
        Ys = np.asarray(Ys, dtype=float)
        levels = np.asarray(levels, dtype=float)
        if Ys.ndim != 3 or Ys.shape[1] == 0:
            raise ValueError("expected a (B, N, M) stack of nonempty archives")
        pairs = _build_input_batch(Ys, levels)                 # (B, M, N, 2)
        m = pairs.shape[1]
        x = nc.matmul(nc.constant(pairs), self.w_emb)          # (B, M, N, h)
        x = self.attn_pop(x)                                   # attend across N
        x = nc.transpose(x, (0, 2, 1, 3))                      # (B, N, M, h)
        pe = nc.sinusoidal_table(m, self.config.hidden)
        x = nc.add(x, nc.constant(pe))                         # position over objectives
        x = self.attn_obj(x)                                   # attend across M
        pooled = nc.mean(x, axis=1)                            # pool N -> (B, M, h)
        return nc.mean(pooled, axis=1)                         # pool M -> (B, h)

    def embed_graph(self, Y: np.ndarray, levels: np.ndarray) -> nc.Tensor:
        """Differentiable h-dim embedding of one archive snapshot."""
        Y = np.asarray(Y, dtype=float)
        levels = np.asarray(levels, dtype=float)
        if Y.ndim != 2 or Y.shape[0] == 0:
            raise ValueError("archive must contain at least one evaluated solution")
        if levels.shape != (Y.shape[0],):
            raise ValueError("levels must align with the archive rows")
        out = self.embed_graph_batch(Y[None], levels[None])
        return nc.reshape(out, (self.config.hidden,))

    def encode(self, Y: np.ndarray, levels: np.ndarray,
               evals_used: int, fe_max: int) -> StateVector:
        """Non-differentiable encoding used while acting."""
        if evals_used > fe_max:
            raise ValueError("evaluation counter exceeds the budget")
        with nc.no_grad():
            emb = self.embed_graph(Y, levels).data
        if not np.all(np.isfinite(emb)):
            raise FloatingPointError("non-finite state embedding")
        return StateVector(
            embedding=emb,
            budget_fraction=evals_used / fe_max,
            objectives=np.array(Y, dtype=float, copy=True),
            levels=np.array(levels, dtype=float, copy=True),
        )
