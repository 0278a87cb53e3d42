"""Network building blocks on top of the autodiff tensor engine."""

from __future__ import annotations

import numpy as np

from . import tensor as tz
from .tensor import Tensor


class ParameterSet:
    """Named parameter tensors with paired gradient buffers."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name: {name}")
        p = tz.parameter(data)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self):
        for p in self._params.values():
            p.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]):
        for name, p in self._params.items():
            src = np.asarray(arrays[name], dtype=np.float64)
            if src.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {src.shape} vs {p.data.shape}")
            p.data = src.copy()

    def clone(self) -> "ParameterSet":
        out = ParameterSet()
        for name, p in self._params.items():
            out.add(name, p.data)
        return out


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    """Affine map on the trailing axis; bias optional."""

    def __init__(self, params: ParameterSet, prefix: str, n_in: int, n_out: int,
                 rng: np.random.Generator, bias: bool = True):
        self.w = params.add(f"{prefix}.w", xavier_uniform(rng, n_in, n_out, (n_in, n_out)))
        self.b = params.add(f"{prefix}.b", np.zeros(n_out)) if bias else None

    def __call__(self, x) -> Tensor:
        out = tz.matmul(x, self.w)
        if self.b is not None:
            out = tz.add(out, self.b)
        return out


class LayerNorm:
    def __init__(self, params: ParameterSet, prefix: str, dim: int, eps: float = 1e-5):
        self.gain = params.add(f"{prefix}.gain", np.ones(dim))
        self.bias = params.add(f"{prefix}.bias", np.zeros(dim))
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return tz.layer_norm(x, self.gain, self.bias, eps=self.eps)


def attention(q, k, v, heads: int = 1, out_proj: Linear | None = None) -> Tensor:
    """Scaled dot-product attention over the second-to-last axis.

    Inputs are (..., N, h) stacks with h divisible by `heads`; each head computes
    softmax(QK^T / sqrt(h/heads)) V, heads are concatenated and optionally
    passed through a final linear projection.
    """
    q, k, v = (x if isinstance(x, Tensor) else tz.constant(x) for x in (q, k, v))
    h = q.shape[-1]
    if h % heads != 0:
        raise tz.GraphError(f"feature dim {h} not divisible by {heads} heads")
    if k.shape[-2] != v.shape[-2]:
        raise tz.GraphError("attention row counts must match")
    if k.shape[-1] != h or v.shape[-1] != h:
        raise tz.GraphError("attention feature dims must match")
    d_head = h // heads
    lead = q.shape[:-2]
    n = q.shape[-2]

    if heads == 1:
        # Single-head path skips the head split/merge reshuffling; scaling Q
        # instead of the N x N score matrix is equivalent and cheaper.
        kt_perm = tuple(range(len(lead))) + (len(lead) + 1, len(lead))
        scores = tz.matmul(tz.scale(q, 1.0 / np.sqrt(d_head)), tz.transpose(k, kt_perm))
        ctx = tz.matmul(tz.softmax(scores, axis=-1), v)
    else:
        def split(x):
            x = tz.reshape(x, lead + (n, heads, d_head))
            perm = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
            return tz.transpose(x, perm)  # (..., heads, N, d_head)

        qh, kh, vh = split(q), split(k), split(v)
        kt_perm = tuple(range(len(lead))) + (len(lead), len(lead) + 2, len(lead) + 1)
        scores = tz.matmul(tz.scale(qh, 1.0 / np.sqrt(d_head)), tz.transpose(kh, kt_perm))
        weights = tz.softmax(scores, axis=-1)
        ctx = tz.matmul(weights, vh)  # (..., heads, N, d_head)
        perm_back = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
        ctx = tz.transpose(ctx, perm_back)
        ctx = tz.reshape(ctx, lead + (n, h))
    if out_proj is not None:
        ctx = out_proj(ctx)
    return ctx


class MultiHeadSelfAttention:
    def __init__(self, params: ParameterSet, prefix: str, dim: int, heads: int,
                 rng: np.random.Generator):
        if dim % heads != 0:
            raise ValueError("hidden dim must be divisible by head count")
        self.heads = heads
        self.wq = Linear(params, f"{prefix}.wq", dim, dim, rng)
        self.wk = Linear(params, f"{prefix}.wk", dim, dim, rng)
        self.wv = Linear(params, f"{prefix}.wv", dim, dim, rng)
        self.wo = Linear(params, f"{prefix}.wo", dim, dim, rng)

    def __call__(self, x) -> Tensor:
        return attention(self.wq(x), self.wk(x), self.wv(x), self.heads, self.wo)


class AttentionBlock:
    """Self-attention block: residual + layer norm, then a ReLU feed-forward."""

    def __init__(self, params: ParameterSet, prefix: str, dim: int, heads: int,
                 rng: np.random.Generator, ff_mult: int = 4):
        self.mhsa = MultiHeadSelfAttention(params, f"{prefix}.mhsa", dim, heads, rng)
        self.ln1 = LayerNorm(params, f"{prefix}.ln1", dim)
        self.ff1 = Linear(params, f"{prefix}.ff1", dim, ff_mult * dim, rng)
        self.ff2 = Linear(params, f"{prefix}.ff2", ff_mult * dim, dim, rng)
        self.ln2 = LayerNorm(params, f"{prefix}.ln2", dim)

    def __call__(self, x) -> Tensor:
        g = self.ln1(tz.add(x, self.mhsa(x)))
        v = self.ff2(tz.relu(self.ff1(g)))
        return self.ln2(tz.add(g, v))


class MLP:
    """Stack of linear layers with ReLU between them (none after the last)."""

    def __init__(self, params: ParameterSet, prefix: str, dims: list[int],
                 rng: np.random.Generator):
        self.layers = [
            Linear(params, f"{prefix}.l{i}", dims[i], dims[i + 1], rng)
            for i in range(len(dims) - 1)
        ]

    def __call__(self, x) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = tz.relu(x)
        return x


def sinusoidal_encoding(position: int, dim: int) -> np.ndarray:
    """Interleaved sin/cos encoding with wavelength base 10000."""
    if dim % 2 != 0:
        raise ValueError("encoding dim must be even")
    i = np.arange(dim // 2)
    freq = 1.0 / (10000.0 ** (2.0 * i / dim))
    out = np.empty(dim)
    out[0::2] = np.sin(position * freq)
    out[1::2] = np.cos(position * freq)
    return out


def sinusoidal_table(n_positions: int, dim: int) -> np.ndarray:
    return np.stack([sinusoidal_encoding(p, dim) for p in range(n_positions)])
