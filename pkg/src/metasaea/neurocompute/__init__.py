"""Differentiable compute layer shared by the encoder, denoiser and Q-networks."""

from .tensor import (
    GraphError,
    Tensor,
    add,
    backward,
    concat,
    constant,
    layer_norm,
    matmul,
    mean,
    mean_all,
    mse,
    mul,
    no_grad,
    parameter,
    relu,
    reshape,
    scale,
    softmax,
    stack,
    sub,
    sum_all,
    take_per_row,
    transpose,
)
from .layers import (
    AttentionBlock,
    Linear,
    LayerNorm,
    MLP,
    MultiHeadSelfAttention,
    ParameterSet,
    attention,
    sinusoidal_encoding,
    sinusoidal_table,
    xavier_uniform,
)
from .optim import AdamState, adam_init, adam_step
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__all__ = [
    "AdamState",
    "AttentionBlock",
    "CheckpointError",
    "GraphError",
    "Linear",
    "LayerNorm",
    "MLP",
    "MultiHeadSelfAttention",
    "ParameterSet",
    "Tensor",
    "adam_init",
    "adam_step",
    "add",
    "attention",
    "backward",
    "concat",
    "constant",
    "layer_norm",
    "load_checkpoint",
    "matmul",
    "mean",
    "mean_all",
    "mse",
    "mul",
    "no_grad",
    "parameter",
    "relu",
    "reshape",
    "save_checkpoint",
    "scale",
    "sinusoidal_encoding",
    "sinusoidal_table",
    "softmax",
    "stack",
    "sub",
    "sum_all",
    "take_per_row",
    "transpose",
    "xavier_uniform",
]
