"""Dense-matrix reverse-mode differentiation, layers and optimizer."""
from .checkpoint import CheckpointError, load_checkpoint, read_meta, save_checkpoint
from .layers import BatchNorm, Linear, Module, set_sequence_step, xavier_init
from .optim import OptimState, adam_step, clip_grad_norm
from .tensor import (
    BatchNormState,
    ShapeError,
    Tape,
    Tensor,
    add,
    as_tensor,
    batchnorm,
    block_apply,
    concat,
    div,
    dropout,
    elu,
    exp,
    group_mean,
    log,
    matmul,
    mean,
    mse,
    mul,
    neg,
    repeat_rows,
    reshape,
    row_sum,
    scale,
    sigmoid,
    slice_cols,
    slice_rows,
    softplus,
    square,
    sub,
    sum_all,
    tanh,
)

__all__ = [
    "BatchNorm",
    "BatchNormState",
    "CheckpointError",
    "Linear",
    "Module",
    "OptimState",
    "ShapeError",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "batchnorm",
    "block_apply",
    "clip_grad_norm",
    "concat",
    "div",
    "dropout",
    "elu",
    "exp",
    "group_mean",
    "load_checkpoint",
    "log",
    "matmul",
    "mean",
    "mse",
    "mul",
    "neg",
    "read_meta",
    "repeat_rows",
    "reshape",
    "row_sum",
    "save_checkpoint",
    "scale",
    "set_sequence_step",
    "sigmoid",
    "slice_cols",
    "slice_rows",
    "softplus",
    "square",
    "sub",
    "sum_all",
    "tanh",
    "xavier_init",
]
