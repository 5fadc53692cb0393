"""Minimal reverse-mode autodiff and the layers built on it.

`tensor` holds the tape and primitive ops; `layers` the parameterized
modules; `optim` SGD and Adam; `gradcheck` finite-difference
verification; `checkpoint` the binary parameter format.
"""

from .tensor import (
    Tensor,
    as_tensor,
    add,
    sub,
    mul,
    matmul,
    tanh,
    sigmoid,
    relu,
    exp,
    log,
    sum_,
    mean,
    reshape,
    transpose,
    swapaxes,
    flip_time,
    concat,
    stack,
    softmax,
    cross_entropy,
    dropout,
    conv2d,
    maxpool2d,
    lstm_sequence,
)
from .layers import (
    Module,
    Dense,
    Dropout,
    LstmCell,
    Lstm,
    Bilstm,
    Attention,
    Conv2d,
    MaxPool2d,
    ResidualBlock,
    xavier_uniform,
    lstm_cell_step,
    bilstm_forward,
    attention_forward,
    residual_block_forward,
    global_average_pool,
)
from .optim import Sgd, Adam
from .gradcheck import (
    GradCheckResult,
    GradCheckReport,
    gradient_check,
    standard_suite,
)
from .checkpoint import (
    ASVM_MAGIC,
    ASVM_VERSION,
    CheckpointError,
    CheckpointMismatchError,
    OptimizerSnapshot,
    pack_checkpoint,
    unpack_checkpoint,
    save_checkpoint,
    load_checkpoint,
    load_into,
    restore_optimizer,
)

__all__ = [
    "Tensor", "as_tensor", "add", "sub", "mul", "matmul", "tanh", "sigmoid",
    "relu", "exp", "log", "sum_", "mean", "reshape", "transpose", "swapaxes",
    "flip_time", "concat", "stack", "softmax", "cross_entropy", "dropout",
    "conv2d", "maxpool2d", "lstm_sequence",
    "Module", "Dense", "Dropout", "LstmCell", "Lstm", "Bilstm", "Attention",
    "Conv2d", "MaxPool2d", "ResidualBlock", "xavier_uniform",
    "lstm_cell_step", "bilstm_forward", "attention_forward",
    "residual_block_forward", "global_average_pool",
    "Sgd", "Adam",
    "GradCheckResult", "GradCheckReport", "gradient_check", "standard_suite",
    "ASVM_MAGIC", "ASVM_VERSION", "CheckpointError", "CheckpointMismatchError",
    "OptimizerSnapshot", "pack_checkpoint", "unpack_checkpoint",
    "save_checkpoint", "load_checkpoint", "load_into", "restore_optimizer",
]
