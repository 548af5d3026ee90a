from .tensor import ShapeError, Tensor, as_tensor, zero_grads
from .ops import (
    ConvSpec,
    add,
    concat_channels,
    conv2d,
    mae_loss,
    relu,
    scale,
    split_channels,
    tanh,
    total,
    weighted_sum,
)
from .optim import AdamState, MissingGradientError, adam_step
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    "AdamState",
    "ConvSpec",
    "GradCheckReport",
    "MissingGradientError",
    "ShapeError",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "concat_channels",
    "conv2d",
    "grad_check",
    "mae_loss",
    "relu",
    "scale",
    "split_channels",
    "tanh",
    "total",
    "weighted_sum",
    "zero_grads",
]
