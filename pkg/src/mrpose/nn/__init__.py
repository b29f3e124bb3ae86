"""Dense NCHW tensors, reverse-mode differentiation, layers and Adam."""

from .functional import (
    add,
    add_n,
    batch_norm,
    conv2d,
    conv_transpose2d,
    max_pool2d,
    relu,
    scale,
    total,
)
from .gradcheck import finite_diff_check
from .layers import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    LayerSpec,
    MaxPool2d,
    Module,
    ReLU,
    Sequential,
    trace_layers,
)
from .optim import Adam, adam_step
from .tensor import Parameter, ShapeError, Tensor, set_debug_finite, zero_grads

__all__ = [
    "Adam", "BatchNorm2d", "Conv2d", "ConvTranspose2d", "LayerSpec", "MaxPool2d", "Module",
    "Parameter", "ReLU", "Sequential", "ShapeError", "Tensor", "adam_step", "add", "add_n",
    "batch_norm", "conv2d", "conv_transpose2d", "finite_diff_check", "max_pool2d", "relu",
    "scale", "set_debug_finite", "total", "trace_layers", "zero_grads",
]
