"""Minimal reverse-mode autodiff over rank-4 tensors."""

from semedge.kernel.layers import BlockParams, Conv2d, ResidualBlock, param_rng, residual_block
from semedge.kernel.ops import (
    add,
    bilinear_kernel,
    concat_channels,
    conv2d,
    conv_output_size,
    conv_transpose2d,
    relu,
    sigmoid,
    stable_sigmoid,
    upsample_bilinear,
)
from semedge.kernel.optim import SGD, step_lr
from semedge.kernel.tensor import DTYPE, Parameter, Tape, Tensor

__all__ = [
    "DTYPE", "Parameter", "Tape", "Tensor", "SGD", "step_lr",
    "BlockParams", "Conv2d", "ResidualBlock", "param_rng", "residual_block",
    "add", "bilinear_kernel", "concat_channels", "conv2d", "conv_output_size", "conv_transpose2d",
    "relu", "sigmoid", "stable_sigmoid", "upsample_bilinear",
]
