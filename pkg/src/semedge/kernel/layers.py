"""Parameterised building blocks: a conv layer and the residual block."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from semedge.errors import ConfigError
from semedge.kernel.ops import add, conv2d, relu
from semedge.kernel.tensor import DTYPE, Parameter, Tensor


def param_rng(seed: int, index: int) -> np.random.Generator:
    """Independent 64-bit PCG stream for the ``index``-th parameter tensor."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


class Conv2d:
    def __init__(self, name: str, in_ch: int, out_ch: int, kernel: int = 3, stride: int = 1,
                 dilation: int = 1, groups: int = 1, pad: int | None = None):
        if in_ch % groups or out_ch % groups:
            raise ConfigError(f"{name}: channels {in_ch}->{out_ch} not divisible by groups={groups}")
        self.name = name
        self.stride = stride
        self.dilation = dilation
        self.groups = groups
        # "same" padding for odd kernels
        self.pad = dilation * (kernel - 1) // 2 if pad is None else pad
        self.weight = Parameter(np.zeros((out_ch, in_ch // groups, kernel, kernel), DTYPE), f"{name}.weight")
        self.bias = Parameter(np.zeros((1, out_ch, 1, 1), DTYPE), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, dilation=self.dilation,
                      groups=self.groups, pad=self.pad)

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def init_he(self, rng: np.random.Generator) -> None:
        co, cig, kh, kw = self.weight.shape
        std = np.sqrt(2.0 / (cig * kh * kw))
        self.weight.data[...] = rng.standard_normal(self.weight.shape) * std
        self.bias.data[...] = 0

    def init_constant(self, value: float) -> None:
        self.weight.data[...] = value
        self.bias.data[...] = 0


@dataclass
class BlockParams:
    conv1: Conv2d
    conv2: Conv2d
    proj: Conv2d | None = None


def residual_block(x: Tensor, params: BlockParams, stride: int, dilation: int) -> Tensor:
    """relu(conv2(relu(conv1(x))) + shortcut(x)).

    ``stride`` and ``dilation`` must agree with how ``params`` was built;
    they are passed explicitly so a mismatch fails loudly.
    """
    if params.conv1.stride != stride or params.conv1.dilation != dilation:
        raise ConfigError("residual_block: stride/dilation disagree with block parameters")
    h = relu(params.conv1(x))
    h = params.conv2(h)
    shortcut = x if params.proj is None else params.proj(x)
    if shortcut.shape != h.shape:
        raise ConfigError(f"residual add mismatch: branch {h.shape} vs shortcut {shortcut.shape}")
    return relu(add(h, shortcut))


class ResidualBlock:
    """Two 3x3 convs plus identity or 1x1-projected shortcut; stride in conv1 and projection."""

    def __init__(self, name: str, in_ch: int, out_ch: int, stride: int = 1, dilation: int = 1):
        self.stride = stride
        self.dilation = dilation
        proj = None
        if stride != 1 or in_ch != out_ch:
            proj = Conv2d(f"{name}.proj", in_ch, out_ch, kernel=1, stride=stride, pad=0)
        self.params = BlockParams(
            conv1=Conv2d(f"{name}.conv1", in_ch, out_ch, stride=stride, dilation=dilation),
            conv2=Conv2d(f"{name}.conv2", out_ch, out_ch, dilation=dilation),
            proj=proj,
        )

    def __call__(self, x: Tensor) -> Tensor:
        return residual_block(x, self.params, self.stride, self.dilation)

    def convs(self) -> list[Conv2d]:
        p = self.params
        return [p.conv1, p.conv2] + ([p.proj] if p.proj is not None else [])
