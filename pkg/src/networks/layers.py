"""
Building blocks shared by the three networks.
"""

from typing import Optional

import numpy as np

from src.autodiff import functional as F
from src.autodiff.module import Module, Parameter
from src.autodiff.tensor import DiffTensor

LAYER_KINDS = ("fusion", "gated", "conv")


class Conv2d(Module):
    """3×3 (or k×k) convolution with "same" padding for stride 1; He-normal init."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        kernel: int = 3,
        stride: int = 1,
        dilation: int = 1,
        zero_init: bool = False,
    ):
        fan_in = in_channels * kernel * kernel
        if zero_init:
            w = np.zeros((out_channels, in_channels, kernel, kernel))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_channels, in_channels, kernel, kernel))
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_channels))
        self.stride = stride
        self.dilation = dilation
        self.padding = dilation * (kernel // 2)
        self.out_channels = out_channels

    def forward(self, x: DiffTensor) -> DiffTensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding, dilation=self.dilation)


class ConvBlock(Module):
    """Two conv + relu pairs; the first may downsample."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, stride: int = 1, dilation: int = 1):
        self.conv1 = Conv2d(in_channels, out_channels, rng, stride=stride, dilation=dilation)
        self.conv2 = Conv2d(out_channels, out_channels, rng, dilation=dilation)

    def forward(self, x: DiffTensor) -> DiffTensor:
        return F.relu(self.conv2(F.relu(self.conv1(x))))


class FusionLayer(Module):
    """
    Feature fusion layer.

        f_out = f_in ⊙ α + G_l(f_in) ⊙ (1 − α),   α = sigmoid(G_α(f_in))

    ``kind="gated"`` returns G_l(f_in) ⊙ α and ``kind="conv"`` returns G_l(f_in)
    alone; both exist for the completion-network ablation. When the layer
    changes channel count or resolution the pass-through goes through a 1×1
    adapter.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        stride: int = 1,
        dilation: int = 1,
        kind: str = "fusion",
    ):
        if kind not in LAYER_KINDS:
            raise ValueError(f"Unknown fusion layer kind '{kind}', expected one of {LAYER_KINDS}")
        self.kind = kind
        self.out_channels = out_channels
        self.hallucinate = ConvBlock(in_channels, out_channels, rng, stride=stride, dilation=dilation)
        self.gate: Optional[Conv2d] = None
        self.adapter: Optional[Conv2d] = None
        if kind != "conv":
            self.gate = Conv2d(in_channels, 1, rng, stride=stride, dilation=dilation)
        if kind == "fusion" and (in_channels != out_channels or stride != 1):
            self.adapter = Conv2d(in_channels, out_channels, rng, kernel=1, stride=stride)

    def alpha(self, x: DiffTensor) -> DiffTensor:
        return F.sigmoid(self.gate(x))

    def forward(self, x: DiffTensor) -> DiffTensor:
        g = self.hallucinate(x)
        if self.kind == "conv":
            return g
        a = F.expand_channels(self.alpha(x), self.out_channels)
        if self.kind == "gated":
            return F.mul(g, a)
        passthrough = self.adapter(x) if self.adapter is not None else x
        return F.add(F.mul(passthrough, a), F.mul(g, F.one_minus(a)))


class ConvGRUCell(Module):
    """
    Convolutional GRU with three independent 3×3 gate convolutions over [h, x]:

        z  = σ(W_z * [h, x])
        r  = σ(W_r * [h, x])
        h' = tanh(W_h * [r ⊙ h, x])
        h_new = (1 − z) ⊙ h + z ⊙ h'
    """

    def __init__(self, hidden_channels: int, input_channels: int, rng: np.random.Generator):
        total = hidden_channels + input_channels
        self.hidden_channels = hidden_channels
        self.update_gate = Conv2d(total, hidden_channels, rng)
        self.reset_gate = Conv2d(total, hidden_channels, rng)
        self.candidate = Conv2d(total, hidden_channels, rng)

    def forward(self, h: DiffTensor, x: DiffTensor) -> DiffTensor:
        hx = F.concat_channels([h, x])
        z = F.sigmoid(self.update_gate(hx))
        r = F.sigmoid(self.reset_gate(hx))
        candidate = F.tanh(self.candidate(F.concat_channels([F.mul(r, h), x])))
        return F.add(F.mul(F.one_minus(z), h), F.mul(z, candidate))
