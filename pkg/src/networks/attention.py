"""
Contamination attention detector.

A small U-Net over concat(frame RGB, flow / width) with a sigmoid head. The
same weights serve A_t = net(I_t, F_{t->k}) and A_k = net(I_k, F_{k->t}).
"""

from typing import Sequence, Union

import numpy as np

from src.autodiff import functional as F
from src.autodiff.module import Module
from src.autodiff.tensor import DiffTensor
from src.networks.layers import Conv2d, ConvBlock
from src.utils.errors import ShapeMismatchError
from src.utils.tensors import ensure_tensor


class AttentionNet(Module):
    """U-Net, three down/up levels; output resolution equals input resolution."""

    def __init__(self, rng: np.random.Generator, channels: Sequence[int] = (16, 32, 64)):
        c1, c2, c3 = channels
        self.inc = ConvBlock(5, c1, rng)
        self.down1 = ConvBlock(c1, c2, rng, stride=2)
        self.down2 = ConvBlock(c2, c3, rng, stride=2)
        self.down3 = ConvBlock(c3, c3, rng, stride=2)
        self.up3 = ConvBlock(c3 + c3, c2, rng)
        self.up2 = ConvBlock(c2 + c2, c1, rng)
        self.up1 = ConvBlock(c1 + c1, c1, rng)
        self.head = Conv2d(c1, 1, rng, kernel=1)

    def logits(self, x: DiffTensor) -> DiffTensor:
        e1 = self.inc(x)
        e2 = self.down1(e1)
        e3 = self.down2(e2)
        b = self.down3(e3)
        d3 = self.up3(F.concat_channels([F.resize_bilinear(b, e3.shape[2:]), e3]))
        d2 = self.up2(F.concat_channels([F.resize_bilinear(d3, e2.shape[2:]), e2]))
        d1 = self.up1(F.concat_channels([F.resize_bilinear(d2, e1.shape[2:]), e1]))
        return self.head(d1)

    def forward(self, image: DiffTensor, flow: DiffTensor) -> DiffTensor:
        width = image.shape[3]
        x = F.concat_channels([image, F.mul(flow, 1.0 / width)])
        return F.sigmoid(self.logits(x))


def detect_attention(
    net: AttentionNet,
    image: Union[DiffTensor, np.ndarray],
    flow: Union[DiffTensor, np.ndarray],
) -> DiffTensor:
    """
    Soft contamination map A in [0, 1], shape (N, 1, H, W).

    ``image`` / ``flow`` are (N, 3, H, W) / (N, 2, H, W) tensors or H×W×3 /
    H×W×2 arrays.
    """
    image = ensure_tensor(image)
    flow = ensure_tensor(flow)
    if image.shape[1] != 3 or flow.shape[1] != 2:
        raise ShapeMismatchError(f"detect_attention: expected 3-channel frame and 2-channel flow, got {image.shape} and {flow.shape}")
    if image.shape[0] != flow.shape[0] or image.shape[2:] != flow.shape[2:]:
        raise ShapeMismatchError(f"detect_attention: frame {image.shape} and flow {flow.shape} differ in resolution")
    return net(image, flow)
