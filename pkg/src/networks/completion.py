"""
Flow completion network.

Input: concat(flow / flow_norm, frame, attention), 6 channels.

    encoder     six fusion layers, stride 2 at layers 2, 4 and 6   -> 1/8
    bottleneck  four dilated fusion layers (dilations 2, 4, 8, 16)
    decoder     coarse flow at 1/8 (input flow, resized, plus a learned residual)
                bilinear x2 to 1/4 + refinement from the layer-4 skip
                two x2 convex-upsampling stages back to full resolution

The residual and mask heads start at zero, so an untrained network returns a
smoothed copy of its input flow.
"""

from typing import Sequence, Union

import numpy as np

from src.autodiff import functional as F
from src.autodiff.module import Module
from src.autodiff.tensor import DiffTensor
from src.networks.layers import Conv2d, FusionLayer
from src.utils.errors import ShapeMismatchError
from src.utils.tensors import ensure_tensor

STRIDE = 8
UPSAMPLERS = ("convex", "bilinear")


class FlowCompletionNet(Module):
    def __init__(
        self,
        rng: np.random.Generator,
        channels: Sequence[int] = (16, 32, 64),
        dilations: Sequence[int] = (2, 4, 8, 16),
        layer_kind: str = "fusion",
        upsampler: str = "convex",
        flow_norm: float = 8.0,
    ):
        if upsampler not in UPSAMPLERS:
            raise ValueError(f"Unknown upsampler '{upsampler}', expected one of {UPSAMPLERS}")
        c1, c2, c3 = channels
        self.layer_kind = layer_kind
        self.upsampler = upsampler
        self.flow_norm = float(flow_norm)
        self.encoder = [
            FusionLayer(6, c1, rng, kind=layer_kind),
            FusionLayer(c1, c1, rng, stride=2, kind=layer_kind),
            FusionLayer(c1, c2, rng, kind=layer_kind),
            FusionLayer(c2, c2, rng, stride=2, kind=layer_kind),
            FusionLayer(c2, c3, rng, kind=layer_kind),
            FusionLayer(c3, c3, rng, stride=2, kind=layer_kind),
        ]
        self.bottleneck = [FusionLayer(c3, c3, rng, dilation=d, kind=layer_kind) for d in dilations]
        self.coarse_head = Conv2d(c3, 2, rng, zero_init=True)
        self.refine4 = Conv2d(c3 + c2, c2, rng)
        self.refine4_head = Conv2d(c2, 2, rng, zero_init=True)
        if upsampler == "convex":
            self.mask4 = Conv2d(c2, 36, rng, zero_init=True)
            self.refine2 = Conv2d(c2 + c1, c1, rng)
            self.mask2 = Conv2d(c1, 36, rng, zero_init=True)

    def forward(self, flow: DiffTensor, image: DiffTensor, attention: DiffTensor) -> DiffTensor:
        h, w = flow.shape[2:]
        flow_n = F.mul(flow, 1.0 / self.flow_norm)
        x = F.concat_channels([flow_n, image, attention])
        skips = []
        for layer in self.encoder:
            x = layer(x)
            skips.append(x)
        for layer in self.bottleneck:
            x = layer(x)
        e2, e4 = skips[1], skips[3]

        h8, w8 = x.shape[2:]
        coarse = F.mul(F.resize_bilinear(flow_n, (h8, w8)), w8 / w)
        f8 = F.add(coarse, self.coarse_head(x))

        f4 = F.mul(F.resize_bilinear(f8, e4.shape[2:]), 2.0)
        d4 = F.relu(self.refine4(F.concat_channels([F.resize_bilinear(x, e4.shape[2:]), e4])))
        f4 = F.add(f4, self.refine4_head(d4))

        if self.upsampler == "convex":
            f2 = F.convex_upsample(f4, self.mask4(d4), factor=2)
            d2 = F.relu(self.refine2(F.concat_channels([F.resize_bilinear(d4, e2.shape[2:]), e2])))
            f1 = F.convex_upsample(f2, self.mask2(d2), factor=2)
        else:
            f2 = F.mul(F.upsample2(f4), 2.0)
            f1 = F.mul(F.upsample2(f2), 2.0)
        if f1.shape[2:] != (h, w):
            raise ShapeMismatchError(f"FlowCompletionNet: decoded {f1.shape[2:]} for a {h}x{w} input")
        return F.mul(f1, self.flow_norm)


def complete_flow(
    net: FlowCompletionNet,
    flow: Union[DiffTensor, np.ndarray],
    image: Union[DiffTensor, np.ndarray],
    attention: Union[DiffTensor, np.ndarray],
) -> DiffTensor:
    """Completed flow F′ (N, 2, H, W); H and W must be multiples of 8."""
    flow, image, attention = ensure_tensor(flow), ensure_tensor(image), ensure_tensor(attention)
    h, w = flow.shape[2:]
    if h % STRIDE or w % STRIDE:
        raise ShapeMismatchError(f"complete_flow: {h}x{w} is not a multiple of {STRIDE}; pad the input first")
    for name, t, c in (("image", image, 3), ("attention", attention, 1)):
        if t.shape != (flow.shape[0], c, h, w):
            raise ShapeMismatchError(f"complete_flow: {name} {t.shape} is not co-registered with flow {flow.shape}")
    return net(flow, image, attention)
