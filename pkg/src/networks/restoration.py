"""
Temporal fusion and spatial restoration.

Per neighbour iteration i (hidden state at half resolution):

    x_i   = encoder(concat[I_t, A_t, W(I_k), A_eff])         8 -> hidden, stride 2
    h_i   = ConvGRU(h_{i-1}, x_i)
    M     = up(mask_head(h_i))                                 sigmoid, full resolution
    T_i   = M ⊙ W(I_k) + (1 − M) ⊙ T_{i-1}
    P_i   = clamp(T_i + R(T_i, h_i), 0, 1)
"""

from typing import List, Sequence, Tuple

import numpy as np

from src.autodiff import functional as F
from src.autodiff.module import Module
from src.autodiff.tensor import DiffTensor, get_default_dtype
from src.networks.layers import Conv2d, ConvBlock, ConvGRUCell


def effective_map(attention_t: DiffTensor, warped_attention_k: DiffTensor) -> DiffTensor:
    """A_eff = (1 − W(A_k)) ⊙ A_t: contaminated here, clean in the aligned reference."""
    return F.mul(F.one_minus(warped_attention_k), attention_t)


def temporal_blend(mask: DiffTensor, warped_reference: DiffTensor, previous: DiffTensor) -> DiffTensor:
    """T_i = M ⊙ W(I_k) + (1 − M) ⊙ T_{i-1}; ``mask`` is single-channel."""
    m = F.expand_channels(mask, previous.shape[1])
    return F.add(F.mul(m, warped_reference), F.mul(F.one_minus(m), previous))


class InputEncoder(Module):
    def __init__(self, rng: np.random.Generator, hidden: int):
        self.conv1 = Conv2d(8, hidden, rng, stride=2)
        self.conv2 = Conv2d(hidden, hidden, rng)

    def forward(self, x: DiffTensor) -> DiffTensor:
        return F.relu(self.conv2(F.relu(self.conv1(x))))


class MaskHead(Module):
    """Three convolutions and a sigmoid, evaluated at the hidden-state resolution."""

    def __init__(self, rng: np.random.Generator, hidden: int):
        self.conv1 = Conv2d(hidden, hidden, rng)
        self.conv2 = Conv2d(hidden, hidden // 2 or 1, rng)
        self.conv3 = Conv2d(hidden // 2 or 1, 1, rng)

    def forward(self, h: DiffTensor, size: Tuple[int, int]) -> DiffTensor:
        y = F.relu(self.conv1(h))
        y = F.relu(self.conv2(y))
        return F.resize_bilinear(F.sigmoid(self.conv3(y)), size)


class SpatialAutoencoder(Module):
    """
    Contextual encoder-decoder predicting a residual on T.

    The hidden state joins at half resolution; two dilated blocks widen the
    receptive field at quarter resolution. The output layer starts at zero.
    """

    def __init__(self, rng: np.random.Generator, hidden: int, channels: Sequence[int] = (16, 32, 64)):
        c1, c2, c3 = channels
        self.enc1 = Conv2d(3, c1, rng)
        self.enc2 = Conv2d(c1, c2, rng, stride=2)
        self.merge = Conv2d(c2 + hidden, c2, rng)
        self.enc3 = Conv2d(c2, c3, rng, stride=2)
        self.dilated = [ConvBlock(c3, c3, rng, dilation=2), ConvBlock(c3, c3, rng, dilation=4)]
        self.dec2 = Conv2d(c3 + c2, c2, rng)
        self.dec1 = Conv2d(c2 + c1, c1, rng)
        self.out = Conv2d(c1, 3, rng, zero_init=True)

    def forward(self, temporal: DiffTensor, hidden: DiffTensor) -> DiffTensor:
        s1 = F.relu(self.enc1(temporal))
        s2 = F.relu(self.enc2(s1))
        s2 = F.relu(self.merge(F.concat_channels([s2, F.resize_bilinear(hidden, s2.shape[2:])])))
        x = F.relu(self.enc3(s2))
        for block in self.dilated:
            x = block(x)
        x = F.relu(self.dec2(F.concat_channels([F.resize_bilinear(x, s2.shape[2:]), s2])))
        x = F.relu(self.dec1(F.concat_channels([F.resize_bilinear(x, s1.shape[2:]), s1])))
        return F.clamp(F.add(temporal, self.out(x)), 0.0, 1.0)


class RestorationNets(Module):
    """Everything after the flow completion: encoder, ConvGRU, mask head, spatial autoencoder."""

    def __init__(self, rng: np.random.Generator, hidden: int = 32, spatial_channels: Sequence[int] = (16, 32, 64)):
        self.hidden = hidden
        self.encoder = InputEncoder(rng, hidden)
        self.gru = ConvGRUCell(hidden, hidden, rng)
        self.mask_head = MaskHead(rng, hidden)
        self.spatial = SpatialAutoencoder(rng, hidden, spatial_channels)

    def initial_state(self, height: int, width: int, batch: int = 1) -> DiffTensor:
        return DiffTensor(np.zeros((batch, self.hidden, (height + 1) // 2, (width + 1) // 2), dtype=get_default_dtype()))

    def encode(self, image, attention, warped, effective) -> DiffTensor:
        return self.encoder(F.concat_channels([image, attention, warped, effective]))

    def blend_mask(self, h: DiffTensor, size: Tuple[int, int]) -> DiffTensor:
        return self.mask_head(h, size)


def conv_gru_step(nets: RestorationNets, h_prev: DiffTensor, x: DiffTensor) -> DiffTensor:
    return nets.gru(h_prev, x)


def spatial_restore(nets: RestorationNets, temporal: DiffTensor, h: DiffTensor) -> DiffTensor:
    """P = clamp(T + R(T, h), 0, 1), same shape as T."""
    return nets.spatial(temporal, h)


class FeaturePyramidExtractor:
    """
    Frozen multi-scale filter bank used by the perceptual loss.

    Level 0 convolves the image directly; level l >= 1 first applies a Gaussian
    blur with stride 2**l. Each level ends in a seeded random 3×3 conv to
    ``channels`` feature maps. Nothing here is trainable.
    """

    def __init__(self, levels: int = 3, channels: int = 8, seed: int = 7):
        rng = np.random.default_rng(seed)
        dtype = get_default_dtype()
        self.levels = levels
        self.blurs: List[DiffTensor] = []
        self.blur_meta: List[Tuple[int, int]] = []
        for lvl in range(1, levels):
            sigma = 0.5 * 2 ** lvl
            radius = int(np.ceil(2 * sigma))
            ax = np.arange(-radius, radius + 1)
            g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
            g2 = np.outer(g, g)
            g2 /= g2.sum()
            k = np.zeros((3, 3, 2 * radius + 1, 2 * radius + 1))
            for c in range(3):
                k[c, c] = g2
            self.blurs.append(DiffTensor(k.astype(dtype)))
            self.blur_meta.append((2 ** lvl, radius))
        self.filters = [
            DiffTensor(rng.normal(0.0, np.sqrt(2.0 / 27), size=(channels, 3, 3, 3)).astype(dtype)) for _ in range(levels)
        ]

    def __call__(self, image: DiffTensor) -> List[DiffTensor]:
        feats = [F.conv2d(image, self.filters[0], padding=1)]
        for lvl in range(1, self.levels):
            stride, radius = self.blur_meta[lvl - 1]
            blurred = F.conv2d(image, self.blurs[lvl - 1], stride=stride, padding=radius)
            feats.append(F.conv2d(blurred, self.filters[lvl], padding=1))
        return feats
