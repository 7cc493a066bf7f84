"""
Individual training losses. All take and return DiffTensors so they can be
composed into the stage objectives and differentiated end to end.
"""

from typing import List, Sequence, Union

import numpy as np

from src.autodiff import functional as F
from src.autodiff.tensor import DiffTensor
from src.flow.fields import warp_array
from src.networks.restoration import FeaturePyramidExtractor
from src.utils.errors import ShapeMismatchError
from src.utils.tensors import ensure_tensor, to_array, to_tensor

BCE_EPS = 1e-6


def bce_loss(attention: DiffTensor, target: Union[DiffTensor, np.ndarray], eps: float = BCE_EPS) -> DiffTensor:
    """Mean binary cross entropy with the prediction clamped to [eps, 1 − eps]."""
    target = ensure_tensor(target)
    if target.shape != attention.shape:
        raise ShapeMismatchError(f"bce_loss: prediction {attention.shape} vs target {target.shape}")
    a = F.clamp(attention, eps, 1.0 - eps)
    pos = F.mul(target, F.log(a))
    neg = F.mul(F.one_minus(target), F.log(F.one_minus(a)))
    return F.neg(F.mean(F.add(pos, neg)))


def l1_flow_loss(flow: DiffTensor, flow_gt: Union[DiffTensor, np.ndarray]) -> DiffTensor:
    """Mean absolute error over both flow components."""
    flow_gt = ensure_tensor(flow_gt)
    if flow.shape != flow_gt.shape:
        raise ShapeMismatchError(f"l1_flow_loss: {flow.shape} vs {flow_gt.shape}")
    return F.mean(F.absolute(F.sub(flow, flow_gt)))


def fusion_weights(n: int, gamma: float) -> np.ndarray:
    """gamma ** |n − i| for i = 1..n (later iterations weigh more)."""
    return np.array([gamma ** abs(n - i) for i in range(1, n + 1)])


def fusion_loss(temporal: Sequence[DiffTensor], clean: Union[DiffTensor, np.ndarray], gamma: float = 0.8) -> DiffTensor:
    """(1/n) Σ_i gamma^|n−i| · MSE(T_i, C) over the n fusion iterations."""
    if not temporal:
        raise ValueError("fusion_loss needs at least one iteration")
    clean = ensure_tensor(clean)
    n = len(temporal)
    terms = [F.mul(F.mse(t, clean), float(w) / n) for t, w in zip(temporal, fusion_weights(n, gamma))]
    return _sum(terms)


def pyramid_perceptual_loss(
    restored: Sequence[DiffTensor],
    clean: Union[DiffTensor, np.ndarray],
    extractor: FeaturePyramidExtractor,
) -> DiffTensor:
    """(1/n)(1/L) Σ_i Σ_l MSE(φ_l(P_i), φ_l(C))."""
    if not restored:
        raise ValueError("pyramid_perceptual_loss needs at least one output")
    clean = ensure_tensor(clean)
    target = [f.detach() for f in extractor(clean)]
    scale = 1.0 / (len(restored) * extractor.levels)
    terms = []
    for p in restored:
        for feat, ref in zip(extractor(p), target):
            terms.append(F.mul(F.mse(feat, ref), scale))
    return _sum(terms)


def temporal_weight(clean_t: np.ndarray, clean_prev: np.ndarray, flow: np.ndarray, mu: float = 0.02) -> np.ndarray:
    """Per-pixel exp(−‖C_t − W(C_{t−1})‖² / mu) as an H×W array."""
    residual = np.asarray(clean_t, dtype=np.float64) - warp_array(clean_prev, flow)
    if residual.ndim == 2:
        residual = residual[..., None]
    return np.exp(-np.sum(residual ** 2, axis=-1) / mu)


def temporal_loss(
    outputs: Sequence[DiffTensor],
    clean: Sequence[np.ndarray],
    flows_back: Sequence[np.ndarray],
    mu: float = 0.02,
) -> DiffTensor:
    """
    Occlusion-weighted temporal consistency of consecutive outputs.

    Args:
        outputs: O_0..O_{M-1}, each (1, C, H, W).
        clean: C_0..C_{M-1} as H×W×C arrays (or tensors).
        flows_back: M − 1 fields, element t−1 is F_{t->t−1} (aligns frame t−1 onto t).
        mu: weight temperature.
    """
    m = len(outputs)
    if m < 2:
        raise ValueError("temporal_loss needs at least two frames")
    if len(clean) != m or len(flows_back) != m - 1:
        raise ShapeMismatchError(
            f"temporal_loss: {m} outputs need {m} clean frames and {m - 1} flows, got {len(clean)} and {len(flows_back)}"
        )
    clean_np = [to_array(c) if isinstance(c, DiffTensor) else np.asarray(c) for c in clean]
    terms: List[DiffTensor] = []
    for t in range(1, m):
        flow = flows_back[t - 1]
        flow_np = to_array(flow) if isinstance(flow, DiffTensor) else np.asarray(flow)
        weight = to_tensor(temporal_weight(clean_np[t], clean_np[t - 1], flow_np, mu))
        aligned = F.bilinear_warp(outputs[t - 1], to_tensor(flow_np))
        residual = F.sum_channels(F.absolute(F.sub(outputs[t], aligned)))
        terms.append(F.mul(F.mean(F.mul(residual, weight)), 1.0 / (m - 1)))
    return _sum(terms)


def _sum(terms: Sequence[DiffTensor]) -> DiffTensor:
    total = terms[0]
    for t in terms[1:]:
        total = F.add(total, t)
    return total
