"""
Frame and sequence quality metrics.

psnr        -10·log10(MSE) over all channels, capped at 99 dB
ssim        mean SSIM over 8×8 uniform windows of the 601-luma image
warp_error  mean |O_t − W(O_{t−1})| over non-occluded pixels of consecutive pairs
"""

from typing import Callable, List, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.flow.estimator import estimate_flow, to_gray
from src.flow.fields import occlusion_mask, warp_array
from src.states.config import FlowConfig
from src.utils.errors import EmptyRegionError, ImageTooSmallError, ShapeMismatchError
from src.utils.logging import get_logger

logger = get_logger(__name__)

PSNR_CAP = 99.0


def _same_shape(x: np.ndarray, y: np.ndarray, op: str):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatchError(f"{op}: {x.shape} vs {y.shape}")
    return x, y


def psnr(x: np.ndarray, y: np.ndarray) -> float:
    x, y = _same_shape(x, y, "psnr")
    mse = float(np.mean((x - y) ** 2))
    if mse <= 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, -10.0 * np.log10(mse)))


def ssim(x: np.ndarray, y: np.ndarray, window: int = 8, k1: float = 0.01, k2: float = 0.03) -> float:
    x, y = _same_shape(x, y, "ssim")
    gx, gy = to_gray(x), to_gray(y)
    if gx.shape[0] < window or gx.shape[1] < window:
        raise ImageTooSmallError(f"ssim: {gx.shape} frame is smaller than the {window}x{window} window")
    c1, c2 = k1 ** 2, k2 ** 2
    wx = sliding_window_view(gx, (window, window))
    wy = sliding_window_view(gy, (window, window))
    mx, my = wx.mean(axis=(-1, -2)), wy.mean(axis=(-1, -2))
    vx = wx.var(axis=(-1, -2))
    vy = wy.var(axis=(-1, -2))
    cov = ((wx - mx[..., None, None]) * (wy - my[..., None, None])).mean(axis=(-1, -2))
    s = ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2))
    return float(np.clip(s.mean(), -1.0, 1.0))


def _pair_residual(current: np.ndarray, previous: np.ndarray, flow_back: np.ndarray, occluded: np.ndarray) -> Optional[float]:
    valid = ~occluded
    if not valid.any():
        return None
    residual = np.abs(np.asarray(current, dtype=np.float64) - warp_array(previous, flow_back))
    if residual.ndim == 3:
        residual = residual.mean(axis=-1)
    return float(residual[valid].mean())


def _aggregate(values: List[Optional[float]]) -> float:
    kept = [v for v in values if v is not None]
    if not kept:
        raise EmptyRegionError("warp_error: every frame pair is fully occluded")
    return float(np.mean(kept))


def warp_error(frames: Sequence[np.ndarray], flow_config: Optional[FlowConfig] = None) -> float:
    """
    E_warp of a sequence, with flows estimated on the sequence itself and
    occlusions from a forward-backward check. Fully occluded pairs are skipped.
    """
    if len(frames) < 2:
        raise ValueError("warp_error needs at least two frames")
    cfg = flow_config or FlowConfig()
    values = []
    for t in range(1, len(frames)):
        back = estimate_flow(frames[t], frames[t - 1], levels=cfg.levels, block=cfg.block, search=cfg.search)
        fwd = estimate_flow(frames[t - 1], frames[t], levels=cfg.levels, block=cfg.block, search=cfg.search)
        occ = occlusion_mask(back, fwd, tol=cfg.occlusion_tol)
        v = _pair_residual(frames[t], frames[t - 1], back, occ)
        if v is None:
            logger.warning(f"warp_error: pair ({t - 1}, {t}) fully occluded, skipped")
        values.append(v)
    return _aggregate(values)


def warp_error_gt(
    frames: Sequence[np.ndarray],
    gt_flow: Callable[[int, int], np.ndarray],
    tol: float = 1.0,
) -> float:
    """E_warp with ground-truth flows ``gt_flow(t, k)`` = F_{t->k}."""
    if len(frames) < 2:
        raise ValueError("warp_error_gt needs at least two frames")
    values = []
    for t in range(1, len(frames)):
        back, fwd = gt_flow(t, t - 1), gt_flow(t - 1, t)
        occ = occlusion_mask(back, fwd, tol=tol)
        v = _pair_residual(frames[t], frames[t - 1], back, occ)
        if v is None:
            logger.warning(f"warp_error_gt: pair ({t - 1}, {t}) fully occluded, skipped")
        values.append(v)
    return _aggregate(values)
