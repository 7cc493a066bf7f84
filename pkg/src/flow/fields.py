"""
Flow-field utilities: endpoint error, forward-backward occlusion and a plain
numpy warp sharing the differentiable warp's sampling rule.
"""

from typing import Optional

import numpy as np

from src.autodiff.functional import bilinear_sample
from src.utils.errors import EmptyRegionError, ShapeMismatchError


def check_flow(flow: np.ndarray, name: str = "flow") -> np.ndarray:
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[-1] != 2:
        raise ShapeMismatchError(f"{name} must be H×W×2, got {flow.shape}")
    return flow


def warp_array(image: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """out(p) = image(p + flow(p)) for an H×W or H×W×C array (bilinear, border-clamped)."""
    flow = check_flow(flow)
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    if img.shape[:2] != flow.shape[:2]:
        raise ShapeMismatchError(f"warp_array: image {img.shape} and flow {flow.shape} differ in size")
    h, w = flow.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    out, _ = bilinear_sample(img[None], (xs + flow[..., 0])[None], (ys + flow[..., 1])[None])
    out = out[0]
    return out[..., 0] if squeeze else out


def epe(flow: np.ndarray, flow_gt: np.ndarray, region: Optional[np.ndarray] = None) -> float:
    """Mean endpoint error, optionally restricted to a boolean region."""
    flow = check_flow(flow)
    flow_gt = check_flow(flow_gt, "flow_gt")
    if flow.shape != flow_gt.shape:
        raise ShapeMismatchError(f"epe: {flow.shape} vs {flow_gt.shape}")
    err = np.sqrt(np.sum((flow.astype(np.float64) - flow_gt) ** 2, axis=-1))
    if region is None:
        return float(err.mean())
    region = np.asarray(region).astype(bool)
    if region.shape != err.shape:
        raise ShapeMismatchError(f"epe: region {region.shape} does not match flow {err.shape}")
    if not region.any():
        raise EmptyRegionError("epe: region is empty")
    return float(err[region].mean())


def occlusion_mask(
    flow_fwd: np.ndarray,
    flow_bwd: np.ndarray,
    tol: float = 1.0,
    flag_out_of_frame: bool = True,
) -> np.ndarray:
    """
    Boolean H×W mask, True where the forward-backward check fails.

    A pixel is occluded when |F_fwd(p) + F_bwd(p + F_fwd(p))| > tol, or (with
    ``flag_out_of_frame``) when p + F_fwd(p) falls outside the frame.
    """
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    flow_fwd = check_flow(flow_fwd, "flow_fwd").astype(np.float64)
    flow_bwd = check_flow(flow_bwd, "flow_bwd").astype(np.float64)
    if flow_fwd.shape != flow_bwd.shape:
        raise ShapeMismatchError(f"occlusion_mask: {flow_fwd.shape} vs {flow_bwd.shape}")
    h, w = flow_fwd.shape[:2]
    back = warp_array(flow_bwd, flow_fwd)
    residual = np.sqrt(np.sum((flow_fwd + back) ** 2, axis=-1))
    occluded = residual > tol
    if flag_out_of_frame:
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        tx = xs + flow_fwd[..., 0]
        ty = ys + flow_fwd[..., 1]
        occluded |= (tx < 0) | (tx > w - 1) | (ty < 0) | (ty > h - 1)
    return occluded
