from src.flow.estimator import estimate_flow, to_gray
from src.flow.fields import epe, occlusion_mask, warp_array

__all__ = ["epe", "estimate_flow", "occlusion_mask", "to_gray", "warp_array"]
