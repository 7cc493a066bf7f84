from src.losses.objectives import (
    FrameTargets,
    LossBreakdown,
    single_stage_loss,
    single_stage_total,
    stage2_total_loss,
)
from src.losses.terms import (
    bce_loss,
    fusion_loss,
    fusion_weights,
    l1_flow_loss,
    pyramid_perceptual_loss,
    temporal_loss,
    temporal_weight,
)

__all__ = [
    "FrameTargets",
    "LossBreakdown",
    "bce_loss",
    "fusion_loss",
    "fusion_weights",
    "l1_flow_loss",
    "pyramid_perceptual_loss",
    "single_stage_loss",
    "single_stage_total",
    "stage2_total_loss",
    "temporal_loss",
    "temporal_weight",
]
