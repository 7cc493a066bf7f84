from src.networks.attention import AttentionNet, detect_attention
from src.networks.completion import FlowCompletionNet, complete_flow
from src.networks.layers import Conv2d, ConvBlock, ConvGRUCell, FusionLayer
from src.networks.models import MultiFrameModel, SingleFrameModel
from src.networks.restoration import (
    FeaturePyramidExtractor,
    RestorationNets,
    conv_gru_step,
    effective_map,
    spatial_restore,
    temporal_blend,
)

__all__ = [
    "AttentionNet",
    "Conv2d",
    "ConvBlock",
    "ConvGRUCell",
    "FeaturePyramidExtractor",
    "FlowCompletionNet",
    "FusionLayer",
    "MultiFrameModel",
    "RestorationNets",
    "SingleFrameModel",
    "complete_flow",
    "conv_gru_step",
    "detect_attention",
    "effective_map",
    "spatial_restore",
    "temporal_blend",
]
