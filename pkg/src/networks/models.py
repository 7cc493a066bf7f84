"""
Model bundles for the two stages.

Stage two is a copy of stage one without the attention detector; its
attention input is pinned to zeros.
"""

import copy

import numpy as np

from src.autodiff.module import Module
from src.networks.attention import AttentionNet
from src.networks.completion import FlowCompletionNet
from src.networks.restoration import RestorationNets
from src.states.config import ModelConfig


class SingleFrameModel(Module):
    def __init__(self, config: ModelConfig):
        rng = np.random.default_rng(config.init_seed)
        self.attention = AttentionNet(rng, config.attention_channels)
        self.completion = FlowCompletionNet(
            rng,
            config.completion_channels,
            config.dilations,
            layer_kind=config.layer_kind,
            upsampler=config.upsampler,
            flow_norm=config.flow_norm,
        )
        self.restoration = RestorationNets(rng, config.hidden_channels, config.spatial_channels)


class MultiFrameModel(Module):
    def __init__(self, config: ModelConfig):
        rng = np.random.default_rng(config.init_seed)
        # same draw order as SingleFrameModel minus the detector
        AttentionNet(rng, config.attention_channels)
        self.completion = FlowCompletionNet(
            rng,
            config.completion_channels,
            config.dilations,
            layer_kind=config.layer_kind,
            upsampler=config.upsampler,
            flow_norm=config.flow_norm,
        )
        self.restoration = RestorationNets(rng, config.hidden_channels, config.spatial_channels)

    @classmethod
    def from_single_frame(cls, model: SingleFrameModel, config: ModelConfig) -> "MultiFrameModel":
        """Initialise stage two with copies of the trained stage-one weights."""
        stage2 = cls(config)
        stage2.completion.load_state_dict(copy.deepcopy(model.completion.state_dict()))
        stage2.restoration.load_state_dict(copy.deepcopy(model.restoration.state_dict()))
        return stage2
