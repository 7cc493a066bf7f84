"""
Finite-difference checks over every differentiable op and composite loss.

Each case builds its inputs in 64-bit mode, keeps them away from the kinks of
relu/abs/clamp and integer sampling positions, and returns a GradCheckReport.
"""

from typing import Callable, Dict, List, Optional

import numpy as np

from src.autodiff import functional as F
from src.autodiff.gradcheck import GradCheckReport, finite_diff_check
from src.autodiff.tensor import DiffTensor, precision
from src.losses.objectives import FrameTargets, single_stage_loss
from src.losses.terms import bce_loss, fusion_loss, l1_flow_loss, pyramid_perceptual_loss, temporal_loss
from src.networks.layers import ConvGRUCell, FusionLayer
from src.networks.models import MultiFrameModel, SingleFrameModel
from src.networks.restoration import FeaturePyramidExtractor
from src.pipelines.single_frame import restore_frame
from src.pipelines.training import StageTwoSample, stage_two_step
from src.states.config import ModelConfig, TrainConfig
from src.utils.logging import get_logger

logger = get_logger(__name__)


def tiny_model_config() -> ModelConfig:
    return ModelConfig(
        attention_channels=[2, 2, 2],
        completion_channels=[2, 2, 2],
        spatial_channels=[2, 2, 2],
        dilations=[2],
        hidden_channels=2,
        perceptual_levels=2,
        perceptual_channels=2,
    )


def _var(rng: np.random.Generator, *shape: int, low: float = -1.0, high: float = 1.0) -> DiffTensor:
    return DiffTensor(rng.uniform(low, high, size=shape), requires_grad=True)


def _away_from_zero(rng: np.random.Generator, *shape: int) -> DiffTensor:
    mag = rng.uniform(0.1, 1.0, size=shape)
    return DiffTensor(mag * rng.choice([-1.0, 1.0], size=shape), requires_grad=True)


def _fractional_flow(rng: np.random.Generator, n: int, h: int, w: int, reach: int = 1) -> np.ndarray:
    whole = rng.integers(-reach, reach + 1, size=(n, 2, h, w))
    return whole + rng.uniform(0.2, 0.8, size=(n, 2, h, w))


def _weighted(out: DiffTensor, rng: np.random.Generator) -> DiffTensor:
    return F.mul(out, DiffTensor(rng.normal(size=out.shape)))


# ---------------------------------------------------------------------- #
#  Ops
# ---------------------------------------------------------------------- #
def _elementwise_cases(rng: np.random.Generator) -> Dict[str, Callable[[], GradCheckReport]]:
    a, b = _var(rng, 1, 2, 4, 4), _var(rng, 1, 2, 4, 4)
    pos = _var(rng, 1, 2, 4, 4, low=0.2, high=2.0)
    signed = _away_from_zero(rng, 1, 2, 4, 4)
    inside = DiffTensor(rng.choice([-0.3, 0.5, 1.3], size=(1, 2, 4, 4)) + rng.uniform(-0.2, 0.2, size=(1, 2, 4, 4)), requires_grad=True)
    w = DiffTensor(rng.normal(size=(1, 2, 4, 4)))
    return {
        "add/sub/mul": lambda: finite_diff_check(lambda: F.mul(F.sub(F.add(a, b), F.mul(b, 0.5)), w), [a, b], name="add/sub/mul"),
        "sigmoid": lambda: finite_diff_check(lambda: F.mul(F.sigmoid(a), w), [a], name="sigmoid"),
        "tanh": lambda: finite_diff_check(lambda: F.mul(F.tanh(a), w), [a], name="tanh"),
        "exp": lambda: finite_diff_check(lambda: F.mul(F.exp(a), w), [a], name="exp"),
        "log": lambda: finite_diff_check(lambda: F.mul(F.log(pos), w), [pos], name="log"),
        "square": lambda: finite_diff_check(lambda: F.mul(F.square(a), w), [a], name="square"),
        "relu": lambda: finite_diff_check(lambda: F.mul(F.relu(signed), w), [signed], name="relu"),
        "abs": lambda: finite_diff_check(lambda: F.mul(F.absolute(signed), w), [signed], name="abs"),
        "clamp": lambda: finite_diff_check(lambda: F.mul(F.clamp(inside, 0.0, 1.0), w), [inside], name="clamp"),
        "mean": lambda: finite_diff_check(lambda: F.mean(F.square(a)), [a], name="mean"),
    }


def _structural_cases(rng: np.random.Generator) -> Dict[str, Callable[[], GradCheckReport]]:
    x = _var(rng, 1, 2, 7, 7)
    weight = _var(rng, 3, 2, 3, 3)
    bias = _var(rng, 3)
    image = _var(rng, 1, 2, 6, 6)
    flow = DiffTensor(_fractional_flow(rng, 1, 6, 6), requires_grad=True)
    small = _var(rng, 1, 2, 4, 5)
    coarse = _var(rng, 1, 2, 3, 3, low=-2.0, high=2.0)
    logits = _var(rng, 1, 36, 3, 3)
    a, b = _var(rng, 1, 2, 4, 4), _var(rng, 1, 3, 4, 4)
    gate = _var(rng, 1, 1, 4, 4)
    return {
        "conv2d": lambda: finite_diff_check(
            lambda: _weighted(F.conv2d(x, weight, bias, stride=2, padding=2, dilation=2), np.random.default_rng(1)),
            [x, weight, bias],
            name="conv2d",
        ),
        "bilinear_warp": lambda: finite_diff_check(
            lambda: _weighted(F.bilinear_warp(image, flow), np.random.default_rng(2)), [image, flow], name="bilinear_warp"
        ),
        "resize_bilinear": lambda: finite_diff_check(
            lambda: _weighted(F.resize_bilinear(small, (7, 3)), np.random.default_rng(3)), [small], name="resize_bilinear"
        ),
        "convex_upsample": lambda: finite_diff_check(
            lambda: _weighted(F.convex_upsample(coarse, logits, factor=2), np.random.default_rng(4)),
            [coarse, logits],
            name="convex_upsample",
        ),
        "concat/slice/expand": lambda: finite_diff_check(
            lambda: _weighted(
                F.mul(F.slice_channels(F.concat_channels([a, b]), 1, 4), F.expand_channels(gate, 3)), np.random.default_rng(5)
            ),
            [a, b, gate],
            name="concat/slice/expand",
        ),
    }


def _layer_cases(rng: np.random.Generator) -> Dict[str, Callable[[], GradCheckReport]]:
    fusion = FusionLayer(2, 3, rng, stride=2)
    gru = ConvGRUCell(2, 2, rng)
    x = _var(rng, 1, 2, 8, 8)
    h = _var(rng, 1, 2, 8, 8)
    return {
        "fusion_layer": lambda: finite_diff_check(
            lambda: _weighted(fusion(x), np.random.default_rng(6)), [x, fusion.gate.weight, fusion.hallucinate.conv1.weight], name="fusion_layer"
        ),
        "conv_gru": lambda: finite_diff_check(
            lambda: _weighted(gru(h, x), np.random.default_rng(7)), [h, x, gru.update_gate.weight, gru.candidate.weight], name="conv_gru"
        ),
    }


# ---------------------------------------------------------------------- #
#  Losses
# ---------------------------------------------------------------------- #
def _loss_cases(rng: np.random.Generator) -> Dict[str, Callable[[], GradCheckReport]]:
    att = _var(rng, 1, 1, 8, 8, low=0.1, high=0.9)
    target = DiffTensor((rng.uniform(size=(1, 1, 8, 8)) > 0.5).astype(np.float64))
    flow = _var(rng, 1, 2, 8, 8, low=-2, high=2)
    flow_gt = DiffTensor(flow.data + rng.choice([-1.0, 1.0], size=flow.shape) * rng.uniform(0.1, 0.5, size=flow.shape))
    temporal = [_var(rng, 1, 3, 16, 16, low=0.1, high=0.9) for _ in range(4)]
    clean = DiffTensor(rng.uniform(0.1, 0.9, size=(1, 3, 16, 16)))
    extractor = FeaturePyramidExtractor(levels=2, channels=2, seed=3)
    outputs = [_var(rng, 1, 3, 8, 8, low=0.1, high=0.9) for _ in range(3)]
    clean_seq = [rng.uniform(0.1, 0.9, size=(8, 8, 3)) for _ in range(3)]
    flows_back = [rng.uniform(0.2, 0.8, size=(8, 8, 2)) for _ in range(2)]
    return {
        "bce_loss": lambda: finite_diff_check(lambda: bce_loss(att, target), [att], name="bce_loss"),
        "l1_flow_loss": lambda: finite_diff_check(lambda: l1_flow_loss(flow, flow_gt), [flow], name="l1_flow_loss"),
        "fusion_loss": lambda: finite_diff_check(lambda: fusion_loss(temporal, clean, 0.8), temporal, name="fusion_loss"),
        "perceptual_loss": lambda: finite_diff_check(
            lambda: pyramid_perceptual_loss(temporal[:2], clean, extractor), temporal[:2], name="perceptual_loss"
        ),
        "temporal_loss": lambda: finite_diff_check(
            lambda: temporal_loss(outputs, clean_seq, flows_back, 0.02), outputs, name="temporal_loss"
        ),
    }


def _probe_parameters(model, count: int = 3):
    params = [p for p in model.parameters() if p.data.size > 1]
    picks = np.linspace(0, len(params) - 1, count).astype(int)
    return [params[i] for i in picks]


def _single_stage_case(rng: np.random.Generator, size: int = 16) -> Callable[[], GradCheckReport]:
    model = SingleFrameModel(tiny_model_config())
    extractor = FeaturePyramidExtractor(levels=2, channels=2, seed=3)
    tc = TrainConfig()

    def frame():
        return DiffTensor(rng.uniform(0.2, 0.8, size=(1, 3, size, size)))

    target, refs = frame(), [frame(), frame()]
    flows_tr = [DiffTensor(_fractional_flow(rng, 1, size, size)) for _ in refs]
    flows_rt = [DiffTensor(_fractional_flow(rng, 1, size, size)) for _ in refs]
    targets = FrameTargets(
        clean=frame(),
        attention_t=DiffTensor((rng.uniform(size=(1, 1, size, size)) > 0.7).astype(np.float64)),
        attention_k=[DiffTensor((rng.uniform(size=(1, 1, size, size)) > 0.7).astype(np.float64)) for _ in refs],
        flows=[DiffTensor(_fractional_flow(rng, 1, size, size)) for _ in refs],
    )

    def loss():
        result = restore_frame(model, target, refs, flows_tr, flows_rt)
        return single_stage_loss(result.iterations, targets, extractor, tc.gamma, tc.lambda_fusion, tc.lambda_spatial).total

    return lambda: finite_diff_check(loss, _probe_parameters(model), max_checks=16, name="single_stage_loss")


def _stage_two_case(rng: np.random.Generator, size: int = 16) -> Callable[[], GradCheckReport]:
    model = MultiFrameModel(tiny_model_config())
    extractor = FeaturePyramidExtractor(levels=2, channels=2, seed=3)
    sample = StageTwoSample(
        clip_id="gradcheck",
        start=0,
        inputs=rng.uniform(0.2, 0.8, size=(3, size, size, 3)),
        clean=rng.uniform(0.2, 0.8, size=(3, size, size, 3)),
        gt_back=[rng.uniform(0.2, 0.8, size=(size, size, 2)) for _ in range(2)],
    )
    fixed = rng.uniform(0.2, 0.8, size=(size, size, 2))

    def loss():
        return stage_two_step(model, sample, extractor, lambda a, b: fixed, TrainConfig()).total

    return lambda: finite_diff_check(loss, _probe_parameters(model), max_checks=16, name="stage2_total_loss")


def run_suite(seed: int = 0, only: Optional[List[str]] = None) -> List[GradCheckReport]:
    """Run every case (or the named subset) in 64-bit mode; returns one report per case."""
    reports = []
    with precision(np.float64):
        rng = np.random.default_rng(seed)
        cases: Dict[str, Callable[[], GradCheckReport]] = {}
        cases.update(_elementwise_cases(rng))
        cases.update(_structural_cases(rng))
        cases.update(_layer_cases(rng))
        cases.update(_loss_cases(rng))
        cases["single_stage_loss"] = _single_stage_case(rng)
        cases["stage2_total_loss"] = _stage_two_case(rng)
        for name, case in cases.items():
            if only and name not in only:
                continue
            report = case()
            (logger.info if report.passed else logger.error)(report.summary())
            reports.append(report)
    return reports
