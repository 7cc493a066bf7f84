"""
Stage objectives.

    stage one:  L = L_att + L_flow + λ1·L_fusion + λ2·L_spatial
    stage two:  L = L_flow + λ1·L_fusion + λ2·L_spatial + λ3·L_temporal

``single_stage_total`` / ``stage2_total_loss`` only weigh their arguments and
work on floats as well as on DiffTensors.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from src.autodiff import functional as F
from src.autodiff.tensor import DiffTensor
from src.losses.terms import bce_loss, fusion_loss, l1_flow_loss, pyramid_perceptual_loss
from src.networks.restoration import FeaturePyramidExtractor


def single_stage_total(attention, flow, fusion, spatial, lambda_fusion: float = 100.0, lambda_spatial: float = 10.0):
    return attention + flow + lambda_fusion * fusion + lambda_spatial * spatial


def stage2_total_loss(
    flow,
    fusion,
    spatial,
    temporal,
    lambda_fusion: float = 100.0,
    lambda_spatial: float = 10.0,
    lambda_temporal: float = 10.0,
):
    return flow + lambda_fusion * fusion + lambda_spatial * spatial + lambda_temporal * temporal


@dataclass
class FrameTargets:
    """Supervision for one target frame: C_t, A^gt_t and, per iteration, A^gt_k and F^gt_{t->k}."""

    clean: DiffTensor
    attention_t: Optional[DiffTensor] = None
    attention_k: List[DiffTensor] = field(default_factory=list)
    flows: List[DiffTensor] = field(default_factory=list)


@dataclass
class LossBreakdown:
    total: DiffTensor
    components: Dict[str, float]


def _mean(terms: Sequence[DiffTensor]) -> DiffTensor:
    total = terms[0]
    for t in terms[1:]:
        total = F.add(total, t)
    return F.mul(total, 1.0 / len(terms))


def attention_term(iterations, targets: FrameTargets) -> Optional[DiffTensor]:
    terms = []
    for i, it in enumerate(iterations):
        if it.attention_t is not None and targets.attention_t is not None:
            terms.append(bce_loss(it.attention_t, targets.attention_t))
        if it.attention_k is not None and i < len(targets.attention_k):
            terms.append(bce_loss(it.attention_k, targets.attention_k[i]))
    return _mean(terms) if terms else None


def flow_term(iterations, targets: FrameTargets) -> Optional[DiffTensor]:
    terms = [
        l1_flow_loss(it.completed_flow, targets.flows[i])
        for i, it in enumerate(iterations)
        if it.completed_flow is not None and i < len(targets.flows)
    ]
    return _mean(terms) if terms else None


def single_stage_loss(
    iterations,
    targets: FrameTargets,
    extractor: FeaturePyramidExtractor,
    gamma: float = 0.8,
    lambda_fusion: float = 100.0,
    lambda_spatial: float = 10.0,
) -> LossBreakdown:
    """
    Stage-one objective over the iteration records of one target frame.

    L_att averages the BCE of A_t and A_k over every iteration, L_flow averages
    the L1 flow error over every iteration.
    """
    if not iterations:
        raise ValueError("single_stage_loss needs at least one iteration")
    att = attention_term(iterations, targets)
    flow = flow_term(iterations, targets)
    fusion = fusion_loss([it.temporal for it in iterations], targets.clean, gamma)
    spatial = pyramid_perceptual_loss([it.restored for it in iterations], targets.clean, extractor)
    total = F.add(F.mul(fusion, lambda_fusion), F.mul(spatial, lambda_spatial))
    if att is not None:
        total = F.add(total, att)
    if flow is not None:
        total = F.add(total, flow)
    components = {
        "attention": att.item() if att is not None else 0.0,
        "flow": flow.item() if flow is not None else 0.0,
        "fusion": fusion.item(),
        "spatial": spatial.item(),
        "total": total.item(),
    }
    return LossBreakdown(total=total, components=components)
