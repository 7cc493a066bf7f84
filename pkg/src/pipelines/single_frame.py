"""
Single-frame recurrent restoration (stage one).

For a target frame I_t and its neighbours, fed one per iteration in the order
t−1, t+1, t−2, t+2, …:

    flows        F_{t->k}, F_{k->t} from the classical estimator
    attention    A_t = D(I_t, F_{t->k}),  A_k = D(I_k, F_{k->t})
    completion   F′ = G(F_{t->k}, I_t, A_t)
    alignment    W(I_k), W(A_k) with F′;  A_eff = (1 − W(A_k)) ⊙ A_t
    fusion       ConvGRU update, blending mask, T_i
    spatial      P_i = clamp(T_i + R(T_i, h_i), 0, 1)
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.autodiff import functional as F
from src.autodiff.tensor import DiffTensor, get_default_dtype
from src.flow.estimator import estimate_flow
from src.networks.attention import AttentionNet
from src.networks.completion import FlowCompletionNet
from src.networks.restoration import RestorationNets, conv_gru_step, effective_map, spatial_restore, temporal_blend
from src.states.config import FlowConfig
from src.utils.logging import get_logger
from src.utils.tensors import to_tensor

logger = get_logger(__name__)

# enough for every (t, k) pair of 2N = 8 neighbours over a 4-frame window
FLOW_CACHE_PAIRS = 64


@dataclass(frozen=True)
class Ablation:
    """Component toggles for the single-frame ablation study."""

    zero_attention: bool = False
    skip_completion: bool = False
    skip_spatial: bool = False


ABLATIONS: Dict[str, Ablation] = {
    "full": Ablation(),
    "no_attention": Ablation(zero_attention=True),
    "no_completion": Ablation(skip_completion=True),
    "no_spatial": Ablation(skip_spatial=True),
}


def neighbor_order(t: int, n_frames: int, count: int) -> List[int]:
    """Valid neighbours alternating outward from t, at most ``count`` of them."""
    order = []
    d = 1
    while len(order) < count and (t - d >= 0 or t + d < n_frames):
        for k in (t - d, t + d):
            if 0 <= k < n_frames and len(order) < count:
                order.append(k)
        d += 1
    return order


class FlowSource:
    """
    Memoised estimated flows between frames of one clip.

    Flows are estimated on the full frames; ``window`` crops the result. The
    most recent ``max_pairs`` (a, b) pairs are kept. Safe to share between
    loader threads.
    """

    def __init__(
        self,
        frames: np.ndarray,
        config: FlowConfig,
        estimator: Callable = estimate_flow,
        max_pairs: int = FLOW_CACHE_PAIRS,
    ):
        self.frames = frames
        self.config = config
        self.estimator = estimator
        self.pair = lru_cache(maxsize=max_pairs)(self._estimate)

    def _estimate(self, a: int, b: int) -> np.ndarray:
        return self.estimator(
            self.frames[a], self.frames[b], levels=self.config.levels, block=self.config.block, search=self.config.search
        )

    def __call__(self, a: int, b: int, window: Optional[Tuple[int, int, int, int]] = None) -> np.ndarray:
        flow = self.pair(a, b)
        if window is None:
            return flow
        y0, x0, h, w = window
        return flow[y0:y0 + h, x0:x0 + w]
@dataclass
class IterationRecord:
    neighbor: int
    attention_t: Optional[DiffTensor]
    attention_k: Optional[DiffTensor]
    completed_flow: Optional[DiffTensor]
    warped: DiffTensor
    effective: DiffTensor
    blend_mask: DiffTensor
    temporal: DiffTensor
    restored: DiffTensor


@dataclass
class FrameRestoration:
    output: DiffTensor
    hidden: DiffTensor
    iterations: List[IterationRecord] = field(default_factory=list)


def _zeros_like_map(image: DiffTensor) -> DiffTensor:
    n, _, h, w = image.shape
    return DiffTensor(np.zeros((n, 1, h, w), dtype=get_default_dtype()))


def psi_iteration(
    attention_net: Optional[AttentionNet],
    completion_net: FlowCompletionNet,
    nets: RestorationNets,
    target: DiffTensor,
    reference: DiffTensor,
    flow_tr: DiffTensor,
    flow_rt: DiffTensor,
    previous: DiffTensor,
    hidden: DiffTensor,
    ablation: Ablation = Ablation(),
    stop_flow_gradient: bool = False,
    neighbor: int = -1,
) -> Tuple[IterationRecord, DiffTensor]:
    """One recurrent step; returns the record and the new hidden state."""
    if attention_net is None or ablation.zero_attention:
        att_t, att_k = _zeros_like_map(target), _zeros_like_map(reference)
        rec_att_t = rec_att_k = None
    else:
        att_t = attention_net(target, flow_tr)
        att_k = attention_net(reference, flow_rt)
        rec_att_t, rec_att_k = att_t, att_k

    if ablation.skip_completion:
        flow = flow_tr
        completed = None
    else:
        completed = completion_net(flow_tr, target, att_t)
        flow = completed.detach() if stop_flow_gradient else completed

    warped = F.bilinear_warp(reference, flow)
    warped_att = F.bilinear_warp(att_k, flow)
    eff = effective_map(att_t, warped_att)

    x = nets.encode(target, att_t, warped, eff)
    hidden = conv_gru_step(nets, hidden, x)
    mask = nets.blend_mask(hidden, target.shape[2:])
    temporal = temporal_blend(mask, warped, previous)
    restored = temporal if ablation.skip_spatial else spatial_restore(nets, temporal, hidden)
    record = IterationRecord(
        neighbor=neighbor,
        attention_t=rec_att_t,
        attention_k=rec_att_k,
        completed_flow=completed,
        warped=warped,
        effective=eff,
        blend_mask=mask,
        temporal=temporal,
        restored=restored,
    )
    return record, hidden


def restore_frame(
    model,
    target: DiffTensor,
    references: Sequence[DiffTensor],
    flows_tr: Sequence[DiffTensor],
    flows_rt: Sequence[DiffTensor],
    ablation: Ablation = Ablation(),
    stop_flow_gradient: bool = False,
    neighbors: Optional[Sequence[int]] = None,
) -> FrameRestoration:
    """
    Ψ on graph tensors.

    ``model`` provides ``completion``, ``restoration`` and optionally
    ``attention`` (absent for stage two). ``references[i]`` is fed at
    iteration i with flows ``flows_tr[i]`` (target -> reference) and
    ``flows_rt[i]``. Without references the frame only goes through the
    spatial restorer.
    """
    nets: RestorationNets = model.restoration
    h, w = target.shape[2:]
    hidden = nets.initial_state(h, w, target.shape[0])
    if not references:
        logger.warning("No neighbouring frames; falling back to spatial restoration only")
        out = target if ablation.skip_spatial else spatial_restore(nets, target, hidden)
        return FrameRestoration(output=out, hidden=hidden)

    attention_net = getattr(model, "attention", None)
    neighbors = list(neighbors) if neighbors is not None else list(range(len(references)))
    previous = target
    records: List[IterationRecord] = []
    for i, reference in enumerate(references):
        record, hidden = psi_iteration(
            attention_net,
            model.completion,
            nets,
            target,
            reference,
            flows_tr[i],
            flows_rt[i],
            previous,
            hidden,
            ablation=ablation,
            stop_flow_gradient=stop_flow_gradient,
            neighbor=neighbors[i],
        )
        records.append(record)
        previous = record.temporal
    return FrameRestoration(output=records[-1].restored, hidden=hidden, iterations=records)


def single_frame_restore(
    model,
    frames: np.ndarray,
    t: int,
    flows: FlowSource,
    n_neighbors: int = 4,
    ablation: Ablation = Ablation(),
    neighbors: Optional[Sequence[int]] = None,
) -> FrameRestoration:
    """
    Ψ for frame t of an (M, H, W, 3) clip.

    Near clip boundaries fewer than ``n_neighbors`` frames exist; the iteration
    count shrinks accordingly.
    """
    if neighbors is None:
        neighbors = neighbor_order(t, frames.shape[0], n_neighbors)
        if 0 < len(neighbors) < n_neighbors:
            logger.warning(f"Frame {t}: only {len(neighbors)} of {n_neighbors} neighbours available")
    target = to_tensor(frames[t])
    references = [to_tensor(frames[k]) for k in neighbors]
    flows_tr = [to_tensor(flows(t, k)) for k in neighbors]
    flows_rt = [to_tensor(flows(k, t)) for k in neighbors]
    return restore_frame(model, target, references, flows_tr, flows_rt, ablation=ablation, neighbors=neighbors)
