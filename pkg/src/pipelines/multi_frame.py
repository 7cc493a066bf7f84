"""
Sequential refinement (stage two): O_0 = P_0, O_t = Ψ(P_t | O_{t−1}).

Each frame gets a single recurrent iteration against the previous output,
with a zero attention map; the GRU hidden state carries over from frame to
frame.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from src.autodiff.tensor import DiffTensor, no_grad
from src.flow.estimator import estimate_flow
from src.pipelines.single_frame import IterationRecord, psi_iteration
from src.states.config import FlowConfig
from src.utils.tensors import to_array, to_tensor

FlowFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def make_flow_fn(config: FlowConfig) -> FlowFn:
    def flow_fn(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return estimate_flow(a, b, levels=config.levels, block=config.block, search=config.search)

    return flow_fn


@dataclass
class SequenceRefinement:
    outputs: List[DiffTensor]
    iterations: List[IterationRecord] = field(default_factory=list)
    flows_back: List[np.ndarray] = field(default_factory=list)


def refine_graph(
    model,
    inputs: Sequence[DiffTensor],
    flow_fn: FlowFn,
    stop_flow_gradient: bool = False,
    detach_between_frames: bool = False,
) -> SequenceRefinement:
    """
    Stage two on graph tensors.

    ``flows_back[t−1]`` in the result is the flow F_{t->t−1} used to align
    O_{t−1} onto frame t.
    """
    outputs: List[DiffTensor] = [inputs[0]]
    if len(inputs) < 2:
        return SequenceRefinement(outputs=outputs)
    nets = model.restoration
    h, w = inputs[0].shape[2:]
    hidden = nets.initial_state(h, w, inputs[0].shape[0])
    records: List[IterationRecord] = []
    flows_back: List[np.ndarray] = []
    for t in range(1, len(inputs)):
        prev = outputs[-1]
        current_np, prev_np = to_array(inputs[t]), to_array(prev)
        f_tr = flow_fn(current_np, prev_np)
        f_rt = flow_fn(prev_np, current_np)
        record, hidden = psi_iteration(
            None,
            model.completion,
            nets,
            inputs[t],
            prev,
            to_tensor(f_tr),
            to_tensor(f_rt),
            inputs[t],
            hidden,
            stop_flow_gradient=stop_flow_gradient,
            neighbor=t - 1,
        )
        out = record.restored
        if detach_between_frames:
            out, hidden = out.detach(), hidden.detach()
        outputs.append(out)
        records.append(record)
        flows_back.append(f_tr)
    return SequenceRefinement(outputs=outputs, iterations=records, flows_back=flows_back)


def refine_sequence(model, frames: np.ndarray, flow_config: Optional[FlowConfig] = None) -> np.ndarray:
    """
    Refine stage-one outputs {P_t} (M, H, W, 3) into {O_t}.

    Sequences shorter than two frames pass through unchanged; O_0 is P_0
    bit for bit.
    """
    frames = np.asarray(frames, dtype=np.float32)
    if frames.shape[0] < 2:
        return frames.copy()
    flow_fn = make_flow_fn(flow_config or FlowConfig())
    with no_grad():
        result = refine_graph(model, [to_tensor(f) for f in frames], flow_fn, detach_between_frames=True)
    out = np.stack([frames[0]] + [to_array(o).astype(np.float32) for o in result.outputs[1:]])
    return out
