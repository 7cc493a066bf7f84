from src.pipelines.inference import infer, pad_to_stride, run_stage_one, run_stage_two
from src.pipelines.multi_frame import refine_graph, refine_sequence
from src.pipelines.single_frame import ABLATIONS, Ablation, FlowSource, neighbor_order, restore_frame, single_frame_restore
from src.pipelines.training import (
    IntermediateCorpus,
    Prefetcher,
    generate_intermediate,
    train_multi_stage,
    train_single_stage,
)

__all__ = [
    "ABLATIONS",
    "Ablation",
    "FlowSource",
    "IntermediateCorpus",
    "Prefetcher",
    "generate_intermediate",
    "infer",
    "neighbor_order",
    "pad_to_stride",
    "refine_graph",
    "refine_sequence",
    "restore_frame",
    "run_stage_one",
    "run_stage_two",
    "single_frame_restore",
    "train_multi_stage",
    "train_single_stage",
]
