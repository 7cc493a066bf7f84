"""
Inference
---------
Runs trained checkpoints on a clip directory and writes the restored frames.

Input clip directory: numbered ``input_*.png`` frames (a corpus clip) or any
sorted set of ``*.png`` frames. When ``clean_*.png`` frames sit next to the
inputs they are used as ground truth for a metrics report.

Output directory::

    frame_00000.png  frame_00000.f32  ...     restored frames (8-bit and lossless)
    timing.json                               per-stage per-frame milliseconds
    metrics.json                              only with ground truth
    debug/frame_00000/iter_0_temporal.png     only with debug panels
"""

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from tqdm import tqdm

from src.autodiff.tensor import no_grad
from src.metrics.quality import psnr, ssim, warp_error
from src.metrics.report import ClipReport, FrameScore
from src.networks.models import MultiFrameModel, SingleFrameModel
from src.pipelines.multi_frame import refine_sequence
from src.pipelines.single_frame import Ablation, FlowSource, IterationRecord, single_frame_restore
from src.states.checkpoint import ModelCheckpoint, load_checkpoint
from src.states.config import NETWORK_STRIDE, ClearLensConfig, FlowConfig, ModelConfig
from src.utils.errors import CheckpointError, CorpusError
from src.utils.io import read_png, write_json, write_png, write_raw
from src.utils.logging import get_logger
from src.utils.tensors import to_array

logger = get_logger(__name__)


# ---------------------------------------------------------------------- #
#  Padding to the network stride
# ---------------------------------------------------------------------- #
def pad_to_stride(frames: np.ndarray, stride: int = NETWORK_STRIDE) -> Tuple[np.ndarray, Tuple[int, int]]:
    """Reflect-pad the two spatial axes of (M, H, W, C) frames up to a multiple of ``stride``."""
    h, w = frames.shape[1:3]
    pad_h, pad_w = (-h) % stride, (-w) % stride
    if pad_h == 0 and pad_w == 0:
        return frames, (h, w)
    widths = [(0, 0), (0, pad_h), (0, pad_w)] + [(0, 0)] * (frames.ndim - 3)
    return np.pad(frames, widths, mode="reflect"), (h, w)


def crop_to(frames: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    h, w = size
    return np.ascontiguousarray(frames[:, :h, :w])


# ---------------------------------------------------------------------- #
#  Checkpoint resolution
# ---------------------------------------------------------------------- #
def resolve_checkpoint(path: Union[str, Path]) -> Path:
    """A checkpoint directory, or a stage directory whose newest ``epoch_*`` entry is used."""
    path = Path(path)
    if (path / "manifest.json").exists():
        return path
    epochs = sorted(p for p in path.glob("epoch_*") if (p / "manifest.json").exists())
    if not epochs:
        raise CheckpointError(f"No checkpoint found under {path}")
    return epochs[-1]


def load_single_frame(path: Union[str, Path], config: ClearLensConfig) -> SingleFrameModel:
    ckpt_dir = resolve_checkpoint(path)
    model = SingleFrameModel(config.model)
    load_checkpoint(model, ckpt_dir)
    logger.info(f"Loaded stage-one weights from {ckpt_dir}")
    return model


def load_multi_frame(path: Union[str, Path], config: ClearLensConfig) -> MultiFrameModel:
    ckpt_dir = resolve_checkpoint(path)
    model = MultiFrameModel(config.model)
    load_checkpoint(model, ckpt_dir)
    logger.info(f"Loaded stage-two weights from {ckpt_dir}")
    return model


def model_config_of(path: Union[str, Path]) -> ModelConfig:
    """ModelConfig stored in a checkpoint's snapshot (architecture variants differ per checkpoint)."""
    snapshot = ModelCheckpoint.read(resolve_checkpoint(path)).config
    return ModelConfig(**snapshot.get("model", {}))


# ---------------------------------------------------------------------- #
#  Stage runners
# ---------------------------------------------------------------------- #
@dataclass
class StageOneRun:
    outputs: np.ndarray  # (M, H, W, 3)
    millis: List[float]
    iterations: Dict[int, List[IterationRecord]] = field(default_factory=dict)


def run_stage_one(
    model: SingleFrameModel,
    frames: np.ndarray,
    flow_config: FlowConfig,
    n_neighbors: int = 4,
    ablation: Ablation = Ablation(),
    keep_iterations: bool = False,
    progress: bool = False,
) -> StageOneRun:
    """
    Restore every frame of an (M, H, W, 3) clip independently with Ψ.

    Frames are padded to the network stride and outputs cropped back; kept
    iteration records stay in padded coordinates.
    """
    frames = np.asarray(frames, dtype=np.float32)
    padded, size = pad_to_stride(frames)
    flows = FlowSource(padded, flow_config)
    outputs = np.empty_like(frames)
    millis: List[float] = []
    records: Dict[int, List[IterationRecord]] = {}
    indices = range(frames.shape[0])
    if progress:
        indices = tqdm(indices, desc="Stage one", leave=False)
    with no_grad():
        for t in indices:
            start = time.perf_counter()
            result = single_frame_restore(model, padded, t, flows, n_neighbors=n_neighbors, ablation=ablation)
            millis.append((time.perf_counter() - start) * 1000.0)
            outputs[t] = to_array(result.output)[: size[0], : size[1]]
            if keep_iterations:
                records[t] = result.iterations
    return StageOneRun(outputs=np.clip(outputs, 0.0, 1.0), millis=millis, iterations=records)


def run_stage_two(model: MultiFrameModel, stage_one: np.ndarray, flow_config: FlowConfig) -> Tuple[np.ndarray, List[float]]:
    """Refine stage-one outputs; timing is spread evenly over the refined frames."""
    padded, size = pad_to_stride(np.asarray(stage_one, dtype=np.float32))
    start = time.perf_counter()
    refined = crop_to(refine_sequence(model, padded, flow_config), size)
    total = (time.perf_counter() - start) * 1000.0
    m = stage_one.shape[0]
    per_frame = [0.0] + [total / (m - 1)] * (m - 1) if m > 1 else [0.0] * m
    return refined, per_frame


# ---------------------------------------------------------------------- #
#  Clip directories
# ---------------------------------------------------------------------- #
def read_clip_dir(clip_dir: Union[str, Path]) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Load (inputs, clean-or-None) from a directory of numbered PNG frames."""
    clip_dir = Path(clip_dir)
    if not clip_dir.is_dir():
        raise CorpusError(f"Input clip directory not found: {clip_dir}")
    inputs = sorted(clip_dir.glob("input_*.png")) or sorted(
        p for p in clip_dir.glob("*.png") if not p.name.startswith(("clean_", "mask_"))
    )
    if not inputs:
        raise CorpusError(f"No PNG frames in {clip_dir}")
    frames = np.stack([read_png(p) for p in inputs])
    clean_paths = sorted(clip_dir.glob("clean_*.png"))
    clean = None
    if clean_paths:
        if len(clean_paths) != len(inputs):
            raise CorpusError(f"{clip_dir}: {len(inputs)} input frames but {len(clean_paths)} clean frames")
        clean = np.stack([read_png(p) for p in clean_paths])
    return frames, clean


def write_frames(out_dir: Union[str, Path], frames: np.ndarray) -> None:
    out_dir = Path(out_dir)
    for t, frame in enumerate(frames):
        write_png(out_dir / f"frame_{t:05d}.png", frame)
        write_raw(out_dir / f"frame_{t:05d}.f32", frame)


def write_debug_panels(out_dir: Path, records: Dict[int, List[IterationRecord]], size: Tuple[int, int]) -> None:
    h, w = size
    for t, iterations in records.items():
        frame_dir = out_dir / "debug" / f"frame_{t:05d}"
        for i, rec in enumerate(iterations):
            write_png(frame_dir / f"iter_{i}_temporal.png", np.clip(to_array(rec.temporal)[:h, :w], 0, 1))
            write_png(frame_dir / f"iter_{i}_restored.png", np.clip(to_array(rec.restored)[:h, :w], 0, 1))
            write_png(frame_dir / f"iter_{i}_mask.png", to_array(rec.blend_mask)[:h, :w])
            write_png(frame_dir / f"iter_{i}_effective.png", to_array(rec.effective)[:h, :w])
            if rec.attention_t is not None:
                write_png(frame_dir / f"iter_{i}_attention.png", to_array(rec.attention_t)[:h, :w])


def clip_report(clip_id: str, outputs: np.ndarray, clean: np.ndarray, flow_config: FlowConfig) -> ClipReport:
    scores = [FrameScore(frame=t, psnr=psnr(o, c), ssim=ssim(o, c)) for t, (o, c) in enumerate(zip(outputs, clean))]
    ewarp = warp_error(outputs, flow_config) if outputs.shape[0] > 1 else None
    return ClipReport(clip_id=clip_id, per_frame=scores, warp_error=ewarp)


# ---------------------------------------------------------------------- #
#  Entry point
# ---------------------------------------------------------------------- #
@dataclass
class InferenceResult:
    outputs: np.ndarray
    stage_one: np.ndarray
    timing: Dict
    report: Optional[ClipReport] = None


def infer(
    config: ClearLensConfig,
    input_dir: Union[str, Path],
    out_dir: Union[str, Path],
    single_ckpt: Union[str, Path],
    multi_ckpt: Optional[Union[str, Path]] = None,
    stage_one_only: bool = False,
    debug_panels: bool = False,
    n_neighbors: Optional[int] = None,
) -> InferenceResult:
    """
    Restore one clip directory.

    Args:
        config: run configuration (model layout, flow estimator, neighbour count).
        input_dir: directory of numbered PNG frames.
        out_dir: where frames, timing and metrics are written.
        single_ckpt: stage-one checkpoint (or stage directory).
        multi_ckpt: stage-two checkpoint; required unless ``stage_one_only``.
        stage_one_only: stop after stage one and emit {P_t}.
        debug_panels: dump T^i, M, A_eff per iteration.
        n_neighbors: neighbour iterations per frame, defaults to ``train.neighbors``.

    Returns:
        InferenceResult with the written frames and timing report.
    """
    if not stage_one_only and multi_ckpt is None:
        raise CheckpointError("A stage-two checkpoint is required unless running stage one only")
    out_dir = Path(out_dir)
    frames, clean = read_clip_dir(input_dir)
    logger.info(f"Restoring {frames.shape[0]} frames of {frames.shape[1]}x{frames.shape[2]} from {input_dir}")

    single = load_single_frame(single_ckpt, config)
    run = run_stage_one(
        single,
        frames,
        config.flow,
        n_neighbors=n_neighbors or config.train.neighbors,
        keep_iterations=debug_panels,
        progress=True,
    )
    outputs = run.outputs
    timing = {"frames": int(frames.shape[0]), "stage1_ms": run.millis}
    if not stage_one_only:
        multi = load_multi_frame(multi_ckpt, config)
        outputs, stage2_ms = run_stage_two(multi, run.outputs, config.flow)
        timing["stage2_ms"] = stage2_ms
    timing["mean_ms"] = {key[:-3]: float(np.mean(timing[key])) for key in ("stage1_ms", "stage2_ms") if key in timing}

    write_frames(out_dir, outputs)
    write_json(out_dir / "timing.json", timing)
    if debug_panels:
        write_debug_panels(out_dir, run.iterations, frames.shape[1:3])

    report = None
    if clean is not None:
        report = clip_report(Path(input_dir).name, outputs, clean, config.flow)
        write_json(out_dir / "metrics.json", report.to_json())
        logger.info(f"PSNR {report.mean_psnr:.2f} dB, SSIM {report.mean_ssim:.4f}")
    logger.info(f"Wrote restored clip to {out_dir}")
    return InferenceResult(outputs=outputs, stage_one=run.outputs, timing=timing, report=report)
