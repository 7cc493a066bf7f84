"""
Evaluation drivers.

    restore_corpus         write stage-one and stage-two results for a corpus split
    evaluate               score a results directory against the corpus ground truth
    ablation_study         full model against zeroed attention / skipped completion / skipped spatial restoration
    frame_count_study      quality of the middle frame of short clips as neighbours are added
    recurrence_trace       PSNR of T^i and P^i after every iteration
    flow_completion_report inside/outside-mask EPE of degraded and completed flows
    flow_ablation          flow_completion_report summary for several checkpoints

Everything tabular goes through pandas and lands as CSV next to a JSON summary.
"""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.autodiff.tensor import no_grad
from src.flow.fields import epe
from src.metrics.quality import psnr, ssim
from src.metrics.report import MetricsReport, comparison_table
from src.networks.attention import detect_attention
from src.networks.completion import complete_flow
from src.networks.models import MultiFrameModel, SingleFrameModel
from src.pipelines.inference import (
    clip_report,
    load_single_frame,
    model_config_of,
    pad_to_stride,
    run_stage_one,
    run_stage_two,
    write_frames,
)
from src.pipelines.single_frame import ABLATIONS, FlowSource, neighbor_order, single_frame_restore
from src.states.config import ClearLensConfig
from src.synth.corpus import ClipData, Corpus
from src.utils.errors import ConfigError, CorpusError, EmptyRegionError
from src.utils.io import read_png, read_raw, write_json
from src.utils.logging import get_logger
from src.utils.tensors import to_array, to_tensor

logger = get_logger(__name__)


def _clips(corpus: Corpus, split: Optional[str]) -> List[ClipData]:
    ids = corpus.clip_ids(split)
    if not ids:
        raise CorpusError(f"{corpus.root}: no clips in split '{split}'")
    return [corpus.load_clip(cid) for cid in ids]


# ---------------------------------------------------------------------- #
#  Results directories
# ---------------------------------------------------------------------- #
def restore_corpus(
    config: ClearLensConfig,
    corpus: Corpus,
    single: SingleFrameModel,
    multi: Optional[MultiFrameModel],
    out_dir: Union[str, Path],
    split: Optional[str] = None,
) -> Dict[str, Path]:
    """
    Restore every clip of ``split`` and write ``<out>/stage1/<clip>/`` (and
    ``<out>/stage2/<clip>/`` when a stage-two model is given).
    """
    out_dir = Path(out_dir)
    split = split or config.eval.split
    written = {"stage1": out_dir / "stage1"}
    if multi is not None:
        written["stage2"] = out_dir / "stage2"
    for clip in tqdm(_clips(corpus, split), desc="Restoring clips"):
        run = run_stage_one(single, clip.inputs, config.flow, n_neighbors=config.train.neighbors)
        write_frames(written["stage1"] / clip.clip_id, run.outputs)
        if multi is not None:
            refined, _ = run_stage_two(multi, run.outputs, config.flow)
            write_frames(written["stage2"] / clip.clip_id, refined)
    return written


def load_results(results_dir: Union[str, Path], corpus: Corpus, clip_id: str) -> np.ndarray:
    """Frames of one restored clip, lossless ``.f32`` preferred over PNG."""
    clip_dir = Path(results_dir) / clip_id
    entry = corpus.entries[clip_id]
    raw = sorted(clip_dir.glob("frame_*.f32"))
    if raw:
        shape = (entry["height"], entry["width"], 3)
        frames = np.stack([read_raw(p, shape) for p in raw])
    else:
        pngs = sorted(clip_dir.glob("frame_*.png"))
        if not pngs:
            raise CorpusError(f"No restored frames for clip '{clip_id}' in {clip_dir}")
        frames = np.stack([read_png(p) for p in pngs])
    if frames.shape[0] != entry["n_frames"]:
        raise CorpusError(f"{clip_dir}: {frames.shape[0]} restored frames, the corpus clip has {entry['n_frames']}")
    return frames


def evaluate(
    results_dir: Union[str, Path],
    corpus: Corpus,
    config: ClearLensConfig,
    name: str = "results",
    split: Optional[str] = None,
    out_dir: Optional[Union[str, Path]] = None,
) -> MetricsReport:
    """
    Score ``results_dir/<clip>/frame_*`` against the clean frames of the corpus.

    Args:
        results_dir: one sub-directory per clip id.
        corpus: ground-truth corpus; every clip of ``split`` must have results.
        config: flow estimator settings for E_warp.
        name: method label in the report tables.
        split: corpus split, ``eval.split`` by default.
        out_dir: where the report files go; ``results_dir`` by default.

    Returns:
        The saved MetricsReport.
    """
    results_dir = Path(results_dir)
    report = MetricsReport(name=name)
    for clip in tqdm(_clips(corpus, split or config.eval.split), desc=f"Evaluating {name}"):
        outputs = load_results(results_dir, corpus, clip.clip_id)
        report.clips.append(clip_report(clip.clip_id, outputs, clip.clean, config.flow))
    path = report.save(Path(out_dir) if out_dir else results_dir, stem=f"metrics_{name}")
    agg = report.aggregates()
    logger.info(
        f"{name}: PSNR {agg['psnr']['mean']:.2f} dB, SSIM {agg['ssim']['mean']:.4f}, "
        f"E_warp {agg.get('warp_error', {}).get('mean', float('nan')):.5f} ({path})"
    )
    return report


# ---------------------------------------------------------------------- #
#  Studies
# ---------------------------------------------------------------------- #
def ablation_study(
    model: SingleFrameModel,
    corpus: Corpus,
    config: ClearLensConfig,
    out_dir: Union[str, Path],
    names: Sequence[str] = tuple(ABLATIONS),
) -> pd.DataFrame:
    """Stage-one quality per ablation toggle, with the contaminated input as a baseline row."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clips = _clips(corpus, config.eval.split)
    baseline = MetricsReport(name="input", clips=[clip_report(c.clip_id, c.inputs, c.clean, config.flow) for c in clips])
    baseline.save(out_dir, stem="ablation_input")
    reports = [baseline]
    for name in names:
        if name not in ABLATIONS:
            raise ConfigError(f"Unknown ablation '{name}', expected one of {sorted(ABLATIONS)}")
        report = MetricsReport(name=name)
        for clip in tqdm(clips, desc=f"Ablation {name}"):
            run = run_stage_one(model, clip.inputs, config.flow, n_neighbors=config.train.neighbors, ablation=ABLATIONS[name])
            report.clips.append(clip_report(clip.clip_id, run.outputs, clip.clean, config.flow))
        report.save(out_dir, stem=f"ablation_{name}")
        reports.append(report)
    table = comparison_table(reports)
    table.to_csv(out_dir / "ablations.csv", index=False)
    logger.info(f"Ablation table:\n{table.to_string(index=False)}")
    return table


def frame_count_study(model: SingleFrameModel, corpus: Corpus, config: ClearLensConfig, out_dir: Union[str, Path]) -> pd.DataFrame:
    """
    Restore the middle frame of the first ``eval.frame_study_clip_len`` frames
    of every long-enough clip with 1, 2, ... neighbours.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    length = config.eval.frame_study_clip_len
    middle = length // 2
    counts = range(1, min(config.eval.max_neighbors, length - 1) + 1)
    rows = []
    clips = [c for c in _clips(corpus, config.eval.split) if c.n_frames >= length]
    if not clips:
        logger.warning(f"No clip has {length} frames; frame-count study is empty")
    with no_grad():
        for clip in tqdm(clips, desc="Frame-count study"):
            padded, (h, w) = pad_to_stride(clip.inputs[:length])
            flows = FlowSource(padded, config.flow)
            clean = clip.clean[middle]
            for count in counts:
                result = single_frame_restore(model, padded, middle, flows, neighbors=neighbor_order(middle, length, count))
                out = np.clip(to_array(result.output)[:h, :w], 0.0, 1.0)
                rows.append({"clip_id": clip.clip_id, "neighbors": count, "psnr": psnr(out, clean), "ssim": ssim(out, clean)})
    table = pd.DataFrame(rows, columns=["clip_id", "neighbors", "psnr", "ssim"])
    table.to_csv(out_dir / "frame_study.csv", index=False)
    if len(table):
        summary = table.groupby("neighbors")[["psnr", "ssim"]].mean().reset_index()
        summary.to_csv(out_dir / "frame_study_summary.csv", index=False)
        logger.info(f"Frame-count study:\n{summary.to_string(index=False)}")
    return table


def recurrence_trace(
    model: SingleFrameModel,
    corpus: Corpus,
    config: ClearLensConfig,
    out_dir: Union[str, Path],
    tol: float = 1e-9,
) -> Tuple[pd.DataFrame, float]:
    """PSNR(T^i, C) and PSNR(P^i, C) per iteration; also the share of frames whose P^i PSNR never drops."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    monotone: List[bool] = []
    with no_grad():
        for clip in tqdm(_clips(corpus, config.eval.split), desc="Recurrence trace"):
            padded, (h, w) = pad_to_stride(clip.inputs)
            flows = FlowSource(padded, config.flow)
            for t in range(clip.n_frames):
                result = single_frame_restore(model, padded, t, flows, n_neighbors=config.train.neighbors)
                trace = []
                for i, rec in enumerate(result.iterations):
                    restored = psnr(np.clip(to_array(rec.restored)[:h, :w], 0, 1), clip.clean[t])
                    temporal = psnr(np.clip(to_array(rec.temporal)[:h, :w], 0, 1), clip.clean[t])
                    rows.append({"clip_id": clip.clip_id, "frame": t, "iteration": i + 1, "psnr_restored": restored, "psnr_temporal": temporal})
                    trace.append(restored)
                monotone.append(bool(np.all(np.diff(trace) >= -tol)))
    table = pd.DataFrame(rows, columns=["clip_id", "frame", "iteration", "psnr_restored", "psnr_temporal"])
    fraction = float(np.mean(monotone)) if monotone else float("nan")
    table.to_csv(out_dir / "recurrence.csv", index=False)
    write_json(out_dir / "recurrence_summary.json", {"frames": len(monotone), "non_decreasing_fraction": fraction})
    logger.info(f"P^i PSNR non-decreasing on {fraction:.1%} of {len(monotone)} frames")
    return table, fraction


def _region_epe(flow: np.ndarray, gt: np.ndarray, region: np.ndarray) -> Optional[float]:
    try:
        return epe(flow, gt, region)
    except EmptyRegionError:
        return None


def flow_completion_report(model: SingleFrameModel, corpus: Corpus, config: ClearLensConfig) -> pd.DataFrame:
    """
    One row per (clip, target, neighbour): EPE of the estimated flow F_{t->k}
    and of its completion, inside and outside the ground-truth mask of frame t.
    """
    rows = []
    with no_grad():
        for clip in tqdm(_clips(corpus, config.eval.split), desc="Flow completion"):
            padded, (h, w) = pad_to_stride(clip.inputs)
            flows = FlowSource(padded, config.flow)
            for t in range(clip.n_frames):
                inside = clip.masks[t] > 0.5
                image = to_tensor(padded[t])
                for k in neighbor_order(t, clip.n_frames, config.train.neighbors):
                    degraded = flows(t, k)
                    flow = to_tensor(degraded)
                    attention = detect_attention(model.attention, image, flow)
                    completed = to_array(complete_flow(model.completion, flow, image, attention))[:h, :w]
                    degraded = degraded[:h, :w]
                    gt = clip.gt_flow(t, k)
                    rows.append(
                        {
                            "clip_id": clip.clip_id,
                            "frame": t,
                            "neighbor": k,
                            "epe_inside_input": _region_epe(degraded, gt, inside),
                            "epe_inside_completed": _region_epe(completed, gt, inside),
                            "epe_outside_input": _region_epe(degraded, gt, ~inside),
                            "epe_outside_completed": _region_epe(completed, gt, ~inside),
                        }
                    )
    return pd.DataFrame(
        rows,
        columns=[
            "clip_id",
            "frame",
            "neighbor",
            "epe_inside_input",
            "epe_inside_completed",
            "epe_outside_input",
            "epe_outside_completed",
        ],
    )


def summarize_flow_report(table: pd.DataFrame) -> Dict[str, float]:
    summary = {col: float(pd.to_numeric(table[col], errors="coerce").mean()) for col in table.columns if col.startswith("epe_")}
    inside_in = summary.get("epe_inside_input", float("nan"))
    if inside_in and np.isfinite(inside_in):
        summary["inside_reduction"] = 1.0 - summary["epe_inside_completed"] / inside_in
    summary["outside_change"] = summary.get("epe_outside_completed", float("nan")) - summary.get("epe_outside_input", float("nan"))
    return summary


def flow_ablation(checkpoints: Sequence[Union[str, Path]], corpus: Corpus, config: ClearLensConfig, out_dir: Union[str, Path]) -> pd.DataFrame:
    """
    Flow-completion EPE summary for every checkpoint given; each checkpoint is
    rebuilt with the model layout stored in its own snapshot.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for ckpt in checkpoints:
        model_config = model_config_of(ckpt)
        run_config = config.model_copy(update={"model": model_config})
        model = load_single_frame(ckpt, run_config)
        table = flow_completion_report(model, corpus, run_config)
        row = {"checkpoint": str(ckpt), "layer_kind": model_config.layer_kind, "upsampler": model_config.upsampler}
        row.update(summarize_flow_report(table))
        rows.append(row)
    result = pd.DataFrame(rows)
    result.to_csv(out_dir / "flow_ablation.csv", index=False)
    logger.info(f"Flow-completion variants:\n{result.to_string(index=False)}")
    return result
