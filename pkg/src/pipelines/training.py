"""
Two-phase training schedule.

    train_single_stage     Ψ with attention detection, L = L_att + L_flow + λ1·L_fusion + λ2·L_spatial
    generate_intermediate  trained stage one over the whole corpus, writes {P_t}
    train_multi_stage      sequential refinement, L = L_flow + λ1·L_fusion + λ2·L_spatial + λ3·L_temporal

Every sample is drawn from its own ``SeedSequence([seed, stage, epoch, index])``
and consumed in index order, so loss curves do not depend on how many loader
threads are running.

Run directory layout::

    checkpoints/stage1/epoch_0001/ ...
    checkpoints/stage2/epoch_0001/ ...
    loss_stage1.csv   loss_stage2.csv
    intermediate/manifest.json   intermediate/clips/<id>/stage1_00000.f32
"""

from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Deque, Dict, Generic, Iterator, List, Optional, Sequence, TypeVar, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.autodiff import functional as F
from src.autodiff.module import Module
from src.autodiff.optim import Adam
from src.autodiff.tensor import DiffTensor
from src.losses.objectives import FrameTargets, LossBreakdown, single_stage_loss, stage2_total_loss
from src.losses.terms import fusion_loss, l1_flow_loss, pyramid_perceptual_loss, temporal_loss
from src.networks.models import MultiFrameModel, SingleFrameModel
from src.networks.restoration import FeaturePyramidExtractor
from src.pipelines.inference import load_single_frame, run_stage_one
from src.pipelines.multi_frame import FlowFn, make_flow_fn, refine_graph
from src.pipelines.single_frame import FlowSource, neighbor_order, restore_frame
from src.states.checkpoint import ModelCheckpoint
from src.states.config import ClearLensConfig, TrainConfig
from src.synth.corpus import CLIP_CACHE_SIZE, ClipData, Corpus
from src.utils.errors import CorpusError
from src.utils.io import read_json, read_raw, write_json, write_png, write_raw
from src.utils.logging import get_logger
from src.utils.tensors import to_tensor

logger = get_logger(__name__)

STAGE_ONE = "stage1"
STAGE_TWO = "stage2"
STAGE_IDS = {STAGE_ONE: 1, STAGE_TWO: 2}
INTERMEDIATE_VERSION = 1

T = TypeVar("T")


def sample_rng(seed: int, stage: str, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, STAGE_IDS[stage], epoch, index]))


def stage_dir(run_dir: Union[str, Path], stage: str) -> Path:
    return Path(run_dir) / "checkpoints" / stage


# ---------------------------------------------------------------------- #
#  Data loading
# ---------------------------------------------------------------------- #
class Prefetcher(Generic[T]):
    """
    Bounded look-ahead over ``build(i)`` for i in range(n).

    At most ``depth`` samples are in flight on ``workers`` threads; results
    come back in index order regardless of which finishes first.
    """

    def __init__(self, build: Callable[[int], T], n: int, workers: int = 2, depth: int = 4):
        self.build = build
        self.n = n
        self.workers = workers
        self.depth = max(1, depth)

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[T]:
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            pending: Deque[Future] = deque()
            next_index = 0
            while next_index < self.n and len(pending) < self.depth:
                pending.append(pool.submit(self.build, next_index))
                next_index += 1
            while pending:
                result = pending.popleft().result()
                if next_index < self.n:
                    pending.append(pool.submit(self.build, next_index))
                    next_index += 1
                yield result


@dataclass(frozen=True)
class CropWindow:
    y0: int
    x0: int
    size: int

    @property
    def window(self):
        return self.y0, self.x0, self.size, self.size

    def __call__(self, array: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(array[self.y0:self.y0 + self.size, self.x0:self.x0 + self.size])


def random_crop(rng: np.random.Generator, height: int, width: int, size: int) -> CropWindow:
    if size > height or size > width:
        raise CorpusError(f"Crop {size} does not fit a {height}x{width} clip")
    return CropWindow(int(rng.integers(height - size + 1)), int(rng.integers(width - size + 1)), size)


@dataclass
class StageOneSample:
    clip_id: str
    t: int
    neighbors: List[int]
    target: np.ndarray
    references: List[np.ndarray]
    flows_tr: List[np.ndarray]
    flows_rt: List[np.ndarray]
    clean: np.ndarray
    mask_t: np.ndarray
    masks_k: List[np.ndarray]
    gt_flows: List[np.ndarray]


@dataclass
class StageTwoSample:
    clip_id: str
    start: int
    inputs: np.ndarray  # (L, c, c, 3) stage-one outputs
    clean: np.ndarray  # (L, c, c, 3)
    gt_back: List[np.ndarray]  # F^gt_{s->s-1} for s = start+1 .. start+L-1


class _ClipSampler:
    def __init__(self, corpus: Corpus, clip_ids: Sequence[str], config: ClearLensConfig, stage: str):
        if not clip_ids:
            raise CorpusError(f"{corpus.root}: no training clips")
        self.corpus = corpus
        self.clip_ids = list(clip_ids)
        self.config = config
        self.stage = stage

    def _draw(self, epoch: int, index: int):
        rng = sample_rng(self.config.train.seed, self.stage, epoch, index)
        clip = self.corpus.load_clip(self.clip_ids[int(rng.integers(len(self.clip_ids)))])
        return rng, clip


class StageOneSampler(_ClipSampler):
    """(clip, target frame, crop) triples; flows are estimated on full frames then cropped."""

    def __init__(self, corpus: Corpus, clip_ids: Sequence[str], config: ClearLensConfig):
        super().__init__(corpus, clip_ids, config, STAGE_ONE)
        self._flow_sources = lru_cache(maxsize=CLIP_CACHE_SIZE)(self._new_flow_source)

    def _new_flow_source(self, clip_id: str) -> FlowSource:
        return FlowSource(self.corpus.load_clip(clip_id).inputs, self.config.flow)

    def flow_source(self, clip: ClipData) -> FlowSource:
        return self._flow_sources(clip.clip_id)

    def __call__(self, epoch: int, index: int) -> StageOneSample:
        rng, clip = self._draw(epoch, index)
        t = int(rng.integers(clip.n_frames))
        crop = random_crop(rng, clip.inputs.shape[1], clip.inputs.shape[2], self.config.train.crop)
        neighbors = neighbor_order(t, clip.n_frames, self.config.train.neighbors)
        flows = self.flow_source(clip)
        return StageOneSample(
            clip_id=clip.clip_id,
            t=t,
            neighbors=neighbors,
            target=crop(clip.inputs[t]),
            references=[crop(clip.inputs[k]) for k in neighbors],
            flows_tr=[flows(t, k, crop.window) for k in neighbors],
            flows_rt=[flows(k, t, crop.window) for k in neighbors],
            clean=crop(clip.clean[t]),
            mask_t=crop(clip.masks[t]),
            masks_k=[crop(clip.masks[k]) for k in neighbors],
            gt_flows=[crop(clip.gt_flow(t, k)) for k in neighbors],
        )


class StageTwoSampler(_ClipSampler):
    """(clip, start frame, crop) triples over ``stage2_seq_len`` consecutive stage-one outputs."""

    def __init__(self, corpus: Corpus, intermediate: "IntermediateCorpus", clip_ids: Sequence[str], config: ClearLensConfig):
        super().__init__(corpus, clip_ids, config, STAGE_TWO)
        self.intermediate = intermediate

    def __call__(self, epoch: int, index: int) -> StageTwoSample:
        rng, clip = self._draw(epoch, index)
        outputs = self.intermediate.load_outputs(clip.clip_id)
        length = min(self.config.train.stage2_seq_len, clip.n_frames)
        start = int(rng.integers(clip.n_frames - length + 1))
        crop = random_crop(rng, clip.inputs.shape[1], clip.inputs.shape[2], self.config.train.crop)
        frames = range(start, start + length)
        return StageTwoSample(
            clip_id=clip.clip_id,
            start=start,
            inputs=np.stack([crop(outputs[s]) for s in frames]),
            clean=np.stack([crop(clip.clean[s]) for s in frames]),
            gt_back=[crop(clip.gt_flow(s, s - 1)) for s in frames[1:]],
        )


# ---------------------------------------------------------------------- #
#  Per-sample losses
# ---------------------------------------------------------------------- #
def stage_one_step(model: SingleFrameModel, sample: StageOneSample, extractor: FeaturePyramidExtractor, tc: TrainConfig) -> LossBreakdown:
    result = restore_frame(
        model,
        to_tensor(sample.target),
        [to_tensor(r) for r in sample.references],
        [to_tensor(f) for f in sample.flows_tr],
        [to_tensor(f) for f in sample.flows_rt],
        stop_flow_gradient=tc.stop_flow_gradient,
        neighbors=sample.neighbors,
    )
    targets = FrameTargets(
        clean=to_tensor(sample.clean),
        attention_t=to_tensor(sample.mask_t),
        attention_k=[to_tensor(m) for m in sample.masks_k],
        flows=[to_tensor(f) for f in sample.gt_flows],
    )
    return single_stage_loss(result.iterations, targets, extractor, tc.gamma, tc.lambda_fusion, tc.lambda_spatial)


def _average(terms: Sequence[DiffTensor]) -> DiffTensor:
    total = terms[0]
    for term in terms[1:]:
        total = F.add(total, term)
    return F.mul(total, 1.0 / len(terms))


def stage_two_step(
    model: MultiFrameModel,
    sample: StageTwoSample,
    extractor: FeaturePyramidExtractor,
    flow_fn: FlowFn,
    tc: TrainConfig,
) -> LossBreakdown:
    result = refine_graph(model, [to_tensor(f) for f in sample.inputs], flow_fn, stop_flow_gradient=tc.stop_flow_gradient)
    clean = [to_tensor(c) for c in sample.clean]
    records = result.iterations
    flow = _average([l1_flow_loss(r.completed_flow, to_tensor(gt)) for r, gt in zip(records, sample.gt_back)])
    fusion = _average([fusion_loss([r.temporal], clean[t + 1], tc.gamma) for t, r in enumerate(records)])
    spatial = _average([pyramid_perceptual_loss([r.restored], clean[t + 1], extractor) for t, r in enumerate(records)])
    temporal = temporal_loss(result.outputs, list(sample.clean), sample.gt_back, tc.mu)
    total = stage2_total_loss(flow, fusion, spatial, temporal, tc.lambda_fusion, tc.lambda_spatial, tc.lambda_temporal)
    components = {
        "flow": flow.item(),
        "fusion": fusion.item(),
        "spatial": spatial.item(),
        "temporal": temporal.item(),
        "total": total.item(),
    }
    return LossBreakdown(total=total, components=components)


# ---------------------------------------------------------------------- #
#  Optimisation loop
# ---------------------------------------------------------------------- #
class LossCurve:
    """One row per optimiser step: epoch, step and the batch-mean of every loss component."""

    def __init__(self):
        self.rows: List[Dict[str, float]] = []

    def record(self, epoch: int, step: int, components: Sequence[Dict[str, float]]) -> None:
        row: Dict[str, float] = {"epoch": epoch, "step": step}
        for key in components[0]:
            row[key] = float(np.mean([c[key] for c in components]))
        self.rows.append(row)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def epoch_means(self) -> pd.DataFrame:
        df = self.frame()
        return df.drop(columns=["step"]).groupby("epoch").mean() if len(df) else df

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.frame().to_csv(path, index=False)


@dataclass
class TrainingResult:
    model: Module
    checkpoint: Path
    curve: pd.DataFrame


def _run_epoch(
    epoch: int,
    samples: Prefetcher,
    step_fn: Callable[[object], LossBreakdown],
    optimizer: Adam,
    batch: int,
    curve: LossCurve,
) -> None:
    n = len(samples)
    optimizer.zero_grad()
    pending: List[Dict[str, float]] = []
    step = 0
    for sample in samples:
        batch_len = min(batch, n - step * batch)
        loss = step_fn(sample)
        F.mul(loss.total, 1.0 / batch_len).backward()
        pending.append(loss.components)
        if len(pending) == batch_len:
            optimizer.step()
            optimizer.zero_grad()
            curve.record(epoch, step, pending)
            pending = []
            step += 1


def _train(
    model: Module,
    kind: str,
    stage: str,
    build: Callable[[int, int], object],
    step_fn: Callable[[object], LossBreakdown],
    epochs: int,
    config: ClearLensConfig,
    run_dir: Union[str, Path],
) -> TrainingResult:
    tc = config.train
    optimizer = Adam(model.parameters(), tc.lr, tc.beta1, tc.beta2, tc.eps)
    curve = LossCurve()
    ckpt_root = stage_dir(run_dir, stage)
    curve_path = Path(run_dir) / f"loss_{stage}.csv"
    logger.info(f"Training {stage}: {model.num_parameters()} parameters, {epochs} epochs of {tc.samples_per_epoch} samples")
    checkpoint = ckpt_root
    for epoch in tqdm(range(1, epochs + 1), desc=f"Training {stage}"):
        samples = Prefetcher(lambda i: build(epoch, i), tc.samples_per_epoch, tc.workers, tc.prefetch)
        _run_epoch(epoch, samples, step_fn, optimizer, tc.batch, curve)
        checkpoint = ckpt_root / f"epoch_{epoch:04d}"
        ModelCheckpoint.save(model, checkpoint, kind=kind, epoch=epoch, seed=tc.seed, config=config.snapshot())
        curve.save(curve_path)
        means = curve.epoch_means().loc[epoch]
        logger.info(f"{stage} epoch {epoch}: " + ", ".join(f"{k} {v:.5f}" for k, v in means.items()))
    return TrainingResult(model=model, checkpoint=checkpoint, curve=curve.frame())


def train_single_stage(
    config: ClearLensConfig,
    corpus: Corpus,
    run_dir: Union[str, Path],
    model: Optional[SingleFrameModel] = None,
) -> TrainingResult:
    """
    Train the single-frame stage on the corpus' train split.

    Args:
        config: full run configuration; ``train`` and ``model`` sections are used.
        corpus: emitted corpus with ground-truth masks and flows.
        run_dir: where checkpoints and the loss curve are written.
        model: optional starting weights; a freshly initialised model otherwise.

    Returns:
        TrainingResult holding the trained model, the last checkpoint and the loss curve.
    """
    model = model or SingleFrameModel(config.model)
    mc = config.model
    extractor = FeaturePyramidExtractor(mc.perceptual_levels, mc.perceptual_channels, mc.perceptual_seed)
    sampler = StageOneSampler(corpus, corpus.clip_ids("train"), config)
    return _train(
        model,
        "single",
        STAGE_ONE,
        sampler,
        lambda s: stage_one_step(model, s, extractor, config.train),
        config.train.epochs_stage1,
        config,
        run_dir,
    )


# ---------------------------------------------------------------------- #
#  Intermediate corpus
# ---------------------------------------------------------------------- #
def generate_intermediate(
    config: ClearLensConfig,
    corpus: Corpus,
    checkpoint: Union[str, Path, SingleFrameModel],
    out_dir: Union[str, Path],
    splits: Sequence[str] = ("train", "test"),
) -> Dict:
    """
    Run the trained stage one over every clip and write {P_t} as lossless frames.

    Returns the manifest that was written next to the frames.
    """
    out_dir = Path(out_dir)
    if isinstance(checkpoint, SingleFrameModel):
        model, source = checkpoint, "<in-memory>"
    else:
        model, source = load_single_frame(checkpoint, config), str(checkpoint)
    clip_ids = [cid for split in splits for cid in corpus.clip_ids(split)]
    entries = []
    for cid in tqdm(clip_ids, desc="Generating stage-one outputs"):
        clip = corpus.load_clip(cid)
        run = run_stage_one(model, clip.inputs, config.flow, n_neighbors=config.train.neighbors)
        rel = Path("clips") / cid
        frames = []
        for t, frame in enumerate(run.outputs):
            write_raw(out_dir / rel / f"stage1_{t:05d}.f32", frame)
            write_png(out_dir / rel / f"stage1_{t:05d}.png", frame)
            frames.append(str(rel / f"stage1_{t:05d}.f32"))
        entries.append(
            {
                "id": cid,
                "split": clip.split,
                "height": int(clip.inputs.shape[1]),
                "width": int(clip.inputs.shape[2]),
                "n_frames": clip.n_frames,
                "frames": frames,
            }
        )
    manifest = {"version": INTERMEDIATE_VERSION, "checkpoint": source, "clips": entries}
    write_json(out_dir / "manifest.json", manifest)
    logger.info(f"Wrote stage-one outputs for {len(entries)} clips to {out_dir}")
    return manifest


class IntermediateCorpus:
    """Stage-one outputs on disk, checked against the corpus they were generated from."""

    def __init__(self, root: Union[str, Path], corpus: Corpus, cache_size: int = CLIP_CACHE_SIZE):
        self.root = Path(root)
        manifest = read_json(self.root / "manifest.json")
        if manifest.get("version") != INTERMEDIATE_VERSION:
            raise CorpusError(f"{self.root}: unsupported manifest version {manifest.get('version')}")
        self.entries = {c["id"]: c for c in manifest["clips"]}
        self.load_outputs = lru_cache(maxsize=cache_size)(self._load_outputs)
        for cid, entry in self.entries.items():
            if cid not in corpus.entries:
                raise CorpusError(f"{self.root}: clip '{cid}' is not in the corpus at {corpus.root}")
            if entry["n_frames"] != corpus.entries[cid]["n_frames"] or len(entry["frames"]) != entry["n_frames"]:
                raise CorpusError(f"{self.root}: clip '{cid}' frame count disagrees with the corpus")
            for rel in entry["frames"]:
                if not (self.root / rel).exists():
                    raise CorpusError(f"{self.root}: missing stage-one frame {rel}")

    def clip_ids(self, split: Optional[str] = None) -> List[str]:
        return sorted(cid for cid, e in self.entries.items() if split is None or e["split"] == split)

    def _load_outputs(self, clip_id: str) -> np.ndarray:
        if clip_id not in self.entries:
            raise CorpusError(f"No stage-one outputs for clip '{clip_id}' in {self.root}")
        entry = self.entries[clip_id]
        shape = (entry["height"], entry["width"], 3)
        return np.stack([read_raw(self.root / rel, shape) for rel in entry["frames"]])


# ---------------------------------------------------------------------- #
#  Stage two
# ---------------------------------------------------------------------- #
def train_multi_stage(
    config: ClearLensConfig,
    corpus: Corpus,
    intermediate: IntermediateCorpus,
    init: Union[str, Path, SingleFrameModel],
    run_dir: Union[str, Path],
) -> TrainingResult:
    """Fine-tune a copy of the stage-one weights (minus the detector) for temporal consistency."""
    stage_one = init if isinstance(init, SingleFrameModel) else load_single_frame(init, config)
    model = MultiFrameModel.from_single_frame(stage_one, config.model)
    mc = config.model
    extractor = FeaturePyramidExtractor(mc.perceptual_levels, mc.perceptual_channels, mc.perceptual_seed)
    sampler = StageTwoSampler(corpus, intermediate, intermediate.clip_ids("train"), config)
    flow_fn = make_flow_fn(config.flow)
    return _train(
        model,
        "multi",
        STAGE_TWO,
        sampler,
        lambda s: stage_two_step(model, s, extractor, flow_fn, config.train),
        config.train.epochs_stage2,
        config,
        run_dir,
    )
