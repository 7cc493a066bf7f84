"""
Paired-clip corpus: generation, on-disk layout and loading.

Layout under ``out_dir``::

    manifest.json
    clips/<split>_<idx:04d>/
        input_00000.png   clean_00000.png   mask_00000.png
        input_00000.f32   clean_00000.f32
        flow_00000_00001.flo   ...   (0 < |k - t| <= flow_radius)

Every clip is generated from ``SeedSequence([seed, split_id, idx])`` so clips
are independent of generation order and of the worker count.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from src.states.config import SynthConfig
from src.synth.contaminant import ContaminantSpec, composite_contaminants, derive_gt_attention, random_contaminant_spec
from src.synth.scene import SceneSpec, analytic_flow, cumulative_motions, gen_background_clip, random_scene_spec
from src.utils.errors import CorpusError
from src.utils.io import read_flo, read_json, read_png, read_raw, write_flo, write_json, write_png, write_raw
from src.utils.logging import get_logger

logger = get_logger(__name__)

MANIFEST = "manifest.json"
MANIFEST_VERSION = 1
SPLIT_IDS = {"train": 0, "test": 1}
CLIP_CACHE_SIZE = 16


@dataclass
class Sample:
    """One generated clip held in memory."""

    clip_id: str
    split: str
    inputs: np.ndarray  # (M, H, W, 3)
    clean: np.ndarray  # (M, H, W, 3)
    masks: np.ndarray  # (M, H, W), binary
    alphas: np.ndarray  # (M, H, W)
    scene: SceneSpec
    contaminant: ContaminantSpec
    flow_fn: Callable[[int, int], np.ndarray] = field(repr=False)

    @property
    def n_frames(self) -> int:
        return int(self.inputs.shape[0])

    def gt_flow(self, t: int, k: int) -> np.ndarray:
        return self.flow_fn(t, k)


def clip_rng(seed: int, split: str, idx: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, SPLIT_IDS[split], idx]))


def generate_clip(config: SynthConfig, split: str, idx: int) -> Sample:
    if split not in SPLIT_IDS:
        raise CorpusError(f"Unknown split '{split}'")
    rng = clip_rng(config.seed, split, idx)
    size = int(rng.choice(config.sizes))
    n_frames = int(rng.integers(config.min_frames, config.max_frames + 1))
    scene = random_scene_spec(rng, size, n_frames, config.max_speed, config.min_speed, config.affine_jitter)
    clean, flow_fn = gen_background_clip(scene)
    contaminant = random_contaminant_spec(
        rng,
        size,
        size,
        max(scene.background_speed(), 1e-6),
        coverage=(config.coverage_min, config.coverage_max),
        max_blobs=config.max_blobs,
        max_drift=config.max_drift,
    )
    inputs = np.empty_like(clean)
    alphas = np.empty(clean.shape[:3], dtype=np.float32)
    for t in range(n_frames):
        inputs[t], alphas[t] = composite_contaminants(clean[t], contaminant, t)
    masks = derive_gt_attention(alphas, config.tau)
    return Sample(
        clip_id=f"{split}_{idx:04d}",
        split=split,
        inputs=inputs,
        clean=clean,
        masks=masks,
        alphas=alphas,
        scene=scene,
        contaminant=contaminant,
        flow_fn=flow_fn,
    )


# ---------------------------------------------------------------------- #
#  Writing
# ---------------------------------------------------------------------- #
def _frame_name(kind: str, t: int, ext: str) -> str:
    return f"{kind}_{t:05d}.{ext}"


def _flow_name(t: int, k: int) -> str:
    return f"flow_{t:05d}_{k:05d}.flo"


def flow_pairs(n_frames: int, radius: int) -> List[Tuple[int, int]]:
    return [(t, k) for t in range(n_frames) for k in range(n_frames) if 0 < abs(k - t) <= radius]


def write_clip(sample: Sample, clip_dir: Path, flow_radius: int) -> Dict:
    rel = Path("clips") / sample.clip_id
    frames = []
    for t in range(sample.n_frames):
        entry = {
            "input": str(rel / _frame_name("input", t, "png")),
            "clean": str(rel / _frame_name("clean", t, "png")),
            "mask": str(rel / _frame_name("mask", t, "png")),
            "input_raw": str(rel / _frame_name("input", t, "f32")),
            "clean_raw": str(rel / _frame_name("clean", t, "f32")),
        }
        write_png(clip_dir / _frame_name("input", t, "png"), sample.inputs[t])
        write_png(clip_dir / _frame_name("clean", t, "png"), sample.clean[t])
        write_png(clip_dir / _frame_name("mask", t, "png"), sample.masks[t])
        write_raw(clip_dir / _frame_name("input", t, "f32"), sample.inputs[t])
        write_raw(clip_dir / _frame_name("clean", t, "f32"), sample.clean[t])
        frames.append(entry)
    flows = []
    for t, k in flow_pairs(sample.n_frames, flow_radius):
        write_flo(clip_dir / _flow_name(t, k), sample.gt_flow(t, k))
        flows.append([t, k, str(rel / _flow_name(t, k))])
    return {
        "id": sample.clip_id,
        "split": sample.split,
        "height": sample.scene.height,
        "width": sample.scene.width,
        "n_frames": sample.n_frames,
        "scene": sample.scene.model_dump(),
        "contaminant": sample.contaminant.model_dump(),
        "frames": frames,
        "flows": flows,
    }


def _probe_writable(out_dir: Path) -> None:
    probe = out_dir / ".write_probe"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe.write_bytes(b"ok")
        probe.unlink()
    except OSError as e:
        raise CorpusError(f"Output directory {out_dir} is not writable: {e}") from e


def emit_corpus(
    config: SynthConfig,
    out_dir: Union[str, Path],
    splits: Sequence[str] = ("train", "test"),
) -> Dict:
    """
    Generate and write every clip of the requested splits, then the manifest.

    Args:
        config: synthesis section of the run configuration.
        out_dir: corpus root; created if missing.
        splits: which splits to emit (sizes come from ``n_train`` / ``n_test``).

    Returns:
        The manifest that was written.
    """
    out_dir = Path(out_dir)
    _probe_writable(out_dir)
    jobs = []
    for split in splits:
        count = config.n_train if split == "train" else config.n_test
        jobs.extend((split, i) for i in range(count))

    def run(job):
        split, idx = job
        sample = generate_clip(config, split, idx)
        return write_clip(sample, out_dir / "clips" / sample.clip_id, config.flow_radius)

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        entries = list(tqdm(pool.map(run, jobs), total=len(jobs), desc="Synthesising clips"))

    manifest = {
        "version": MANIFEST_VERSION,
        "synth": config.model_dump(mode="json"),
        "clips": entries,
    }
    write_json(out_dir / MANIFEST, manifest)
    logger.info(f"Wrote {len(entries)} clips to {out_dir}")
    return manifest


# ---------------------------------------------------------------------- #
#  Loading
# ---------------------------------------------------------------------- #
@dataclass
class ClipData:
    clip_id: str
    split: str
    inputs: np.ndarray
    clean: np.ndarray
    masks: np.ndarray
    scene: SceneSpec
    flow_files: Dict[Tuple[int, int], Path]
    _cums: Optional[List[np.ndarray]] = field(default=None, repr=False)

    @property
    def n_frames(self) -> int:
        return int(self.inputs.shape[0])

    def gt_flow(self, t: int, k: int) -> np.ndarray:
        """Ground-truth F_{t->k}: from disk when emitted, analytic otherwise."""
        path = self.flow_files.get((t, k))
        if path is not None:
            return read_flo(path)
        if self._cums is None:
            self._cums = cumulative_motions(self.scene)
        return analytic_flow(self.scene, t, k, self._cums)


class Corpus:
    """Read-side view of an emitted corpus; validates the manifest against the files."""

    def __init__(self, root: Union[str, Path], validate: bool = True, cache_size: int = CLIP_CACHE_SIZE):
        self.root = Path(root)
        self.manifest = read_json(self.root / MANIFEST)
        if self.manifest.get("version") != MANIFEST_VERSION:
            raise CorpusError(f"{self.root}: unsupported manifest version {self.manifest.get('version')}")
        self.entries = {c["id"]: c for c in self.manifest["clips"]}
        self.load_clip = lru_cache(maxsize=cache_size)(self._load_clip)
        if validate:
            self.validate()

    def validate(self) -> None:
        for cid, entry in self.entries.items():
            if len(entry["frames"]) != entry["n_frames"]:
                raise CorpusError(f"{cid}: manifest lists {len(entry['frames'])} frames but n_frames={entry['n_frames']}")
            for frame in entry["frames"]:
                for key in ("input_raw", "clean_raw", "mask"):
                    if not (self.root / frame[key]).exists():
                        raise CorpusError(f"{cid}: missing {key} file {frame[key]}")
            for _, _, rel in entry["flows"]:
                if not (self.root / rel).exists():
                    raise CorpusError(f"{cid}: missing flow file {rel}")

    def clip_ids(self, split: Optional[str] = None) -> List[str]:
        return sorted(cid for cid, e in self.entries.items() if split is None or e["split"] == split)

    def _load_clip(self, clip_id: str) -> ClipData:
        """Read one clip; ``load_clip`` keeps the most recent ``cache_size`` of them."""
        if clip_id not in self.entries:
            raise CorpusError(f"Clip '{clip_id}' is not in {self.root / MANIFEST}")
        entry = self.entries[clip_id]
        shape = (entry["height"], entry["width"], 3)
        inputs = np.stack([read_raw(self.root / f["input_raw"], shape) for f in entry["frames"]])
        clean = np.stack([read_raw(self.root / f["clean_raw"], shape) for f in entry["frames"]])
        masks = np.stack([(read_png(self.root / f["mask"], grayscale=True) > 0.5).astype(np.float32) for f in entry["frames"]])
        if masks.shape[1:] != shape[:2]:
            raise CorpusError(f"{clip_id}: mask size {masks.shape[1:]} does not match frames {shape[:2]}")
        clip = ClipData(
            clip_id=clip_id,
            split=entry["split"],
            inputs=inputs,
            clean=clean,
            masks=masks,
            scene=SceneSpec(**entry["scene"]),
            flow_files={(t, k): self.root / rel for t, k, rel in entry["flows"]},
        )
        return clip
