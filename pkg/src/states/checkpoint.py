"""
ModelCheckpoint
---------------
Directory format:

    manifest.json   architecture hash, config snapshot, epoch, seed, parameter table
    params.bin      every parameter as little-endian float32, concatenated in table order

The architecture hash is the SHA-256 of the sorted "name:shape" list, so a
checkpoint only loads into a network with exactly the same parameters.
"""

import hashlib
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, Field

from src.autodiff.module import Module
from src.utils.errors import CheckpointError
from src.utils.io import read_json, write_json
from src.utils.logging import get_logger

logger = get_logger(__name__)

MANIFEST = "manifest.json"
PARAMS = "params.bin"


def architecture_hash(module: Module) -> str:
    entries = sorted(f"{name}:{tuple(p.data.shape)}" for name, p in module.named_parameters())
    return hashlib.sha256("\n".join(entries).encode("utf-8")).hexdigest()


class ParamEntry(BaseModel):
    name: str
    shape: List[int]
    offset: int
    count: int


class ModelCheckpoint(BaseModel):
    """Manifest half of a checkpoint; parameters live next to it in params.bin."""

    kind: str = Field(..., description="'single' or 'multi'.")
    architecture: str
    epoch: int = 0
    seed: int = 0
    config: Dict[str, Any] = Field(default_factory=dict)
    params: List[ParamEntry] = Field(default_factory=list)

    @classmethod
    def save(
        cls,
        module: Module,
        out_dir: Union[str, Path],
        kind: str,
        epoch: int,
        seed: int,
        config: Optional[Dict[str, Any]] = None,
    ) -> "ModelCheckpoint":
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        entries: List[ParamEntry] = []
        offset = 0
        chunks = []
        for name, p in module.named_parameters():
            data = np.ascontiguousarray(p.data, dtype="<f4")
            entries.append(ParamEntry(name=name, shape=list(data.shape), offset=offset, count=int(data.size)))
            offset += int(data.size)
            chunks.append(data.reshape(-1))
        blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f4")
        blob.astype("<f4").tofile(out_dir / PARAMS)
        ckpt = cls(kind=kind, architecture=architecture_hash(module), epoch=epoch, seed=seed, config=config or {}, params=entries)
        write_json(out_dir / MANIFEST, ckpt.model_dump(mode="json"))
        logger.info(f"Saved {kind} checkpoint (epoch {epoch}) to {out_dir}")
        return ckpt

    @classmethod
    def read(cls, ckpt_dir: Union[str, Path]) -> "ModelCheckpoint":
        ckpt_dir = Path(ckpt_dir)
        if not (ckpt_dir / MANIFEST).exists():
            raise CheckpointError(f"No checkpoint manifest in {ckpt_dir}")
        return cls(**read_json(ckpt_dir / MANIFEST))

    def load_into(self, module: Module, ckpt_dir: Union[str, Path]) -> None:
        ckpt_dir = Path(ckpt_dir)
        expected = architecture_hash(module)
        if expected != self.architecture:
            raise CheckpointError(
                f"Checkpoint {ckpt_dir} was written for a different architecture "
                f"({self.architecture[:12]} vs {expected[:12]})"
            )
        path = ckpt_dir / PARAMS
        if not path.exists():
            raise CheckpointError(f"Missing parameter file {path}")
        blob = np.fromfile(path, dtype="<f4")
        total = sum(e.count for e in self.params)
        if blob.size != total:
            raise CheckpointError(f"{path} holds {blob.size} values, manifest expects {total}")
        state = {e.name: blob[e.offset:e.offset + e.count].reshape(e.shape) for e in self.params}
        module.load_state_dict(state)


def load_checkpoint(module: Module, ckpt_dir: Union[str, Path]) -> ModelCheckpoint:
    """Read a checkpoint directory into ``module``; returns its manifest."""
    ckpt = ModelCheckpoint.read(ckpt_dir)
    ckpt.load_into(module, ckpt_dir)
    return ckpt
