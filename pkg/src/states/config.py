"""
Typed configuration.

Every section of the INI file maps onto one pydantic model; unknown sections
or keys are rejected so typos never silently fall back to defaults.

    [train]
    lr = 1e-4
    neighbors = 4
"""

import configparser
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.utils.errors import ConfigError
from src.utils.logging import get_logger

logger = get_logger(__name__)

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"
NETWORK_STRIDE = 8


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")

    @field_validator("*", mode="before")
    @classmethod
    def _split_lists(cls, value, info):
        field = cls.model_fields.get(info.field_name)
        if isinstance(value, str) and field is not None and "List" in str(field.annotation):
            return [v.strip() for v in value.split(",") if v.strip()]
        return value


class SynthConfig(_Section):
    seed: int = 0
    n_train: int = Field(32, ge=1)
    n_test: int = Field(8, ge=0)
    sizes: List[int] = Field(default_factory=lambda: [64, 80, 96])
    min_frames: int = Field(9, ge=3)
    max_frames: int = Field(15, ge=3)
    max_speed: float = Field(4.0, gt=0)
    min_speed: float = Field(1.0, ge=0)
    affine_jitter: float = Field(0.0, ge=0)
    coverage_min: float = Field(0.08, gt=0, lt=1)
    coverage_max: float = Field(0.30, gt=0, lt=1)
    max_blobs: int = Field(4, ge=1)
    max_drift: float = Field(0.4, ge=0)
    tau: float = Field(0.15, gt=0, lt=1)
    flow_radius: int = Field(4, ge=1)
    workers: int = Field(4, ge=1)

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.min_frames > self.max_frames:
            raise ValueError(f"min_frames ({self.min_frames}) exceeds max_frames ({self.max_frames})")
        if self.coverage_min > self.coverage_max:
            raise ValueError("coverage_min exceeds coverage_max")
        if self.min_speed > self.max_speed:
            raise ValueError("min_speed exceeds max_speed")
        if any(s < 16 for s in self.sizes):
            raise ValueError(f"frame sizes must be >= 16, got {self.sizes}")
        return self


class FlowConfig(_Section):
    levels: int = Field(3, ge=1)
    block: int = Field(8, ge=2)
    search: int = Field(4, ge=1)
    occlusion_tol: float = Field(1.0, gt=0)


class ModelConfig(_Section):
    init_seed: int = 0
    attention_channels: List[int] = Field(default_factory=lambda: [16, 32, 64])
    completion_channels: List[int] = Field(default_factory=lambda: [16, 32, 64])
    dilations: List[int] = Field(default_factory=lambda: [2, 4, 8, 16])
    layer_kind: Literal["fusion", "gated", "conv"] = "fusion"
    upsampler: Literal["convex", "bilinear"] = "convex"
    flow_norm: float = Field(8.0, gt=0)
    hidden_channels: int = Field(32, ge=1)
    spatial_channels: List[int] = Field(default_factory=lambda: [16, 32, 64])
    perceptual_levels: int = Field(3, ge=1)
    perceptual_channels: int = Field(8, ge=1)
    perceptual_seed: int = 7

    @field_validator("attention_channels", "completion_channels", "spatial_channels")
    @classmethod
    def _three_levels(cls, v):
        if len(v) != 3 or any(c < 1 for c in v):
            raise ValueError(f"expected three positive channel counts, got {v}")
        return v


class TrainConfig(_Section):
    lr: float = Field(1e-4, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    batch: int = Field(8, ge=1)
    neighbors: int = Field(4, ge=2)
    crop: int = Field(48, ge=NETWORK_STRIDE)
    gamma: float = Field(0.8, gt=0)
    lambda_fusion: float = Field(100.0, gt=0)
    lambda_spatial: float = Field(10.0, gt=0)
    lambda_temporal: float = Field(10.0, gt=0)
    mu: float = Field(0.02, gt=0)
    epochs_stage1: int = Field(40, ge=1)
    epochs_stage2: int = Field(10, ge=1)
    samples_per_epoch: int = Field(64, ge=1)
    stage2_seq_len: int = Field(4, ge=2)
    stop_flow_gradient: bool = False
    seed: int = 0
    workers: int = Field(2, ge=1)
    prefetch: int = Field(4, ge=1)

    @field_validator("neighbors")
    @classmethod
    def _even(cls, v):
        if v % 2:
            raise ValueError(f"neighbors must be even (2N), got {v}")
        return v

    @field_validator("crop")
    @classmethod
    def _stride_multiple(cls, v):
        if v % NETWORK_STRIDE:
            raise ValueError(f"crop must be a multiple of {NETWORK_STRIDE}, got {v}")
        return v


class EvalConfig(_Section):
    split: Literal["train", "test"] = "test"
    max_neighbors: int = Field(8, ge=1)
    frame_study_clip_len: int = Field(9, ge=3)


class ClearLensConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    synth: SynthConfig = Field(default_factory=SynthConfig)
    flow: FlowConfig = Field(default_factory=FlowConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @model_validator(mode="after")
    def _crop_fits(self):
        if self.train.crop > min(self.synth.sizes):
            raise ValueError(f"train.crop ({self.train.crop}) exceeds the smallest frame size {min(self.synth.sizes)}")
        if self.train.neighbors > 2 * self.synth.flow_radius:
            raise ValueError("train.neighbors needs flows further than synth.flow_radius")
        return self

    def with_seed(self, seed: Optional[int]) -> "ClearLensConfig":
        """Copy with ``train.seed`` and ``synth.seed`` overridden (``--seed``)."""
        if seed is None:
            return self
        data = self.model_dump()
        data["train"]["seed"] = seed
        data["synth"]["seed"] = seed
        return ClearLensConfig(**data)

    def snapshot(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


def _parse(parser: configparser.ConfigParser, source: str) -> ClearLensConfig:
    known = set(ClearLensConfig.model_fields)
    unknown = [s for s in parser.sections() if s not in known]
    if unknown:
        raise ConfigError(f"{source}: unknown section(s) {unknown}; expected one of {sorted(known)}")
    data = {section: dict(parser.items(section)) for section in parser.sections()}
    try:
        return ClearLensConfig(**data)
    except ValidationError as e:
        raise ConfigError(f"{source}: {e}") from e


def load_config(path: Union[str, Path]) -> ClearLensConfig:
    """Read an INI file; a bare preset name (``desk``/``full``) resolves to ``configs/<name>.ini``."""
    path = Path(path)
    if not path.suffix and not path.exists():
        path = CONFIG_DIR / f"{path.name}.ini"
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from e
    config = _parse(parser, str(path))
    logger.debug(f"Loaded config from {path}")
    return config


def config_from_string(text: str) -> ClearLensConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from e
    return _parse(parser, "<string>")
