# src/utils/io.py
"""
File formats used across the repo.

- frames/masks: 8-bit PNG through OpenCV (frames are stored RGB in memory, BGR on disk)
- lossless frames: raw little-endian float32, planar (C, H, W)
- flows: Middlebury .flo ("PIEH", int32 width, int32 height, interleaved float32 dx, dy)
"""

import json
from pathlib import Path
from typing import Any, Tuple, Union

import cv2
import numpy as np

from src.utils.errors import CorpusError

PathLike = Union[str, Path]
FLO_MAGIC = b"PIEH"


def _ensure_parent(path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CorpusError(f"Cannot create directory {path.parent}: {e}") from e


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_png(path: PathLike, image: np.ndarray) -> None:
    """Write an H×W×3 RGB frame or an H×W mask in [0, 1] as 8-bit PNG."""
    path = Path(path)
    _ensure_parent(path)
    img = to_uint8(image)
    if img.ndim == 3:
        img = img[:, :, ::-1]
    if not cv2.imwrite(str(path), img):
        raise CorpusError(f"Failed to write PNG: {path}")


def read_png(path: PathLike, grayscale: bool = False) -> np.ndarray:
    path = Path(path)
    flag = cv2.IMREAD_GRAYSCALE if grayscale else cv2.IMREAD_COLOR
    img = cv2.imread(str(path), flag)
    if img is None:
        raise CorpusError(f"Missing or unreadable image: {path}")
    if img.ndim == 3:
        img = img[:, :, ::-1]
    return img.astype(np.float32) / 255.0


def write_raw(path: PathLike, image: np.ndarray) -> None:
    """H×W×C float frame -> planar little-endian float32."""
    path = Path(path)
    _ensure_parent(path)
    planar = np.ascontiguousarray(np.moveaxis(np.atleast_3d(image), -1, 0), dtype="<f4")
    try:
        planar.tofile(path)
    except OSError as e:
        raise CorpusError(f"Failed to write raw frame {path}: {e}") from e


def read_raw(path: PathLike, shape: Tuple[int, int, int]) -> np.ndarray:
    """Inverse of write_raw; ``shape`` is (H, W, C)."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"Missing raw frame: {path}")
    h, w, c = shape
    data = np.fromfile(path, dtype="<f4")
    if data.size != h * w * c:
        raise CorpusError(f"Raw frame {path} holds {data.size} values, expected {h}x{w}x{c}")
    return np.moveaxis(data.reshape(c, h, w), 0, -1).astype(np.float32)


def write_flo(path: PathLike, flow: np.ndarray) -> None:
    path = Path(path)
    _ensure_parent(path)
    h, w, _ = flow.shape
    with open(path, "wb") as f:
        f.write(FLO_MAGIC)
        np.array([w, h], dtype="<i4").tofile(f)
        np.ascontiguousarray(flow, dtype="<f4").tofile(f)


def read_flo(path: PathLike) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"Missing flow file: {path}")
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FLO_MAGIC:
            raise CorpusError(f"{path} is not a Middlebury flow file (magic={magic!r})")
        w, h = np.fromfile(f, dtype="<i4", count=2)
        data = np.fromfile(f, dtype="<f4", count=int(w) * int(h) * 2)
    if data.size != w * h * 2:
        raise CorpusError(f"Truncated flow file: {path}")
    return data.reshape(int(h), int(w), 2).astype(np.float32)


def write_json(path: PathLike, payload: Any) -> None:
    path = Path(path)
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path: PathLike) -> Any:
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"Missing manifest: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
