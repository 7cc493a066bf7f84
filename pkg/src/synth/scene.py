"""
Procedural moving-camera backgrounds with exact ground-truth flow.

Motion convention: content at pixel p in frame t appears at ``Mot_t(p)`` in
frame t+1. With the cumulative maps ``Cum_t = Mot_{t-1} ... Mot_0`` the flow
from frame t to frame k is ``F_{t->k}(p) = Cum_k Cum_t^{-1} p - p``, so that
``warp(C_k, F_{t->k}) == C_t`` wherever both frames see the same content.
"""

from typing import Callable, List, Optional, Tuple

import cv2
import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator
from scipy import ndimage

from src.utils.errors import DegenerateMotionError

MIN_ABS_DET = 0.1


def translation(dx: float, dy: float) -> List[List[float]]:
    return [[1.0, 0.0, float(dx)], [0.0, 1.0, float(dy)]]


class SceneSpec(BaseModel):
    """
    Background clip description.

    Attributes:
        height, width: frame resolution.
        n_frames: clip length M (>= 3).
        texture_seed: seed of the procedural texture.
        motions: per-frame 2x3 affine increments; a single entry is reused for every frame.
    """

    height: int = Field(..., ge=8)
    width: int = Field(..., ge=8)
    n_frames: int = Field(..., ge=3)
    texture_seed: int = 0
    motions: List[List[List[float]]] = Field(default_factory=lambda: [translation(0.0, 0.0)])

    @field_validator("motions")
    @classmethod
    def _check_motions(cls, motions):
        if not motions:
            raise ValueError("at least one motion is required")
        for m in motions:
            arr = np.asarray(m, dtype=np.float64)
            if arr.shape != (2, 3):
                raise ValueError(f"affine motion must be 2x3, got {arr.shape}")
        return motions

    @model_validator(mode="after")
    def _check_motion_count(self):
        if len(self.motions) not in (1, self.n_frames - 1):
            raise ValueError(f"expected 1 or {self.n_frames - 1} motions, got {len(self.motions)}")
        return self

    def motion(self, t: int) -> np.ndarray:
        m = self.motions[0] if len(self.motions) == 1 else self.motions[t]
        return _homogeneous(m)

    def background_speed(self) -> float:
        """Mean translation magnitude per frame (px)."""
        return float(np.mean([np.hypot(m[0][2], m[1][2]) for m in self.motions]))


def check_motions(spec: SceneSpec) -> None:
    for m in spec.motions:
        det = float(np.linalg.det(np.asarray(m, dtype=np.float64)[:, :2]))
        if abs(det) <= MIN_ABS_DET:
            raise DegenerateMotionError(f"affine motion {m} is not invertible (|det| = {abs(det):.3g} <= {MIN_ABS_DET})")


def _homogeneous(m) -> np.ndarray:
    h = np.eye(3)
    h[:2] = np.asarray(m, dtype=np.float64)
    return h


def cumulative_motions(spec: SceneSpec) -> List[np.ndarray]:
    cums = [np.eye(3)]
    for t in range(spec.n_frames - 1):
        cums.append(spec.motion(t) @ cums[-1])
    return cums


def _pixel_grid(height: int, width: int) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return np.stack([xs, ys, np.ones_like(xs)], axis=0).reshape(3, -1)


def analytic_flow(spec: SceneSpec, t: int, k: int, cums: Optional[List[np.ndarray]] = None) -> np.ndarray:
    """Exact F^gt_{t->k} as an H×W×2 float32 field."""
    cums = cums or cumulative_motions(spec)
    grid = _pixel_grid(spec.height, spec.width)
    mapped = cums[k] @ np.linalg.inv(cums[t]) @ grid
    flow = (mapped[:2] - grid[:2]).T.reshape(spec.height, spec.width, 2)
    return flow.astype(np.float32)


# ---------------------------------------------------------------------- #
#  Texture
# ---------------------------------------------------------------------- #
def _value_noise(rng: np.random.Generator, height: int, width: int, octaves: int = 4, base_cell: int = 32) -> np.ndarray:
    out = np.zeros((height, width, 3))
    amp_total = 0.0
    for o in range(octaves):
        cell = max(2, base_cell // (2 ** o))
        gh, gw = height // cell + 3, width // cell + 3
        grid = rng.random((gh, gw, 3))
        up = ndimage.zoom(grid, (cell, cell, 1), order=3, mode="nearest")[:height, :width]
        amp = 0.5 ** o
        out += amp * up
        amp_total += amp
    out /= amp_total
    lo, hi = out.min(), out.max()
    return 0.1 + 0.8 * (out - lo) / max(hi - lo, 1e-8)


def _draw_shapes(rng: np.random.Generator, canvas: np.ndarray, n_shapes: int) -> np.ndarray:
    h, w, _ = canvas.shape
    for _ in range(n_shapes):
        layer = np.zeros((h, w), dtype=np.float32)
        color = rng.uniform(0.05, 0.95, size=3)
        cx, cy = int(rng.integers(0, w)), int(rng.integers(0, h))
        size = int(rng.integers(4, max(6, min(h, w) // 5)))
        if rng.random() < 0.5:
            cv2.circle(layer, (cx, cy), size, 1.0, thickness=-1)
        else:
            half = int(rng.integers(3, size + 1))
            cv2.rectangle(layer, (cx - size, cy - half), (cx + size, cy + half), 1.0, thickness=-1)
        layer = ndimage.gaussian_filter(layer, 0.7)[..., None]
        opacity = rng.uniform(0.6, 0.9)
        canvas = canvas * (1 - opacity * layer) + color * opacity * layer
    return canvas


def _canvas_bounds(spec: SceneSpec, cums: List[np.ndarray], margin: int = 6) -> Tuple[int, int, int, int]:
    corners = np.array([[0, 0, 1], [spec.width - 1, 0, 1], [0, spec.height - 1, 1], [spec.width - 1, spec.height - 1, 1]], dtype=np.float64).T
    pts = np.concatenate([(np.linalg.inv(c) @ corners)[:2] for c in cums], axis=1)
    x0 = int(np.floor(pts[0].min())) - margin
    y0 = int(np.floor(pts[1].min())) - margin
    x1 = int(np.ceil(pts[0].max())) + margin
    y1 = int(np.ceil(pts[1].max())) + margin
    return x0, y0, x1, y1


def make_texture(spec: SceneSpec, cums: List[np.ndarray]):
    """Texture covering every frame's footprint, plus its world-space origin."""
    rng = np.random.default_rng(spec.texture_seed)
    x0, y0, x1, y1 = _canvas_bounds(spec, cums)
    h, w = y1 - y0 + 1, x1 - x0 + 1
    tex = _value_noise(rng, h, w)
    n_shapes = int(rng.integers(6, 14)) * max(1, (h * w) // (96 * 96))
    tex = _draw_shapes(rng, tex, n_shapes)
    tex = ndimage.gaussian_filter(tex, sigma=(0.8, 0.8, 0))
    return np.clip(tex, 0.0, 1.0), (x0, y0)


def gen_background_clip(spec: SceneSpec) -> Tuple[np.ndarray, Callable[[int, int], np.ndarray]]:
    """
    Render the clean clip {C_t} as an (M, H, W, 3) float32 array.

    Returns the frames and a ``flow(t, k)`` callable giving F^gt_{t->k}.
    Raises DegenerateMotionError for (near-)singular motions.
    """
    check_motions(spec)
    cums = cumulative_motions(spec)
    tex, (ox, oy) = make_texture(spec, cums)
    grid = _pixel_grid(spec.height, spec.width)
    frames = np.empty((spec.n_frames, spec.height, spec.width, 3), dtype=np.float32)
    for t, cum in enumerate(cums):
        world = np.linalg.inv(cum) @ grid
        xs = (world[0] - ox).reshape(spec.height, spec.width)
        ys = (world[1] - oy).reshape(spec.height, spec.width)
        for c in range(3):
            frames[t, :, :, c] = ndimage.map_coordinates(tex[:, :, c], [ys, xs], order=3, mode="nearest")
    np.clip(frames, 0.0, 1.0, out=frames)

    def flow(t: int, k: int) -> np.ndarray:
        return analytic_flow(spec, t, k, cums)

    return frames, flow


def random_scene_spec(
    rng: np.random.Generator,
    size: int,
    n_frames: int,
    max_speed: float = 4.0,
    min_speed: float = 1.0,
    affine_jitter: float = 0.0,
) -> SceneSpec:
    """Per-clip random translation velocity in [-max_speed, max_speed]^2 (optionally with a small affine part)."""
    while True:
        v = rng.uniform(-max_speed, max_speed, size=2)
        if np.hypot(*v) >= min_speed:
            break
    motion = translation(v[0], v[1])
    if affine_jitter > 0:
        a = rng.uniform(-affine_jitter, affine_jitter, size=2)
        motion[0][0] += a[0]
        motion[1][1] += a[0]
        motion[0][1] -= a[1]
        motion[1][0] += a[1]
        # keep the image centre moving by v only
        cx, cy = (size - 1) / 2.0, (size - 1) / 2.0
        lin = np.array([[motion[0][0], motion[0][1]], [motion[1][0], motion[1][1]]])
        shift = np.array([cx, cy]) - lin @ np.array([cx, cy])
        motion[0][2] += float(shift[0])
        motion[1][2] += float(shift[1])
    return SceneSpec(
        height=size,
        width=size,
        n_frames=n_frames,
        texture_seed=int(rng.integers(0, 2**31 - 1)),
        motions=[motion],
    )
