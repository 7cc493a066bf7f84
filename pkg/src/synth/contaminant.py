"""
Lens contaminants as 2D compositing layers.

Each blob is a deformed ellipse, rasterised with anti-aliasing and defocused
with a Gaussian of radius sigma_b. The three material roles of a contaminant
map onto three per-blob scalars:

    transparent (light attenuation) -> a
    glass       (refraction)        -> d
    emission    (scattered light)   -> e

and the image formation is

    I(p) = clamp((1 - a*alpha(p)) * C(p + d*grad(alpha)(p)) + e*alpha(p), 0, 1)
"""

from typing import List, Tuple, Union

import cv2
import numpy as np
from pydantic import BaseModel, Field
from scipy import ndimage

from src.autodiff.functional import bilinear_sample
from src.utils.errors import ConfigError

SUPERSAMPLE = 4
SUBPIXEL_SHIFT = 4
DEFAULT_TAU = 0.15


class BlobSpec(BaseModel):
    center: Tuple[float, float]
    control_points: List[Tuple[float, float]] = Field(..., min_length=3)
    sigma_b: float = Field(..., gt=0)
    attenuation: float = Field(..., ge=0.0, le=1.0)
    scatter: float = Field(..., ge=0.0, le=0.6)
    refraction: float = Field(..., ge=0.0, le=2.0)


class ContaminantSpec(BaseModel):
    """
    Contaminant layer of one clip.

    ``drift`` is the per-frame displacement (px) shared by every blob; it must
    stay well below the background speed so the contaminants read as
    "relatively static".
    """

    blobs: List[BlobSpec] = Field(default_factory=list)
    drift: Tuple[float, float] = (0.0, 0.0)

    @property
    def drift_speed(self) -> float:
        return float(np.hypot(*self.drift))

    def check_drift(self, background_speed: float) -> None:
        if self.blobs and self.drift_speed >= background_speed:
            raise ConfigError(
                f"contaminant drift {self.drift_speed:.3f} px/frame must be below background speed {background_speed:.3f}"
            )


class ContaminantLayer(BaseModel):
    """Per-frame rasterisation result (kept as numpy arrays)."""

    model_config = {"arbitrary_types_allowed": True}

    alpha: np.ndarray
    attenuation: np.ndarray
    scatter: np.ndarray
    refraction: np.ndarray


def _rasterize_polygon(points: np.ndarray, height: int, width: int) -> np.ndarray:
    """Anti-aliased coverage of a polygon given in pixel coordinates."""
    hs, ws = height * SUPERSAMPLE, width * SUPERSAMPLE
    canvas = np.zeros((hs, ws), dtype=np.uint8)
    # pixel centres sit at (i + 0.5) / SUPERSAMPLE - 0.5 in the fine grid
    fine = (points + 0.5) * SUPERSAMPLE - 0.5
    pts = np.round(fine * (1 << SUBPIXEL_SHIFT)).astype(np.int32).reshape(-1, 1, 2)
    cv2.fillPoly(canvas, [pts], 255, lineType=cv2.LINE_8, shift=SUBPIXEL_SHIFT)
    cov = canvas.astype(np.float64).reshape(height, SUPERSAMPLE, width, SUPERSAMPLE).mean(axis=(1, 3)) / 255.0
    return cov


def contaminant_layer(spec: ContaminantSpec, height: int, width: int, t: int) -> ContaminantLayer:
    """Rasterise and defocus every blob for frame t; blend the material maps by alpha."""
    alpha_sum = np.zeros((height, width))
    acc = {"attenuation": np.zeros((height, width)), "scatter": np.zeros((height, width)), "refraction": np.zeros((height, width))}
    dx, dy = spec.drift
    for blob in spec.blobs:
        cx = blob.center[0] + dx * t
        cy = blob.center[1] + dy * t
        pts = np.asarray(blob.control_points, dtype=np.float64) + np.array([cx, cy])
        a_b = ndimage.gaussian_filter(_rasterize_polygon(pts, height, width), blob.sigma_b, mode="constant")
        alpha_sum += a_b
        acc["attenuation"] += a_b * blob.attenuation
        acc["scatter"] += a_b * blob.scatter
        acc["refraction"] += a_b * blob.refraction
    safe = np.where(alpha_sum > 0, alpha_sum, 1.0)
    maps = {k: np.where(alpha_sum > 0, v / safe, 0.0) for k, v in acc.items()}
    alpha = np.clip(alpha_sum, 0.0, 1.0)
    return ContaminantLayer(alpha=alpha.astype(np.float32), **{k: v.astype(np.float32) for k, v in maps.items()})


def composite(
    clean: np.ndarray,
    alpha: np.ndarray,
    attenuation: Union[float, np.ndarray],
    scatter: Union[float, np.ndarray],
    refraction: Union[float, np.ndarray] = 0.0,
) -> np.ndarray:
    """
    Image formation for a single frame.

    The refraction displacement is d * grad(alpha) normalised by the frame's
    peak gradient magnitude, so ``refraction`` is the peak shift in pixels.
    """
    clean = np.asarray(clean, dtype=np.float64)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), clean.shape[:2])
    a = np.broadcast_to(np.asarray(attenuation, dtype=np.float64), alpha.shape)
    e = np.broadcast_to(np.asarray(scatter, dtype=np.float64), alpha.shape)
    d = np.broadcast_to(np.asarray(refraction, dtype=np.float64), alpha.shape)

    source = clean
    if np.any(d > 0) and np.any(alpha > 0):
        gy, gx = np.gradient(alpha)
        peak = float(np.max(np.hypot(gx, gy)))
        if peak > 0:
            h, w = alpha.shape
            ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
            x = xs + d * gx / peak
            y = ys + d * gy / peak
            source, _ = bilinear_sample(clean[None], x[None], y[None])
            source = source[0]

    out = (1.0 - a * alpha)[..., None] * source + (e * alpha)[..., None]
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def composite_contaminants(clean: np.ndarray, spec: ContaminantSpec, t: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Contaminate clean frame C_t; returns (I_t, alpha_t)."""
    h, w = clean.shape[:2]
    layer = contaminant_layer(spec, h, w, t)
    image = composite(clean, layer.alpha, layer.attenuation, layer.scatter, layer.refraction)
    return image, layer.alpha


def derive_gt_attention(alpha: np.ndarray, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Binary A^gt: 1 where alpha > tau."""
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"threshold must lie in (0, 1), got {tau}")
    return (np.asarray(alpha) > tau).astype(np.float32)


def _deformed_ellipse(rng: np.random.Generator, radius: float, n_points: int = 12) -> List[Tuple[float, float]]:
    ratio = rng.uniform(0.6, 1.0)
    rot = rng.uniform(0, np.pi)
    theta = np.linspace(0, 2 * np.pi, n_points, endpoint=False)
    wobble = 1.0 + rng.uniform(-0.2, 0.2, n_points)
    x = radius * wobble * np.cos(theta)
    y = radius * ratio * wobble * np.sin(theta)
    c, s = np.cos(rot), np.sin(rot)
    return [(float(c * xi - s * yi), float(s * xi + c * yi)) for xi, yi in zip(x, y)]


def random_contaminant_spec(
    rng: np.random.Generator,
    height: int,
    width: int,
    background_speed: float,
    coverage: Tuple[float, float] = (0.08, 0.30),
    max_blobs: int = 4,
    max_drift: float = 0.4,
) -> ContaminantSpec:
    """Draw blobs whose combined footprint targets a fraction in ``coverage`` of the frame."""
    n_blobs = int(rng.integers(1, max_blobs + 1))
    target = rng.uniform(*coverage)
    base_radius = np.sqrt(target * height * width / (n_blobs * np.pi))
    blobs = []
    for _ in range(n_blobs):
        radius = float(base_radius * rng.uniform(0.8, 1.2))
        margin = min(radius, min(height, width) / 2 - 1)
        center = (float(rng.uniform(margin, width - margin)), float(rng.uniform(margin, height - margin)))
        blobs.append(
            BlobSpec(
                center=center,
                control_points=_deformed_ellipse(rng, radius),
                sigma_b=float(rng.uniform(1.0, 3.0)),
                attenuation=float(rng.uniform(0.3, 1.0)),
                scatter=float(rng.uniform(0.0, 0.6)),
                refraction=float(rng.uniform(0.0, 2.0)),
            )
        )
    speed = min(max_drift, 0.3 * background_speed)
    angle = rng.uniform(0, 2 * np.pi)
    drift = (float(speed * np.cos(angle)), float(speed * np.sin(angle)))
    spec = ContaminantSpec(blobs=blobs, drift=drift)
    spec.check_drift(background_speed)
    return spec
