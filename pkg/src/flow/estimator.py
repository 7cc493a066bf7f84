"""
Coarse-to-fine block-matching optical flow.

``estimate_flow(a, b)`` returns F with a(p) ≈ b(p + F(p)), i.e. the field
that ``bilinear_warp(b, F)`` uses to align b onto a.

Per pyramid level (coarsest first):
    1. every block inherits the rounded, upsampled prediction of the level above
    2. integer SAD search in a ±search window around that prediction
    3. (finest level only) per-axis sub-pixel vertex fit, at most ±0.5 px
    4. one diffusion pass: box filter of block size over the dense field
"""

from typing import List, Tuple

import numpy as np
from scipy import ndimage

from src.utils.errors import ImageTooSmallError, ShapeMismatchError

LUMA = np.array([0.299, 0.587, 0.114])
# mean absolute residual per pixel treated as an exact match (well under one 8-bit level)
MATCH_FLOOR = 1e-4


def to_gray(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    return image @ LUMA


def build_pyramid(gray: np.ndarray, levels: int) -> List[np.ndarray]:
    """Finest first; each level is Gaussian-blurred and subsampled by 2."""
    pyramid = [gray]
    for _ in range(levels - 1):
        blurred = ndimage.gaussian_filter(pyramid[-1], sigma=1.0, mode="nearest")
        pyramid.append(blurred[::2, ::2])
    return pyramid


def usable_levels(height: int, width: int, levels: int, block: int) -> int:
    """Cap the pyramid depth so the coarsest level still holds one block."""
    n = 1
    h, w = height, width
    while n < levels and (h + 1) // 2 >= block and (w + 1) // 2 >= block:
        h, w = (h + 1) // 2, (w + 1) // 2
        n += 1
    return n


class _BlockGrid:
    """Block geometry of one pyramid level plus an SAD evaluator."""

    def __init__(self, a: np.ndarray, b: np.ndarray, block: int):
        self.h, self.w = a.shape
        self.block = block
        self.nby = -(-self.h // block)
        self.nbx = -(-self.w // block)
        ph, pw = self.nby * block, self.nbx * block
        self.a = np.pad(a, ((0, ph - self.h), (0, pw - self.w)), mode="edge")
        self.b = b
        self.ys, self.xs = np.mgrid[0:ph, 0:pw]

    def expand(self, per_block: np.ndarray) -> np.ndarray:
        return np.repeat(np.repeat(per_block, self.block, axis=0), self.block, axis=1)

    def cost(self, off_x: np.ndarray, off_y: np.ndarray) -> np.ndarray:
        """SAD per block for integer per-block offsets."""
        sy = np.clip(self.ys + self.expand(off_y), 0, self.h - 1)
        sx = np.clip(self.xs + self.expand(off_x), 0, self.w - 1)
        diff = np.abs(self.a - self.b[sy, sx])
        return diff.reshape(self.nby, self.block, self.nbx, self.block).sum(axis=(1, 3))

    def block_mean(self, field: np.ndarray) -> np.ndarray:
        ph, pw = self.nby * self.block, self.nbx * self.block
        padded = np.pad(field, ((0, ph - self.h), (0, pw - self.w)), mode="edge")
        return padded.reshape(self.nby, self.block, self.nbx, self.block).mean(axis=(1, 3))


def _search(grid: _BlockGrid, pred_x: np.ndarray, pred_y: np.ndarray, radius: int) -> Tuple[np.ndarray, np.ndarray]:
    best_cost = np.full(pred_x.shape, np.inf)
    best_x = pred_x.copy()
    best_y = pred_y.copy()
    best_m2 = np.full(pred_x.shape, np.inf)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            tx, ty = pred_x + dx, pred_y + dy
            c = grid.cost(tx, ty)
            m2 = tx * tx + ty * ty
            tie = c == best_cost
            closer = (m2 < best_m2) | ((m2 == best_m2) & ((tx < best_x) | ((tx == best_x) & (ty < best_y))))
            take = (c < best_cost) | (tie & closer)
            best_cost = np.where(take, c, best_cost)
            best_x = np.where(take, tx, best_x)
            best_y = np.where(take, ty, best_y)
            best_m2 = np.where(take, m2, best_m2)
    return best_x, best_y


def _vertex(minus: np.ndarray, centre: np.ndarray, plus: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Equiangular fit of a V-shaped SAD profile; matches at or below ``floor`` stay put."""
    denom = 2.0 * (np.maximum(minus, plus) - centre)
    ok = (denom > 0) & (centre > floor)
    delta = np.where(ok, (minus - plus) / np.where(ok, denom, 1.0), 0.0)
    return np.clip(delta, -0.5, 0.5)


def _subpixel(grid: _BlockGrid, bx: np.ndarray, by: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    c0 = grid.cost(bx, by)
    floor = MATCH_FLOOR * grid.block * grid.block
    fx = _vertex(grid.cost(bx - 1, by), c0, grid.cost(bx + 1, by), floor)
    fy = _vertex(grid.cost(bx, by - 1), c0, grid.cost(bx, by + 1), floor)
    return bx + fx, by + fy


def estimate_flow(
    image_a: np.ndarray,
    image_b: np.ndarray,
    levels: int = 3,
    block: int = 8,
    search: int = 4,
) -> np.ndarray:
    """
    Estimate the H×W×2 flow from ``image_a`` to ``image_b``.

    Args:
        image_a, image_b: H×W×3 (or H×W) frames in [0, 1].
        levels: pyramid depth; silently capped so every level holds a block.
        block: block edge in pixels.
        search: integer search radius per level.

    Returns:
        float32 H×W×2 field (channel 0 = dx).
    """
    a = to_gray(image_a)
    b = to_gray(image_b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"estimate_flow: frames differ in size {a.shape} vs {b.shape}")
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    h, w = a.shape
    if h < block or w < block:
        raise ImageTooSmallError(f"estimate_flow: {h}x{w} image is smaller than one {block}x{block} block")

    n_levels = usable_levels(h, w, levels, block)
    pyr_a = build_pyramid(a, n_levels)
    pyr_b = build_pyramid(b, n_levels)

    flow = np.zeros(pyr_a[-1].shape + (2,))
    for lvl in range(n_levels - 1, -1, -1):
        la, lb = pyr_a[lvl], pyr_b[lvl]
        if flow.shape[:2] != la.shape:
            flow = 2.0 * np.repeat(np.repeat(flow, 2, axis=0), 2, axis=1)[: la.shape[0], : la.shape[1]]
        grid = _BlockGrid(la, lb, block)
        pred_x = np.rint(grid.block_mean(flow[..., 0])).astype(np.int64)
        pred_y = np.rint(grid.block_mean(flow[..., 1])).astype(np.int64)
        bx, by = _search(grid, pred_x, pred_y, search)
        if lvl == 0:
            fx, fy = _subpixel(grid, bx, by)
        else:
            fx, fy = bx.astype(np.float64), by.astype(np.float64)
        dense = np.stack([grid.expand(fx), grid.expand(fy)], axis=-1)[: la.shape[0], : la.shape[1]]
        flow = ndimage.uniform_filter(dense, size=(block, block, 1), mode="nearest")
    return flow.astype(np.float32)
