"""Grid primitives shared by every other module: patch arithmetic and binarization.

Logit maps are float arrays with values in ``[0, 1]``; binary masks are
``uint8`` arrays holding 0/1. Spatial axes are always the last two, so
channel-first feature grids go through the same split/merge code.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

LOGIT_DTYPE = np.float32


class ConfigError(ValueError):
    """Raised when a size/shape configuration is inconsistent."""


def patch_count(side: int, patch_size: int) -> int:
    """Number of disjoint ``patch_size`` squares tiling a ``side`` square."""
    if patch_size <= 0 or side <= 0 or side % patch_size:
        raise ConfigError(
            f"patch size {patch_size} does not divide side {side}"
        )
    return (side // patch_size) ** 2


def grid_side_for(side: int, patch_size: int) -> int:
    patch_count(side, patch_size)
    return side // patch_size


def split_patches(grid: np.ndarray, grid_side: int) -> list[np.ndarray]:
    """Split the last two axes of ``grid`` into ``grid_side**2`` patches.

    Patches are returned in row-major order, so ``patches[0]`` is the
    top-left block and ``patches[grid_side]`` starts the second block row.
    """
    grid = np.asarray(grid)
    if grid.ndim < 2:
        raise ConfigError("need at least two spatial axes")
    h, w = grid.shape[-2:]
    if grid_side <= 0 or h % grid_side or w % grid_side:
        raise ConfigError(
            f"grid side {grid_side} does not divide spatial shape {(h, w)}"
        )
    ph, pw = h // grid_side, w // grid_side
    return [
        grid[..., r * ph:(r + 1) * ph, c * pw:(c + 1) * pw]
        for r in range(grid_side)
        for c in range(grid_side)
    ]


def merge_patches(patches: list[np.ndarray], grid_side: int) -> np.ndarray:
    """Inverse of :func:`split_patches`."""
    if grid_side <= 0 or len(patches) != grid_side ** 2:
        raise ConfigError(
            f"expected {grid_side ** 2} patches for grid side {grid_side}, "
            f"got {len(patches)}"
        )
    shapes = {np.shape(p) for p in patches}
    if len(shapes) != 1:
        raise ConfigError(f"patches have mixed shapes: {sorted(shapes)}")
    rows = [
        np.concatenate(patches[r * grid_side:(r + 1) * grid_side], axis=-1)
        for r in range(grid_side)
    ]
    return np.concatenate(rows, axis=-2)


def binarize(logits: np.ndarray, threshold: float) -> np.ndarray:
    """Foreground wherever the score is at least ``threshold`` (inclusive)."""
    return (np.asarray(logits) >= threshold).astype(np.uint8)


def resize_to_input(logits: np.ndarray, target_side: int) -> np.ndarray:
    """Bilinear resize to ``target_side x target_side`` with corner alignment.

    Corner pixels of the source land exactly on corner pixels of the output.
    Values are clamped back into ``[0, 1]``.
    """
    if target_side <= 0:
        raise ConfigError(f"target side must be positive, got {target_side}")
    logits = np.asarray(logits)
    h, w = logits.shape
    if (h, w) == (target_side, target_side):
        return logits.copy()
    rows = np.linspace(0.0, h - 1, target_side)
    cols = np.linspace(0.0, w - 1, target_side)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    out = ndimage.map_coordinates(
        logits.astype(np.float64), [rr, cc], order=1, mode="nearest"
    )
    return np.clip(out, 0.0, 1.0).astype(logits.dtype if logits.dtype.kind == "f" else LOGIT_DTYPE)
