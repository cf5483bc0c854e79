"""Segmentation metrics: IoU, mIoU, patch-averaged IoU, boundary IoU (mBA) and MAE."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from patchrefine.core import grid_side_for, split_patches

DEFAULT_BOUNDARY_DISTANCE = 15


@dataclass(frozen=True)
class EvalReport:
    method_name: str
    miou: float
    patch_miou: float
    mba: float
    mae: float
    sample_count: int

    def __post_init__(self):
        for name in ("miou", "patch_miou", "mba"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")
        if self.mae < 0:
            raise ValueError(f"mae={self.mae} is negative")
        if self.sample_count <= 0:
            raise ValueError("a report needs at least one sample")

    def as_dict(self) -> dict:
        return asdict(self)


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Foreground IoU. Two empty masks score 1.0."""
    _check_same_shape(pred, gt)
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & g) / union


def mean_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Average of foreground and background IoU (two-class mIoU)."""
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    return 0.5 * (iou(p, g) + iou(~p, ~g))


def miou(pairs: Iterable[tuple[np.ndarray, np.ndarray]], objective: str = "fg_iou") -> float:
    """Dataset mean of per-image IoU.

    ``objective`` selects foreground-only IoU (``"fg_iou"``, the default) or
    the two-class mean (``"mean_iou"``).
    """
    score = _objective(objective)
    values = [score(p, g) for p, g in pairs]
    if not values:
        raise ValueError("miou needs at least one (pred, gt) pair")
    return float(np.mean(values))


def patch_miou(pred: np.ndarray, gt: np.ndarray, patch_size: int) -> float:
    """Mean IoU over the disjoint ``patch_size`` grid."""
    _check_same_shape(pred, gt)
    g = grid_side_for(np.shape(gt)[-1], patch_size)
    if np.shape(gt)[-2] % g:
        raise ValueError(f"patch size {patch_size} does not tile shape {np.shape(gt)}")
    return float(np.mean([
        iou(p, t) for p, t in zip(split_patches(pred, g), split_patches(gt, g))
    ]))


def contour(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels 4-adjacent to background or to the image border."""
    m = np.asarray(mask).astype(bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = ndimage.binary_erosion(
        padded, structure=ndimage.generate_binary_structure(2, 1)
    )[1:-1, 1:-1]
    return m & ~interior


def boundary_band(mask: np.ndarray, d: float) -> np.ndarray:
    """Foreground pixels within Euclidean distance ``d`` of the mask contour."""
    if d < 0:
        raise ValueError(f"band distance must be non-negative, got {d}")
    m = np.asarray(mask).astype(bool)
    edge = contour(m)
    if not edge.any():
        return np.zeros(m.shape, dtype=np.uint8)
    dist = ndimage.distance_transform_edt(~edge)
    return (m & (dist <= d)).astype(np.uint8)


def mba(pred: np.ndarray, gt: np.ndarray, d: float = DEFAULT_BOUNDARY_DISTANCE) -> float:
    """Boundary IoU: IoU of the two masks' contour bands of width ``d``."""
    _check_same_shape(pred, gt)
    return iou(boundary_band(pred, d), boundary_band(gt, d))


def mae(logits: np.ndarray, gt: np.ndarray) -> float:
    _check_same_shape(logits, gt)
    return float(np.mean(np.abs(np.asarray(logits, dtype=np.float64) - np.asarray(gt, dtype=np.float64))))


def _objective(name: str):
    try:
        return {"fg_iou": iou, "mean_iou": mean_iou}[name]
    except KeyError:
        raise ValueError(f"unknown IoU objective {name!r}; use 'fg_iou' or 'mean_iou'") from None


def report(
    method_name: str,
    maps: Sequence[np.ndarray],
    preds: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    patch_size: int,
    d: float = DEFAULT_BOUNDARY_DISTANCE,
    objective: str = "fg_iou",
) -> EvalReport:
    """Aggregate all four metrics for one method over a sample set."""
    if not (len(maps) == len(preds) == len(gts)) or not gts:
        raise ValueError("maps, preds and gts must be equal-length and nonempty")
    return EvalReport(
        method_name=method_name,
        miou=miou(zip(preds, gts), objective),
        patch_miou=float(np.mean([patch_miou(p, g, patch_size) for p, g in zip(preds, gts)])),
        mba=float(np.mean([mba(p, g, d) for p, g in zip(preds, gts)])),
        mae=float(np.mean([mae(m, g) for m, g in zip(maps, gts)])),
        sample_count=len(gts),
    )
