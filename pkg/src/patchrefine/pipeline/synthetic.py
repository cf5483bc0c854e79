"""Synthetic stand-in for a base model: masks plus patch-wise biased logit maps.

Ground truths are thin road networks or smooth blobs. The "base model" is a
blurred copy of the mask shifted by a constant offset per bias cell, plus
Gaussian noise, clamped to ``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from patchrefine.core import LOGIT_DTYPE, split_patches, merge_patches
from patchrefine.pipeline.data import Sample, sample_rng

SHAPE_KINDS = ("roads", "blobs")


@dataclass(frozen=True)
class SyntheticConfig:
    image_side: int = 128
    n_train: int = 300
    n_val: int = 100
    n_test: int = 100
    shape_kind: str = "roads"
    blur_radius: float = 1.0
    noise_std: float = 0.05
    bias_patch: int = 16
    bias_magnitude: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if self.shape_kind not in SHAPE_KINDS:
            raise ValueError(f"shape_kind must be one of {SHAPE_KINDS}, got {self.shape_kind!r}")
        if self.image_side <= 0 or self.bias_patch <= 0 or self.image_side % self.bias_patch:
            raise ValueError(
                f"bias_patch {self.bias_patch} must divide image_side {self.image_side}"
            )
        for name in ("blur_radius", "noise_std", "bias_magnitude", "n_train", "n_val", "n_test"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def draw_roads(side: int, rng: np.random.Generator) -> np.ndarray:
    """A few smooth random polylines, 2-4 px wide, entering from the border."""
    img = Image.new("L", (side, side), 0)
    draw = ImageDraw.Draw(img)
    for _ in range(int(rng.integers(2, 5))):
        edge = int(rng.integers(4))
        t = rng.uniform(0, side)
        x, y = [(t, 0.0), (side - 1.0, t), (t, side - 1.0), (0.0, t)][edge]
        heading = [np.pi / 2, np.pi, -np.pi / 2, 0.0][edge] + rng.uniform(-0.6, 0.6)
        turn = 0.0
        points = [(x, y)]
        step = side / 32
        for _ in range(200):
            turn = 0.8 * turn + rng.normal(0, 0.06)
            heading += turn
            x += step * np.cos(heading)
            y += step * np.sin(heading)
            points.append((x, y))
            if not (-step <= x <= side + step and -step <= y <= side + step):
                break
        draw.line(points, fill=1, width=int(rng.integers(2, 5)), joint="curve")
    return np.asarray(img, dtype=np.uint8)


def draw_blobs(side: int, rng: np.random.Generator) -> np.ndarray:
    """Smoothed white noise thresholded at a random upper quantile."""
    field = ndimage.gaussian_filter(rng.normal(size=(side, side)), sigma=side / 16, mode="wrap")
    cut = np.quantile(field, rng.uniform(0.6, 0.85))
    return (field >= cut).astype(np.uint8)


def draw_bias_offsets(cfg: SyntheticConfig, rng: np.random.Generator) -> np.ndarray:
    g = cfg.image_side // cfg.bias_patch
    return rng.uniform(-cfg.bias_magnitude, cfg.bias_magnitude, size=(g, g))


def offset_field(offsets: np.ndarray, bias_patch: int) -> np.ndarray:
    """Expand a per-cell offset grid to a pixel field, constant within each cell."""
    return np.kron(offsets, np.ones((bias_patch, bias_patch)))


def simulate_base_logits(
    gt: np.ndarray,
    cfg: SyntheticConfig,
    rng: np.random.Generator,
    offsets: np.ndarray | None = None,
) -> np.ndarray:
    """``clamp(blur(gt) + cell offsets + noise, 0, 1)``.

    ``offsets`` is the per-cell grid; drawn from ``rng`` when omitted.
    """
    if offsets is None:
        offsets = draw_bias_offsets(cfg, rng)
    mean_field = blurred_truth(gt, cfg.blur_radius) + offset_field(offsets, cfg.bias_patch)
    noise = rng.normal(0.0, cfg.noise_std, size=gt.shape) if cfg.noise_std > 0 else 0.0
    return np.clip(mean_field + noise, 0.0, 1.0).astype(LOGIT_DTYPE)


def blurred_truth(gt: np.ndarray, blur_radius: float) -> np.ndarray:
    gt = np.asarray(gt, dtype=np.float64)
    if blur_radius <= 0:
        return gt
    return ndimage.gaussian_filter(gt, sigma=blur_radius, mode="nearest")


def make_sample(sample_id: str, cfg: SyntheticConfig) -> Sample:
    rng = sample_rng(cfg.seed, sample_id)
    draw = draw_roads if cfg.shape_kind == "roads" else draw_blobs
    gt = draw(cfg.image_side, rng)
    offsets = draw_bias_offsets(cfg, rng)
    logits = simulate_base_logits(gt, cfg, rng, offsets)
    return Sample(sample_id, logits, gt, generation={"offsets": offsets.tolist()})


def gen_synthetic_corpus(cfg: SyntheticConfig) -> dict[str, list[Sample]]:
    """Train/val/test sample sets; ids carry the role so splits never overlap."""
    counts = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}
    return {
        role: [make_sample(f"{role}_{i:05d}", cfg) for i in range(n)]
        for role, n in counts.items()
    }
