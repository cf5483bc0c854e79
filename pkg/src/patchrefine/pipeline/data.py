"""Samples, role splits and geometric augmentation."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

ROLES = ("train", "val", "test")
# the refiner trains on the base model's validation data; reports use test only
PRN_TRAIN_ROLE = "val"
REPORT_ROLE = "test"


class RoleError(ValueError):
    """A sample was used in a role it does not belong to."""


@dataclass
class Sample:
    sample_id: str
    logit_map: np.ndarray
    ground_truth: np.ndarray
    pseudo_label: Optional[np.ndarray] = None
    pseudo_patch_size: Optional[int] = None
    generation: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.logit_map.shape != self.ground_truth.shape:
            raise ValueError(
                f"{self.sample_id}: logit map {self.logit_map.shape} and ground truth "
                f"{self.ground_truth.shape} differ"
            )
        if self.pseudo_label is not None and self.pseudo_label.shape != self.ground_truth.shape:
            raise ValueError(f"{self.sample_id}: pseudo-label shape differs from ground truth")


def sample_rng(seed: int, sample_id: str) -> np.random.Generator:
    """Per-sample stream, independent of generation order."""
    return np.random.default_rng([seed, zlib.crc32(sample_id.encode())])


def make_splits(
    samples: Iterable[Sample], roles: Mapping[str, str]
) -> dict[str, list[Sample]]:
    """Group samples by role, rejecting unknown roles, overlaps and an empty test set.

    ``roles`` maps sample_id to a role; a sample may only appear once.
    """
    out: dict[str, list[Sample]] = {r: [] for r in ROLES}
    seen: set[str] = set()
    for s in samples:
        if s.sample_id in seen:
            raise RoleError(f"sample {s.sample_id} appears more than once")
        seen.add(s.sample_id)
        role = roles.get(s.sample_id)
        if role not in out:
            raise RoleError(f"sample {s.sample_id} has invalid role {role!r}")
        out[role].append(s)
    if not out[REPORT_ROLE]:
        raise RoleError("the test split is empty")
    return out


def check_disjoint(train: Sequence[Sample], report: Sequence[Sample]) -> None:
    overlap = {s.sample_id for s in train} & {s.sample_id for s in report}
    if overlap:
        raise RoleError(f"samples used for both training and reporting: {sorted(overlap)[:5]}")


def apply_transform(grid: np.ndarray, rotation: int, hflip: bool, vflip: bool) -> np.ndarray:
    out = np.rot90(grid, rotation)
    if hflip:
        out = out[:, ::-1]
    if vflip:
        out = out[::-1, :]
    return np.ascontiguousarray(out)


def augment(sample: Sample, rng: np.random.Generator) -> Sample:
    """Random quarter-turn rotation and flips, applied identically to every map."""
    rotation = int(rng.integers(4))
    hflip, vflip = (bool(b) for b in rng.integers(2, size=2))

    def tf(grid):
        return None if grid is None else apply_transform(grid, rotation, hflip, vflip)

    return replace(
        sample,
        logit_map=tf(sample.logit_map),
        ground_truth=tf(sample.ground_truth),
        pseudo_label=tf(sample.pseudo_label),
    )
