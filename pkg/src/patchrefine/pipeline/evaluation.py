"""Evaluation harness comparing the refiner against threshold baselines."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from patchrefine.core import binarize
from patchrefine.metrics import DEFAULT_BOUNDARY_DISTANCE, EvalReport, report
from patchrefine.network import PatchRefineNet
from patchrefine.pipeline.data import Sample, check_disjoint
from patchrefine.pseudolabel import generate_pseudo_labels, global_best_threshold, per_patch_oracle

METHODS = (
    "base@0.5",
    "base@global_best",
    "per_patch_oracle",
    "PRN",
    "PRN-global-only",
    "PRN-local-only",
)


def attach_pseudo_labels(samples: Sequence[Sample], patch_size: int, objective: str = "fg_iou") -> None:
    for s in samples:
        if s.pseudo_label is None or s.pseudo_patch_size != patch_size:
            s.pseudo_label = generate_pseudo_labels(s.logit_map, s.ground_truth, patch_size, objective)
            s.pseudo_patch_size = patch_size


def evaluate(
    model: PatchRefineNet,
    test_samples: Sequence[Sample],
    patch_size: int,
    threshold_samples: Optional[Sequence[Sample]] = None,
    training_samples: Sequence[Sample] = (),
    d: float = DEFAULT_BOUNDARY_DISTANCE,
    objective: str = "fg_iou",
) -> list[EvalReport]:
    """One report per method on the test samples.

    The global threshold baseline is fit on ``threshold_samples`` (the
    validation set in the standard protocol) and on the test set only when
    none are given. ``training_samples`` are checked for overlap with the
    reporting set.
    """
    check_disjoint(training_samples, test_samples)
    if threshold_samples is not None:
        check_disjoint(threshold_samples, test_samples)
    if not test_samples:
        raise ValueError("no test samples")
    tune = threshold_samples if threshold_samples is not None else test_samples
    tau = global_best_threshold([(s.logit_map, s.ground_truth) for s in tune], objective)

    gts = [s.ground_truth for s in test_samples]
    rows: dict[str, tuple[list, list]] = {m: ([], []) for m in METHODS}

    def add(name, m, pred):
        rows[name][0].append(m)
        rows[name][1].append(pred)

    mode = model.config.branches
    for s in test_samples:
        add("base@0.5", s.logit_map, binarize(s.logit_map, 0.5))
        add("base@global_best", s.logit_map, binarize(s.logit_map, tau))
        oracle = per_patch_oracle(s.logit_map, s.ground_truth, patch_size, objective)
        add("per_patch_oracle", oracle.astype(np.float64), oracle)
        add("PRN", *model.refine(s.logit_map))
        if mode in ("both", "global"):
            add("PRN-global-only", *model.refine(s.logit_map, "global"))
        if mode in ("both", "local"):
            add("PRN-local-only", *model.refine(s.logit_map, "local"))

    return [
        report(name, maps, preds, gts, patch_size, d, objective)
        for name, (maps, preds) in rows.items()
        if maps
    ]


def format_table(reports: Sequence[EvalReport]) -> str:
    lines = [f"{'method':<20} {'mIoU':>7} {'pmIoU':>7} {'mBA':>7} {'MAE':>7}"]
    for r in reports:
        lines.append(f"{r.method_name:<20} {r.miou:7.3f} {r.patch_miou:7.3f} {r.mba:7.3f} {r.mae:7.4f}")
    return "\n".join(lines)
