import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from patchrefine.core import binarize, merge_patches, split_patches
from patchrefine.metrics import iou, mean_iou, miou, patch_miou
from patchrefine.pseudolabel import (
    EMPTY,
    candidate_thresholds,
    generate_pseudo_labels,
    global_best_threshold,
    optimal_patch_threshold,
    patch_thresholds,
    per_patch_oracle,
)
from oracles import brute_best_threshold


def distinct_binarizations(patch, thresholds):
    return {binarize(patch, t).tobytes() for t in thresholds}


def test_candidates_examples():
    c = candidate_thresholds(np.array([[0.9, 0.6], [0.4, 0.1]]))
    np.testing.assert_array_equal(c[:-1], [0.1, 0.4, 0.6, 0.9])
    assert c[-1] == EMPTY
    assert len(candidate_thresholds(np.full((3, 3), 0.25))) == 2
    with pytest.raises(ValueError):
        candidate_thresholds(np.array([]))


def test_candidates_realize_every_sweep_binarization(rng):
    sweep = np.linspace(0, 1, 10_000)
    for _ in range(10):
        patch = np.round(rng.random((8, 8)), 2)
        assert distinct_binarizations(patch, candidate_thresholds(patch)) == \
            distinct_binarizations(patch, np.append(sweep, 2.0))


def test_optimal_threshold_examples():
    patch = np.array([[0.9, 0.6], [0.4, 0.1]])
    r = optimal_patch_threshold(patch, np.array([[1, 1], [0, 0]]))
    assert (r.threshold, r.objective_value) == (0.6, 1.0)

    empty = optimal_patch_threshold(patch, np.zeros((2, 2)))
    assert empty.threshold == EMPTY and empty.is_empty and empty.objective_value == 1.0

    gt = np.array([[1, 0], [0, 1]])
    perfect = optimal_patch_threshold(gt.astype(float), gt)
    assert (perfect.threshold, perfect.objective_value) == (1.0, 1.0)

    with pytest.raises(ValueError):
        optimal_patch_threshold(patch, np.zeros((3, 3)))


@pytest.mark.parametrize("objective, fn", [("fg_iou", iou), ("mean_iou", mean_iou)])
def test_optimal_threshold_matches_enumeration(rng, objective, fn):
    for _ in range(50):
        patch = np.round(rng.random((6, 6)), 1)
        gt = (rng.random((6, 6)) < rng.random()).astype(np.uint8)
        r = optimal_patch_threshold(patch, gt, objective)
        t, v = brute_best_threshold(patch, gt, fn)
        assert r.objective_value == pytest.approx(v, abs=1e-12)
        assert fn(binarize(patch, r.threshold), gt) == pytest.approx(r.objective_value, abs=1e-12)
        assert r.objective_value >= fn(binarize(patch, 0.5), gt) - 1e-12
        assert r.threshold == t


def test_optimum_beats_dense_sweep(rng):
    sweep = np.linspace(0, 1, 10_000)
    for _ in range(5):
        patch, gt = rng.random((8, 8)), rng.integers(0, 2, (8, 8))
        best = optimal_patch_threshold(patch, gt).objective_value
        assert max(iou(binarize(patch, t), gt) for t in sweep) <= best


def test_pseudo_labels_perfect_logits(rng):
    gt = rng.integers(0, 2, (16, 16)).astype(np.uint8)
    for p in (2, 4, 8, 16):
        np.testing.assert_array_equal(generate_pseudo_labels(gt.astype(np.float32), gt, p), gt)


def test_pseudo_labels_recover_shifted_patch():
    # 16x16 map, P=8; the top-right patch is shifted down by 0.4 so its
    # foreground scores ~0.2 and a fixed 0.5 threshold loses it entirely
    gt = np.zeros((16, 16), dtype=np.uint8)
    gt[2:14, 5:11] = 1
    logits = np.where(gt == 1, 0.6, 0.05)
    logits[:8, 8:] -= 0.4
    logits = np.clip(logits, 0, 1)
    fixed = binarize(logits, 0.5)
    assert not fixed[:8, 8:].any() and gt[:8, 8:].any()
    pseudo = generate_pseudo_labels(logits, gt, 8)
    np.testing.assert_array_equal(pseudo, gt)
    thresholds = [r.threshold for r in patch_thresholds(logits, gt, 8)]
    assert thresholds[1] == pytest.approx(0.2)


def test_pseudo_labels_single_patch_is_global_search(rng):
    logits, gt = rng.random((16, 16)), rng.integers(0, 2, (16, 16))
    tau = optimal_patch_threshold(logits, gt).threshold
    np.testing.assert_array_equal(generate_pseudo_labels(logits, gt, 16), binarize(logits, tau))
    assert global_best_threshold([(logits, gt)]) == tau


def test_pseudo_labels_dominate_fixed_threshold_per_patch(rng):
    for _ in range(10):
        logits, gt = rng.random((16, 16)), (rng.random((16, 16)) < 0.3).astype(np.uint8)
        pseudo = generate_pseudo_labels(logits, gt, 4)
        fixed = binarize(logits, 0.5)
        for a, b, g in zip(split_patches(pseudo, 4), split_patches(fixed, 4), split_patches(gt, 4)):
            assert iou(a, g) >= iou(b, g)


def test_pseudo_labels_indivisible():
    with pytest.raises(ValueError):
        generate_pseudo_labels(np.zeros((16, 16)), np.zeros((16, 16)), 5)


def test_oracle_is_pseudo_label_generator():
    assert per_patch_oracle is generate_pseudo_labels


def test_oracle_dominates_every_fixed_threshold(rng):
    for _ in range(10):
        logits = np.clip(rng.random((32, 32)) + rng.normal(0, 0.2, (32, 32)), 0, 1)
        gt = (rng.random((32, 32)) < 0.4).astype(np.uint8)
        for p in (4, 8, 16):
            best = patch_miou(per_patch_oracle(logits, gt, p), gt, p)
            for tau in rng.random(30):
                assert best >= patch_miou(binarize(logits, tau), gt, p)


def test_finer_grid_never_worse(rng):
    for _ in range(10):
        logits, gt = rng.random((32, 32)), (rng.random((32, 32)) < 0.3).astype(np.uint8)
        for p in (32, 16, 8):
            fine, coarse = p // 2, p
            assert patch_miou(per_patch_oracle(logits, gt, fine), gt, fine) >= \
                patch_miou(per_patch_oracle(logits, gt, coarse), gt, fine)


def test_global_threshold_examples(rng):
    gts = [rng.integers(0, 2, (8, 8)).astype(np.uint8) for _ in range(3)]
    assert global_best_threshold([(g.astype(float), g) for g in gts]) == 1.0
    with pytest.raises(ValueError):
        global_best_threshold([])


def test_global_threshold_matches_sweep(rng):
    pairs = [(rng.random((16, 16)), (rng.random((16, 16)) < 0.3).astype(np.uint8)) for _ in range(5)]
    tau = global_best_threshold(pairs)
    best = miou([(binarize(m, tau), g) for m, g in pairs])
    # exhaustive over pooled candidates, independent of the fast path
    pooled = np.unique(np.concatenate([m.ravel() for m, _ in pairs]))
    exhaustive = max(miou([(binarize(m, t), g) for m, g in pairs]) for t in pooled)
    assert best == pytest.approx(exhaustive, abs=1e-12)
    sweep = max(miou([(binarize(m, t), g) for m, g in pairs]) for t in np.linspace(0, 1, 1000))
    assert sweep <= best + 1e-12
    # the sweep optimum is within one candidate step of ours
    step = np.diff(pooled).max()
    sweep_tau = max(np.linspace(0, 1, 1000), key=lambda t: miou([(binarize(m, t), g) for m, g in pairs]))
    if sweep == pytest.approx(best, abs=1e-12):
        assert abs(sweep_tau - tau) <= step + 1e-3


def test_global_threshold_mean_iou_objective(rng):
    pairs = [(rng.random((8, 8)), rng.integers(0, 2, (8, 8))) for _ in range(4)]
    tau = global_best_threshold(pairs, "mean_iou")
    pooled = np.unique(np.concatenate([m.ravel() for m, _ in pairs]))
    exhaustive = max(miou([(binarize(m, t), g) for m, g in pairs], "mean_iou") for t in pooled)
    assert miou([(binarize(m, tau), g) for m, g in pairs], "mean_iou") == pytest.approx(exhaustive, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    logits=arrays(np.float64, (8, 8), elements=st.sampled_from([0.0, 0.2, 0.5, 0.7, 1.0])),
    gt=arrays(np.uint8, (8, 8), elements=st.integers(0, 1)),
)
def test_patch_results_consistent(logits, gt):
    for r, patch, g in zip(patch_thresholds(logits, gt, 4), split_patches(logits, 2), split_patches(gt, 2)):
        assert r.objective_value == iou(binarize(patch, r.threshold), g)
        assert r.objective_value >= iou(binarize(patch, 0.5), g)
        assert math.isinf(r.threshold) or 0.0 <= r.threshold <= 1.0
