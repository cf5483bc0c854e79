"""Slow reference computations used only by the tests."""

import itertools
import math

import numpy as np


def iou_by_loop(pred, gt):
    inter = union = 0
    for p, g in zip(np.ravel(pred), np.ravel(gt)):
        inter += int(p and g)
        union += int(p or g)
    return 1.0 if union == 0 else inter / union


def band_by_pairs(mask, d):
    """Foreground pixels within distance d of the contour, by all-pairs distances."""
    mask = np.asarray(mask).astype(bool)
    h, w = mask.shape
    contour = []
    for r, c in itertools.product(range(h), range(w)):
        if not mask[r, c]:
            continue
        nbrs = [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)]
        if any(not (0 <= a < h and 0 <= b < w) or not mask[a, b] for a, b in nbrs):
            contour.append((r, c))
    band = np.zeros((h, w), dtype=np.uint8)
    if not contour:
        return band
    pts = np.array(contour, dtype=float)
    for r, c in itertools.product(range(h), range(w)):
        if mask[r, c]:
            dist = np.sqrt(((pts - (r, c)) ** 2).sum(axis=1)).min()
            band[r, c] = dist <= d
    return band


def laplace_by_loop(grid):
    """Zero-padded 3x3 Laplacian by explicit neighbour sums."""
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape
    out = np.zeros_like(grid)

    def at(r, c):
        return grid[r, c] if 0 <= r < h and 0 <= c < w else 0.0

    for r in range(h):
        for c in range(w):
            out[r, c] = at(r - 1, c) + at(r + 1, c) + at(r, c - 1) + at(r, c + 1) - 4 * at(r, c)
    return out


def bce_by_loop(pred, target, eps=1e-7):
    total = 0.0
    for p, t in zip(np.ravel(pred), np.ravel(target)):
        p = min(max(p, eps), 1 - eps)
        a = 0.0 if t == 0 else t * math.log(p)
        b = 0.0 if t == 1 else (1 - t) * math.log(1 - p)
        total -= a + b
    return total / np.size(pred)


def boundary_by_loop(pred, pseudo, floor=1e-7, eps=1e-7):
    """Edge-map BCE with ``floor`` on the edge term, from explicit loops."""
    s = np.abs(np.tanh(laplace_by_loop(pred)))
    t = np.abs(np.tanh(laplace_by_loop(pseudo)))
    total = 0.0
    for si, ti in zip(s.ravel(), t.ravel()):
        on = 0.0 if ti == 0 else ti * math.log(min(max(si, floor), 1 - eps))
        off = 0.0 if ti == 1 else (1 - ti) * math.log(1 - min(max(si, eps), 1 - eps))
        total -= on + off
    return total / s.size


def focal_by_loop(pred, labels, gamma, eps=1e-7):
    total = 0.0
    for p, y in zip(np.ravel(pred), np.ravel(labels)):
        p = min(max(p, eps), 1 - eps)
        total -= (1 - p) ** gamma * math.log(p) if y else p ** gamma * math.log(1 - p)
    return total / np.size(pred)


def brute_best_threshold(patch, gt, objective_fn):
    """Best (threshold, value) by binarizing at every distinct value and the empty mask."""
    values = sorted(set(np.ravel(patch).tolist()))
    best_t, best_v = math.inf, objective_fn(np.zeros_like(gt), gt)
    for t in reversed(values):
        v = objective_fn((patch >= t).astype(np.uint8), gt)
        if v > best_v:
            best_t, best_v = t, v
    return best_t, best_v


def fd_well_conditioned(pred, floor=None, margin=1e-2):
    """True when no loss kink lies within reach of an h=1e-5 central difference.

    The squashed Laplacian has a kink (abs) and a 1/s log singularity where the
    Laplacian vanishes, and a clamp corner at ``floor``.
    """
    lap = np.abs(laplace_by_loop(pred))
    if lap.min() < margin:
        return False
    return floor is None or np.abs(np.tanh(lap) - floor).min() >= margin


def central_difference(f, x, h=1e-5):
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        grad[idx] = (f(xp) - f(xm)) / (2 * h)
    return grad
