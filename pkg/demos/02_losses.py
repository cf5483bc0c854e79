"""The training objective, term by term, on small hand-made maps."""

import math

import torch

from patchrefine.losses import (
    LossConfig,
    bce_loss,
    boundary_loss,
    branch_loss,
    focal_loss,
    squashed_laplace,
)

# squashed Laplacian of a single bright pixel: strong centre, weaker cross
impulse = torch.zeros(3, 3, dtype=torch.float64)
impulse[1, 1] = 1
print(squashed_laplace(impulse))
print("centre |tanh(-4)| = %.6f" % abs(math.tanh(-4)))

# focal loss down-weights confident pixels; gamma=0 is plain BCE
pred = torch.tensor([[0.9, 0.6], [0.2, 0.05]], dtype=torch.float64)
label = torch.tensor([[1.0, 1.0], [0.0, 1.0]], dtype=torch.float64)
for gamma in (0.0, 1.0, 2.0):
    print("gamma %.0f  focal %.4f" % (gamma, focal_loss(pred, label, gamma).item()))
print("bce       %.4f" % bce_loss(pred, label).item())

# boundary loss compares edge maps, so a shifted square costs more than a dimmed one
square = torch.zeros(12, 12, dtype=torch.float64)
square[3:9, 3:9] = 1
shifted = torch.roll(square, 2, dims=1)
dimmed = 0.8 * square
print("boundary: exact %.4f, dimmed %.4f, shifted %.4f" % (
    boundary_loss(square, square).item(),
    boundary_loss(dimmed, square).item(),
    boundary_loss(shifted, square).item(),
))

# the floor only touches the log(s) term on edge pixels
blurry = torch.full((12, 12), 0.5, dtype=torch.float64)
for floor in (1e-7, 1e-2, 1e-1):
    print("flat prediction, floor %g: %.3f" % (floor, boundary_loss(blurry, square, floor).item()))

# the full per-branch objective mixes pseudo-label and ground-truth terms
gt = square.clone()
gt[8, 3:9] = 0  # ground truth and pseudo-label disagree on one row
cfg = LossConfig()
print("alpha=%.1f gamma=%.1f: %.4f" % (cfg.alpha, cfg.gamma, branch_loss(dimmed, gt, square, cfg).item()))
print("gt term only:     %.4f" % branch_loss(dimmed, gt, square, LossConfig(use_ps_term=False)).item())
