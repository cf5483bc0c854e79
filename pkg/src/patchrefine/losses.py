"""Training objective: ground-truth BCE plus pseudo-label focal and boundary terms.

All losses take probability maps (sigmoid outputs) of any shape ending in
``(H, W)`` and reduce by the mean over every element.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

EPS = 1e-7

LAPLACE_KERNEL = ((0.0, 1.0, 0.0), (1.0, -4.0, 1.0), (0.0, 1.0, 0.0))


@dataclass(frozen=True)
class LossConfig:
    """Weights and switches of the per-branch loss.

    ``alpha`` weighs the pseudo-label term against the ground-truth term.
    Turning one term off leaves the other at full weight.
    """

    alpha: float = 0.7
    gamma: float = 2.0
    use_gt_term: bool = True
    use_ps_term: bool = True
    use_focal: bool = True
    use_boundary: bool = True
    boundary_floor: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        if not EPS <= self.boundary_floor < 1:
            raise ValueError(f"boundary_floor must lie in [{EPS}, 1), got {self.boundary_floor}")
        ps_active = self.use_ps_term and (self.use_focal or self.use_boundary)
        if not (self.use_gt_term or ps_active):
            raise ValueError("at least one loss term must be enabled")


def _check_shapes(*tensors: torch.Tensor) -> None:
    shapes = {tuple(t.shape) for t in tensors}
    if len(shapes) != 1:
        raise ValueError(f"loss inputs have mismatched shapes: {sorted(shapes)}")


def bce_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy; ``target`` may be soft."""
    _check_shapes(pred, target)
    p = pred.clamp(EPS, 1 - EPS)
    target = target.to(p.dtype)
    return -(target * torch.log(p) + (1 - target) * torch.log(1 - p)).mean()


def focal_loss(pred: torch.Tensor, pseudo: torch.Tensor, gamma: float = 2.0) -> torch.Tensor:
    """Mean focal loss against hard labels. ``gamma=0`` is exactly :func:`bce_loss`."""
    _check_shapes(pred, pseudo)
    p = pred.clamp(EPS, 1 - EPS)
    y = pseudo.to(p.dtype)
    pos = torch.pow(1 - p, gamma) * torch.log(p)
    neg = torch.pow(p, gamma) * torch.log(1 - p)
    return -(y * pos + (1 - y) * neg).mean()


def squashed_laplace(grid: torch.Tensor) -> torch.Tensor:
    """``|tanh(laplacian(grid))|`` with a zero-padded 3x3 Laplace kernel."""
    shape = grid.shape
    x = grid.reshape(-1, 1, shape[-2], shape[-1])
    kernel = torch.tensor(LAPLACE_KERNEL, dtype=x.dtype, device=x.device).view(1, 1, 3, 3)
    edges = F.conv2d(x, kernel, padding=1)
    return torch.tanh(edges).abs().reshape(shape)


def boundary_loss(pred: torch.Tensor, pseudo: torch.Tensor, floor: float = EPS) -> torch.Tensor:
    """BCE between the squashed Laplacians of prediction and (hard) target.

    ``floor`` bounds the edge map inside ``log(s)`` only. The gradient of that
    term grows like ``1/s`` where the prediction's Laplacian crosses zero, so a
    floor above ``EPS`` stops a handful of inflection pixels from dominating
    training. With ``floor == EPS`` this is exactly :func:`bce_loss`.
    """
    _check_shapes(pred, pseudo)
    target = squashed_laplace(pseudo.to(pred.dtype)).detach()
    edges = squashed_laplace(pred)
    on_edge = torch.log(edges.clamp(floor, 1 - EPS))
    off_edge = torch.log(1 - edges.clamp(EPS, 1 - EPS))
    return -(target * on_edge + (1 - target) * off_edge).mean()


def pseudo_label_loss(pred: torch.Tensor, pseudo: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    loss = pred.new_zeros(())
    if cfg.use_focal:
        loss = loss + focal_loss(pred, pseudo, cfg.gamma)
    if cfg.use_boundary:
        loss = loss + boundary_loss(pred, pseudo, cfg.boundary_floor)
    return loss


def branch_loss(
    pred: torch.Tensor, gt: torch.Tensor, pseudo: torch.Tensor, cfg: LossConfig
) -> torch.Tensor:
    _check_shapes(pred, gt, pseudo)
    ps_active = cfg.use_ps_term and (cfg.use_focal or cfg.use_boundary)
    if not ps_active:
        return bce_loss(pred, gt)
    if not cfg.use_gt_term:
        return pseudo_label_loss(pred, pseudo, cfg)
    return cfg.alpha * pseudo_label_loss(pred, pseudo, cfg) + (1 - cfg.alpha) * bce_loss(pred, gt)


def total_loss(
    global_pred: torch.Tensor | None,
    local_pred: torch.Tensor | None,
    gt: torch.Tensor,
    pseudo: torch.Tensor,
    cfg: LossConfig,
) -> torch.Tensor:
    """Sum of the branch losses. A ``None`` branch (ablated) contributes nothing."""
    branches = [p for p in (global_pred, local_pred) if p is not None]
    if not branches:
        raise ValueError("need at least one branch prediction")
    return sum(branch_loss(p, gt, pseudo, cfg) for p in branches)
