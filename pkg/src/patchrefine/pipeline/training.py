"""Training loop: Adam, reduce-on-plateau learning rate, early stopping on training loss."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from patchrefine.losses import LossConfig, total_loss
from patchrefine.network import Checkpoint, NetworkConfig, PatchRefineNet
from patchrefine.pipeline.data import Sample, augment

log = logging.getLogger(__name__)


class MissingPseudoLabels(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 8e-4
    min_lr: float = 5e-8
    lr_decay: float = 0.5
    lr_patience: int = 3
    batch_size: int = 4
    max_epochs: int = 300
    early_stop_patience: int = 10
    augment: bool = True
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def __post_init__(self):
        if not 0 < self.min_lr < self.initial_lr:
            raise ValueError(f"need 0 < min_lr < initial_lr, got {self.min_lr}, {self.initial_lr}")
        if not 0 < self.lr_decay < 1:
            raise ValueError(f"lr_decay must lie in (0, 1), got {self.lr_decay}")
        if self.early_stop_patience < 1 or self.lr_patience < 1:
            raise ValueError("patience values must be at least 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")


class EarlyStopping:
    """Signals a stop after ``patience`` consecutive epochs without a new best loss."""

    def __init__(self, patience: int, min_delta: float = 0.0):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.count = 0

    def update(self, loss: float) -> bool:
        """Record one epoch's loss; returns True when training should stop."""
        if loss < self.best - self.min_delta:
            self.best = loss
            self.count = 0
        else:
            self.count += 1
        return self.count >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    wall_time: float


def _batch(samples: Sequence[Sample]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    def stack(name):
        return torch.from_numpy(np.stack([getattr(s, name) for s in samples]).astype(np.float32))[:, None]

    return stack("logit_map"), stack("ground_truth"), stack("pseudo_label")


def train(
    cfg: TrainConfig,
    samples: Sequence[Sample],
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> tuple[Checkpoint, list[EpochRecord]]:
    """Fit a fresh network on ``samples`` (the validation-role set).

    Returns the weights with the lowest epoch training loss and the per-epoch
    history.
    """
    p = cfg.network.patch_size
    missing = [s.sample_id for s in samples if s.pseudo_label is None or s.pseudo_patch_size != p]
    if missing:
        raise MissingPseudoLabels(
            f"{len(missing)} samples lack pseudo-labels at P={p} (e.g. {missing[0]}); "
            "run the pseudo command first"
        )
    if not samples:
        raise ValueError("no training samples")

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = PatchRefineNet(cfg.network)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.initial_lr)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, mode="min", factor=cfg.lr_decay, patience=cfg.lr_patience,
        threshold=0.0, min_lr=cfg.min_lr,
    )
    stopper = EarlyStopping(cfg.early_stop_patience)
    history: list[EpochRecord] = []
    best = Checkpoint.from_model(model)
    start = time.perf_counter()

    for epoch in range(1, cfg.max_epochs + 1):
        lr = optimizer.param_groups[0]["lr"]
        order = rng.permutation(len(samples))
        losses, weights = [], []
        for i in range(0, len(order), cfg.batch_size):
            batch = [samples[j] for j in order[i:i + cfg.batch_size]]
            if cfg.augment:
                batch = [augment(s, rng) for s in batch]
            x, gt, pseudo = _batch(batch)
            out = model(x)
            loss = total_loss(out.global_map, out.local_map, gt, pseudo, cfg.loss)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
            weights.append(len(batch))
        epoch_loss = float(np.average(losses, weights=weights))
        record = EpochRecord(epoch, lr, epoch_loss, time.perf_counter() - start)
        history.append(record)
        log.info("epoch %d lr %.3g loss %.5f", epoch, lr, epoch_loss)
        if on_epoch is not None:
            on_epoch(record)
        if epoch_loss < best.best_val_loss:
            best = Checkpoint.from_model(model, epoch, epoch_loss)
        scheduler.step(epoch_loss)
        if stopper.update(epoch_loss):
            break

    return best, history


def ablation_config(cfg: TrainConfig, variant: str) -> TrainConfig:
    """Training config for one named design/loss ablation."""
    net, loss = cfg.network, cfg.loss
    variants = {
        "full": (net, loss),
        "global_only": (replace(net, branches="global"), loss),
        "local_only": (replace(net, branches="local"), loss),
        "gt_only": (net, replace(loss, use_ps_term=False, use_gt_term=True)),
        "ps_only": (net, replace(loss, use_gt_term=False, use_ps_term=True)),
        "focal_only": (net, replace(loss, use_boundary=False, use_focal=True)),
        "boundary_only": (net, replace(loss, use_focal=False, use_boundary=True)),
    }
    if variant not in variants:
        raise ValueError(f"unknown ablation {variant!r}; choose from {sorted(variants)}")
    net, loss = variants[variant]
    return replace(cfg, network=net, loss=loss)
