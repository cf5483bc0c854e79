"""Desk-scale configurations: 128 px synthetic corpus and a quarter-width network."""

from __future__ import annotations

from patchrefine.losses import LossConfig
from patchrefine.network import NetworkConfig
from patchrefine.pipeline.synthetic import SyntheticConfig
from patchrefine.pipeline.training import TrainConfig


def desk_synthetic_config(seed: int = 0) -> SyntheticConfig:
    return SyntheticConfig(
        image_side=128, n_train=300, n_val=100, n_test=100, shape_kind="roads",
        blur_radius=1.0, noise_std=0.05, bias_patch=16, bias_magnitude=0.4, seed=seed,
    )


def desk_network_config(seed: int = 0) -> NetworkConfig:
    return NetworkConfig(
        input_side=128, patch_size=16, width_scale=0.25, encoder_blocks=(1, 1, 1, 1), seed=seed,
    )


def desk_train_config(seed: int = 0, max_epochs: int = 60) -> TrainConfig:
    return TrainConfig(
        max_epochs=max_epochs, seed=seed, loss=LossConfig(), network=desk_network_config(seed),
    )
