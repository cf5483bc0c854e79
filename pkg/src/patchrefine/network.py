"""Patch refinement network: residual encoder, pyramid pooling, global and local decoders.

The local decoder runs every decoding level patch-by-patch: features and
skips are cut into the ``(S/P)**2`` grid, each patch goes through the same
block, and the results are stitched back before the next level. Patches are
stacked on the batch axis, so "independent processing" costs one call.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from patchrefine.core import ConfigError, binarize

BRANCH_MODES = ("both", "global", "local")
CHECKPOINT_FORMAT = "patchrefine-checkpoint/1"


@dataclass(frozen=True)
class NetworkConfig:
    input_side: int = 512
    encoder_widths: tuple[int, ...] = (32, 64, 128, 256)
    pooling_sizes: tuple[int, ...] = (1, 2, 4, 8)
    patch_size: int = 64
    width_scale: float = 1.0
    seed: int = 0
    # residual blocks per encoder level; (3, 4, 6, 3) is the ResNet-34 layout
    encoder_blocks: tuple[int, ...] = (3, 4, 6, 3)
    branches: str = "both"
    # heads predict a log-odds correction on top of the input map
    input_residual: bool = True

    def __post_init__(self):
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        object.__setattr__(self, "pooling_sizes", tuple(int(s) for s in self.pooling_sizes))
        object.__setattr__(self, "encoder_blocks", tuple(int(b) for b in self.encoder_blocks))
        if len(self.encoder_widths) != 4 or len(self.encoder_blocks) != 4:
            raise ConfigError("the encoder has exactly four levels")
        if any(b < 1 for b in self.encoder_blocks):
            raise ConfigError(f"every level needs a block, got {self.encoder_blocks}")
        if self.width_scale <= 0:
            raise ConfigError(f"width_scale must be positive, got {self.width_scale}")
        widths = self.widths
        if any(a >= b for a, b in zip(widths, widths[1:])):
            raise ConfigError(f"encoder widths must strictly increase, got {widths}")
        if widths[-1] % 4:
            raise ConfigError(f"top width {widths[-1]} must be divisible by 4")
        if self.input_side % 8:
            raise ConfigError(f"input side {self.input_side} must be divisible by 8")
        if self.patch_size <= 0 or self.input_side % self.patch_size:
            raise ConfigError(
                f"patch size {self.patch_size} does not divide input side {self.input_side}"
            )
        if self.patch_size % 8:
            raise ConfigError(
                f"patch size {self.patch_size} must be a multiple of 8 to tile the bottleneck"
            )
        if not self.pooling_sizes or self.bottleneck_side % max(self.pooling_sizes):
            raise ConfigError(
                f"bottleneck side {self.bottleneck_side} not divisible by pooling sizes {self.pooling_sizes}"
            )
        if self.branches not in BRANCH_MODES:
            raise ConfigError(f"branches must be one of {BRANCH_MODES}, got {self.branches!r}")

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(max(1, round(w * self.width_scale)) for w in self.encoder_widths)

    @property
    def bottleneck_side(self) -> int:
        return self.input_side // 8

    @property
    def grid_side(self) -> int:
        return self.input_side // self.patch_size

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


class BranchOutputs(NamedTuple):
    global_map: Optional[torch.Tensor]
    local_map: Optional[torch.Tensor]


def conv_bn_relu(cin, cout, kernel_size=3, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel_size, stride=stride, padding=kernel_size // 2, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class BasicBlock(nn.Module):
    """ResNet basic block: two 3x3 convolutions with an identity or projected shortcut."""

    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False), nn.BatchNorm2d(cout)
            )

    def forward(self, x):
        identity = x if self.shortcut is None else self.shortcut(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity)


class Encoder(nn.Module):
    """Four residual levels; the first keeps full resolution, the others halve it."""

    def __init__(self, widths, blocks):
        super().__init__()
        self.stem = conv_bn_relu(1, widths[0])
        self.levels = nn.ModuleList()
        cin = widths[0]
        for i, (w, n) in enumerate(zip(widths, blocks)):
            stride = 1 if i == 0 else 2
            layers = [BasicBlock(cin, w, stride)] + [BasicBlock(w, w) for _ in range(n - 1)]
            self.levels.append(nn.Sequential(*layers))
            cin = w

    def forward(self, x):
        x = self.stem(x)
        skips = []
        for level in self.levels:
            x = level(x)
            skips.append(x)
        # the last level's output is the pre-pooling bottleneck, not a skip
        return x, skips[:-1]


class PyramidPooling(nn.Module):
    def __init__(self, channels, pooling_sizes):
        super().__init__()
        reduced = channels // 4
        self.pooling_sizes = tuple(pooling_sizes)
        self.stages = nn.ModuleList(
            nn.Sequential(
                nn.AdaptiveAvgPool2d(s),
                nn.Conv2d(channels, reduced, 1),
                nn.ReLU(inplace=True),
            )
            for s in self.pooling_sizes
        )
        self.fuse = conv_bn_relu(channels + reduced * len(self.pooling_sizes), channels, 1)

    def forward(self, x):
        side = x.shape[-1]
        if x.shape[-2] % max(self.pooling_sizes) or side % max(self.pooling_sizes):
            raise ConfigError(
                f"feature side {tuple(x.shape[-2:])} not divisible by pooling sizes {self.pooling_sizes}"
            )
        size = x.shape[-2:]
        pooled = [
            F.interpolate(stage(x), size=size, mode="bilinear", align_corners=True)
            for stage in self.stages
        ]
        return self.fuse(torch.cat([x, *pooled], dim=1))


class AttentionGate(nn.Module):
    """Additive attention over a skip connection.

    Args:
        skip_channels: channels of the encoder skip features.
        gate_channels: channels of the (coarser) decoder features.
        inter_channels: width of the joint projection.
    """

    def __init__(self, skip_channels, gate_channels, inter_channels):
        super().__init__()
        self.theta = nn.Conv2d(skip_channels, inter_channels, 1, bias=False)
        self.phi = nn.Conv2d(gate_channels, inter_channels, 1)
        self.psi = nn.Conv2d(inter_channels, 1, 1)

    def coefficients(self, skip, gate):
        if gate.shape[-2] > skip.shape[-2] or gate.shape[-1] > skip.shape[-1]:
            raise ConfigError(
                f"gate {tuple(gate.shape[-2:])} is larger than skip {tuple(skip.shape[-2:])}"
            )
        if gate.shape[0] != skip.shape[0]:
            raise ConfigError("gate and skip batch sizes differ")
        g = self.phi(gate)
        if g.shape[-2:] != skip.shape[-2:]:
            g = F.interpolate(g, size=skip.shape[-2:], mode="bilinear", align_corners=True)
        return torch.sigmoid(self.psi(F.relu(self.theta(skip) + g)))

    def forward(self, skip, gate):
        return skip * self.coefficients(skip, gate)


class DecoderBlock(nn.Module):
    """Upsample, gate the skip with the decoder features, concatenate, convolve."""

    def __init__(self, cin, skip_channels, cout):
        super().__init__()
        self.up_conv = conv_bn_relu(cin, cout)
        self.gate = AttentionGate(skip_channels, cin, max(1, skip_channels // 2))
        self.conv = nn.Sequential(conv_bn_relu(cout + skip_channels, cout), conv_bn_relu(cout, cout))

    def forward(self, x, skip):
        gated = self.gate(skip, x)
        up = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=True)
        up = self.up_conv(up)
        return self.conv(torch.cat([up, gated], dim=1))


class Decoder(nn.Module):
    def __init__(self, widths):
        super().__init__()
        # bottleneck -> level 3 -> level 2 -> level 1 (full resolution)
        self.blocks = nn.ModuleList(
            DecoderBlock(widths[i + 1], widths[i], widths[i]) for i in reversed(range(3))
        )
        self.head = nn.Conv2d(widths[0], 1, 1)

    def output(self, x, side, prior=None):
        logits = self.head(x)
        if logits.shape[-1] != side:
            logits = F.interpolate(logits, size=(side, side), mode="bilinear", align_corners=True)
        if prior is not None:
            logits = logits + prior
        return torch.sigmoid(logits)


def input_log_odds(x: torch.Tensor, eps: float = 1e-3) -> torch.Tensor:
    x = x.clamp(eps, 1 - eps)
    return torch.log(x) - torch.log1p(-x)


def split_batch(x: torch.Tensor, grid_side: int) -> torch.Tensor:
    """``(B, C, H, W)`` -> ``(B * g * g, C, H / g, W / g)``, patches row-major per image."""
    b, c, h, w = x.shape
    if h % grid_side or w % grid_side:
        raise ConfigError(f"grid side {grid_side} does not divide feature side {(h, w)}")
    ph, pw = h // grid_side, w // grid_side
    x = x.reshape(b, c, grid_side, ph, grid_side, pw)
    return x.permute(0, 2, 4, 1, 3, 5).reshape(b * grid_side * grid_side, c, ph, pw)


def merge_batch(x: torch.Tensor, grid_side: int) -> torch.Tensor:
    """Inverse of :func:`split_batch`."""
    n, c, ph, pw = x.shape
    k = grid_side * grid_side
    if n % k:
        raise ConfigError(f"{n} patches cannot form {grid_side}x{grid_side} grids")
    x = x.reshape(n // k, grid_side, grid_side, c, ph, pw)
    return x.permute(0, 3, 1, 4, 2, 5).reshape(n // k, c, grid_side * ph, grid_side * pw)


class PatchRefineNet(nn.Module):
    def __init__(self, config: NetworkConfig = NetworkConfig()):
        super().__init__()
        self.config = config
        widths = config.widths
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.encoder = Encoder(widths, config.encoder_blocks)
            self.pyramid = PyramidPooling(widths[-1], config.pooling_sizes)
            self.global_decoder = Decoder(widths) if config.branches != "local" else None
            self.local_decoder = Decoder(widths) if config.branches != "global" else None
            self._init_weights()

    def _init_weights(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
        if self.config.input_residual:
            # start as the identity map on the input scores
            for decoder in (self.global_decoder, self.local_decoder):
                if decoder is not None:
                    nn.init.zeros_(decoder.head.weight)

    def _check_input(self, x):
        side = self.config.input_side
        if x.ndim != 4 or x.shape[1] != 1 or tuple(x.shape[-2:]) != (side, side):
            raise ConfigError(
                f"expected input of shape (B, 1, {side}, {side}), got {tuple(x.shape)}"
            )

    def encode(self, x):
        self._check_input(x)
        bottleneck, skips = self.encoder(x)
        return self.pyramid(bottleneck), skips

    def global_decode(self, bottleneck, skips, prior=None):
        x = bottleneck
        for block, skip in zip(self.global_decoder.blocks, reversed(skips)):
            x = block(x, skip)
        return self.global_decoder.output(x, self.config.input_side, prior)

    def local_level(self, block, x, skip, order=None):
        """One patch-wise decoding level; ``order`` permutes patch processing order."""
        g = self.config.grid_side
        xp, sp = split_batch(x, g), split_batch(skip, g)
        if order is not None:
            perm = torch.as_tensor(order)
            inverse = torch.argsort(perm)
            return merge_batch(block(xp[perm], sp[perm])[inverse], g)
        return merge_batch(block(xp, sp), g)

    def local_decode(self, bottleneck, skips, prior=None, order=None):
        x = bottleneck
        for block, skip in zip(self.local_decoder.blocks, reversed(skips)):
            x = self.local_level(block, x, skip, order)
        return self.local_decoder.output(x, self.config.input_side, prior)

    def forward(self, x) -> BranchOutputs:
        bottleneck, skips = self.encode(x)
        prior = input_log_odds(x) if self.config.input_residual else None
        g = l = None
        if self.global_decoder is not None:
            g = self.global_decode(bottleneck, skips, prior)
        if self.local_decoder is not None:
            l = self.local_decode(bottleneck, skips, prior)
        return BranchOutputs(g, l)

    @torch.no_grad()
    def refine(self, logits: np.ndarray, branch: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Final logit map and its 0.5 binarization for one ``(S, S)`` map.

        ``branch`` may be ``"global"`` or ``"local"`` to read a single branch.
        """
        was_training = self.training
        self.eval()
        try:
            x = torch.as_tensor(np.asarray(logits, dtype=np.float32))[None, None]
            out = self(x.to(next(self.parameters()).dtype))
        finally:
            self.train(was_training)
        final = combine_branches(out, branch)
        final = final[0, 0].double().numpy()
        return final, binarize(final, 0.5)


def combine_branches(out: BranchOutputs, branch: str | None = None) -> torch.Tensor:
    if branch == "global" or out.local_map is None:
        if out.global_map is None:
            raise ValueError("the global branch was not computed")
        return out.global_map
    if branch == "local" or out.global_map is None:
        if out.local_map is None:
            raise ValueError("the local branch was not computed")
        return out.local_map
    if branch not in (None, "both"):
        raise ValueError(f"unknown branch {branch!r}")
    return (out.global_map + out.local_map) / 2


def activation_trace(model: PatchRefineNet, x: torch.Tensor, branch: str = "local") -> list[tuple[str, tuple]]:
    """Shapes of every leaf-module output produced while decoding one branch.

    Used for activation accounting: the element total is the memory a branch
    materialises, independent of how patches are scheduled.
    """
    decoder = model.local_decoder if branch == "local" else model.global_decoder
    records: list[tuple[str, tuple]] = []
    hooks = []
    for name, module in decoder.named_modules():
        if len(list(module.children())) == 0:
            hooks.append(module.register_forward_hook(
                lambda m, i, o, name=name: records.append((name, tuple(o.shape)))
            ))
    try:
        with torch.no_grad():
            bottleneck, skips = model.encode(x)
            if branch == "local":
                model.local_decode(bottleneck, skips)
            else:
                model.global_decode(bottleneck, skips)
    finally:
        for h in hooks:
            h.remove()
    return records


def activation_elements(records) -> int:
    return int(sum(np.prod(shape) for _, shape in records))


def shape_trace(model: PatchRefineNet, batch: int = 1) -> dict[str, tuple]:
    """Named tensor shapes along one forward pass (eval mode, zeros input)."""
    side = model.config.input_side
    x = torch.zeros(batch, 1, side, side)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            raw, skips = model.encoder(x)
            bottleneck = model.pyramid(raw)
            out = model(x)
    finally:
        model.train(was_training)
    trace = {"input": tuple(x.shape)}
    for i, s in enumerate(skips, 1):
        trace[f"skip{i}"] = tuple(s.shape)
    trace["encoder_out"] = tuple(raw.shape)
    trace["bottleneck"] = tuple(bottleneck.shape)
    if out.global_map is not None:
        trace["global_map"] = tuple(out.global_map.shape)
    if out.local_map is not None:
        trace["local_map"] = tuple(out.local_map.shape)
    return trace


@dataclass
class Checkpoint:
    config: NetworkConfig
    weights: dict = field(repr=False)
    training_epoch: int = 0
    best_val_loss: float = float("inf")

    @classmethod
    def from_model(cls, model: PatchRefineNet, epoch: int = 0, best_loss: float = float("inf")):
        weights = {k: v.detach().clone() for k, v in model.state_dict().items()}
        return cls(model.config, weights, epoch, best_loss)

    def build(self) -> PatchRefineNet:
        model = PatchRefineNet(self.config)
        model.load_state_dict(self.weights)
        model.eval()
        return model

    def save(self, path: str | Path) -> None:
        torch.save(
            {
                "format": CHECKPOINT_FORMAT,
                "config": json.dumps(self.config.to_dict(), sort_keys=True),
                "weights": self.weights,
                "training_epoch": self.training_epoch,
                "best_val_loss": self.best_val_loss,
            },
            path,
        )

    @classmethod
    def load(cls, path: str | Path, expected: NetworkConfig | None = None) -> "Checkpoint":
        payload = torch.load(path, map_location="cpu", weights_only=True)
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format {payload.get('format')!r}")
        config = NetworkConfig.from_dict(json.loads(payload["config"]))
        if expected is not None and expected != config:
            raise ConfigError(f"{path}: checkpoint config {config} does not match {expected}")
        return cls(config, payload["weights"], payload["training_epoch"], payload["best_val_loss"])
