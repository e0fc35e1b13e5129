"""Per-view binary classifiers over the enhanced features."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigError
from .views import ViewKind

CLAMP_EPS = 1e-7


class ClampCounter:
    """Counts how often probabilities had to be clamped away from {0, 1}."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


# Shared diagnostics for numeric guards in the loss layer.
clamp_diagnostics = ClampCounter()


@dataclass
class ClassifierConfig:
    backbone: str = "small_cnn"
    input_channels: int = 32
    width: int = 32
    blocks: int = 6
    dropout: float = 0.0

    def __post_init__(self):
        if self.backbone not in ("small_cnn", "deep_cnn"):
            raise ConfigError(f"unknown backbone {self.backbone!r}")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError("dropout must be in [0, 1)")


@dataclass
class Prediction:
    p_fake: float
    view: ViewKind


class SmallCNN(nn.Module):
    """Strided CNN with global average pooling and a single sigmoid head.

    Capacity is sized for desk-scale corpora; the backbone is pluggable via
    ClassifierConfig so a heavier model can be dropped in unchanged.
    """

    def __init__(self, config: ClassifierConfig, view_kind: ViewKind | None = None):
        super().__init__()
        self.config = config
        self.view_kind = view_kind
        depth_mult = 2 if config.backbone == "deep_cnn" else 1
        layers = []
        cin = config.input_channels
        width = config.width
        for b in range(config.blocks):
            cout = min(width * 2 ** (b // 2), width * 4) * depth_mult
            layers.append(nn.Conv2d(cin, cout, 3, stride=2, padding=1))
            layers.append(nn.GroupNorm(4, cout))
            layers.append(nn.LeakyReLU(0.2))
            if config.dropout:
                layers.append(nn.Dropout2d(config.dropout))
            cin = cout
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(cin, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Returns the pre-sigmoid logit, shape (B,)."""
        single = x.ndim == 3
        if single:
            x = x.unsqueeze(0)
        out = self.fc(self.pool(self.features(x)).flatten(1)).squeeze(-1)
        return out.squeeze(0) if single else out


def classify(feature: torch.Tensor, model: SmallCNN) -> Prediction:
    """Fake probability for one enhanced feature map; eval-mode deterministic."""
    if feature.ndim not in (3, 4):
        raise ConfigError(f"expected (C, H, W) feature, got shape {tuple(feature.shape)}")
    channels = feature.shape[-3]
    if channels != model.config.input_channels:
        raise ConfigError(
            f"feature has {channels} channels but classifier expects {model.config.input_channels}"
        )
    with torch.no_grad():
        p = torch.sigmoid(model(feature))
    p = float(p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS))
    return Prediction(p_fake=p, view=model.view_kind)


def ce_loss(p, y) -> torch.Tensor:
    """Binary cross-entropy on fake probabilities, mean-reduced over a batch.

    Probabilities outside (eps, 1-eps) are clamped and counted in the shared
    clamp diagnostics; labels follow the 0 = real, 1 = fake convention.
    """
    p = torch.as_tensor(p)
    y = torch.as_tensor(y, dtype=p.dtype, device=p.device)
    if p.shape != y.shape:
        raise ConfigError(f"prediction/label shape mismatch: {tuple(p.shape)} vs {tuple(y.shape)}")
    out_of_range = ((p <= CLAMP_EPS) | (p >= 1.0 - CLAMP_EPS)).sum()
    if int(out_of_range):
        clamp_diagnostics.count += int(out_of_range)
    p = p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
    loss = -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p))
    return loss.mean()
