"""Per-view feature enhancement: the multi-scale feature pyramid and the
low-pass residual-guided attention that together build the classifier input.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import DimensionError
from .spectral import ButterworthFilter, butterworth_lowpass


@dataclass
class PyramidConfig:
    channels: int = 32  # width of every pyramid level
    levels: int = 5  # must equal the restorer's skip_blocks

    def __post_init__(self):
        if self.channels <= 0 or self.levels < 1:
            raise ValueError("pyramid channels and levels must be positive")


def _check_ladder(features):
    for a, b in zip(features, features[1:]):
        if b.shape[-1] != 2 * a.shape[-1] or b.shape[-2] != 2 * a.shape[-2]:
            raise DimensionError(
                f"feature ladder broken: {tuple(a.shape)} -> {tuple(b.shape)} is not a spatial doubling"
            )


class FeaturePyramid(nn.Module):
    """Recursive upsample-and-fuse aggregation of the decoder feature maps.

    z_1 = Conv1(f_1); z_s = Conv3(Concat(Conv1(f_s), Up(z_{s-1}))) for s >= 2.
    The output z_S has `channels` channels at the full input resolution.
    """

    def __init__(self, feature_channels: list[int], channels: int = 32, bias: bool = True):
        super().__init__()
        self.channels = channels
        self.reduce = nn.ModuleList(nn.Conv2d(c, channels, 1, bias=bias) for c in feature_channels)
        self.fuse = nn.ModuleList(
            nn.Conv2d(2 * channels, channels, 3, padding=1, bias=bias)
            for _ in feature_channels[1:]
        )
        self.up = nn.Upsample(scale_factor=2, mode="nearest")

    def forward(self, decoder_features: list[torch.Tensor]) -> torch.Tensor:
        if len(decoder_features) != len(self.reduce):
            raise DimensionError(
                f"expected {len(self.reduce)} feature levels, got {len(decoder_features)}"
            )
        _check_ladder(decoder_features)
        single = decoder_features[0].ndim == 3  # Upsample needs an explicit batch dim
        if single:
            decoder_features = [f.unsqueeze(0) for f in decoder_features]
        z = self.reduce[0](decoder_features[0])
        for fuse, reduce, feat in zip(self.fuse, self.reduce[1:], decoder_features[1:]):
            z = fuse(torch.cat([reduce(feat), self.up(z)], dim=-3))
        return z.squeeze(0) if single else z


class FeatureEnhancer(nn.Module):
    """Combine the restored image with the pyramid top: F = Concat(Conv3(X~), Conv3(z_S))."""

    def __init__(self, channels: int = 32, image_channels: int = 3, bias: bool = True):
        super().__init__()
        self.conv_image = nn.Conv2d(image_channels, channels, 3, padding=1, bias=bias)
        self.conv_pyramid = nn.Conv2d(channels, channels, 3, padding=1, bias=bias)

    def forward(self, restored: torch.Tensor, z_top: torch.Tensor) -> torch.Tensor:
        if restored.shape[-2:] != z_top.shape[-2:]:
            raise DimensionError(
                f"spatial mismatch: restored {tuple(restored.shape[-2:])} vs pyramid {tuple(z_top.shape[-2:])}"
            )
        return torch.cat([self.conv_image(restored), self.conv_pyramid(z_top)], dim=-3)


class LowPassResidualAttention(nn.Module):
    """Gate the enhanced feature by the low-frequency reconstruction residual.

    M = |H(X) - H(X~)| with H a first-order Butterworth low-pass;
    M_hat = sigmoid(avgpool(conv7x7(M))) is a single-channel map in (0, 1)
    broadcast over channels: F_hat = M_hat * Conv3(F).

    The pooling is 3x3, stride 1, padded, so M_hat keeps the full resolution
    required by the elementwise product (it acts as smoothing only).
    """

    def __init__(self, feature_channels: int, out_channels: int, filt: ButterworthFilter = ButterworthFilter(), image_channels: int = 3):
        super().__init__()
        self.filt = filt
        self.conv_residual = nn.Conv2d(image_channels, 1, 7, padding=3)
        # padding excluded from the average so a constant map stays constant
        self.pool = nn.AvgPool2d(3, stride=1, padding=1, count_include_pad=False)
        self.conv_feature = nn.Conv2d(feature_channels, out_channels, 3, padding=1)

    def attention_map(self, original: torch.Tensor, restored: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if original.shape != restored.shape:
            raise DimensionError(
                f"shape mismatch: {tuple(original.shape)} vs {tuple(restored.shape)}"
            )
        m = (butterworth_lowpass(original, self.filt) - butterworth_lowpass(restored, self.filt)).abs()
        m_hat = torch.sigmoid(self.pool(self.conv_residual(m)))
        return m, m_hat

    def forward(self, original: torch.Tensor, restored: torch.Tensor, feature: torch.Tensor) -> torch.Tensor:
        if original.shape[-2:] != feature.shape[-2:]:
            raise DimensionError(
                f"spatial mismatch: image {tuple(original.shape[-2:])} vs feature {tuple(feature.shape[-2:])}"
            )
        _, m_hat = self.attention_map(original, restored)
        return m_hat * self.conv_feature(feature)
