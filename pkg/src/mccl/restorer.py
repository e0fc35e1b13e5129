"""View-to-image restorers: U-Net style encoder-decoders trained on real
images only, exposing the full ladder of decoder feature maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
from scipy.ndimage import gaussian_filter

from .data import LABEL_REAL
from .errors import ConfigError, ContractError, DimensionError
from .imgio import rng_for
from .spectral import frequency_loss
from .views import EdgeParams, MaskLayout, View, ViewKind, extract_view, make_mask_layout


@dataclass
class RestorerConfig:
    skip_blocks: int = 5
    base_channels: int = 16
    input_channels: int = 3
    output_channels: int = 3
    lambda_freq: float = 10.0
    max_width_mult: int = 8  # channel widths cap at base * this
    mask_channel: bool = False  # append the mask indicator for masked views

    def __post_init__(self):
        if self.skip_blocks < 2:
            raise ConfigError(f"skip_blocks must be >= 2, got {self.skip_blocks}")
        if self.lambda_freq < 0:
            raise ConfigError("lambda_freq must be non-negative")

    def validate_resolution(self, height: int, width: int) -> None:
        div = 2**self.skip_blocks
        if height % div or width % div:
            raise ConfigError(f"dims ({height}, {width}) not divisible by 2^S = {div}")
        if min(height, width) // 2 ** (self.skip_blocks - 1) < 4:
            raise ConfigError("deepest level would fall below 4 pixels; reduce skip_blocks")

    def width(self, level: int) -> int:
        return min(self.base_channels * 2**level, self.base_channels * self.max_width_mult)


@dataclass
class CompletionOutput:
    """Restored image plus the decoder features, deepest first.

    decoder_features[0] is the smallest map; each subsequent entry doubles
    spatially and the last one has the full input resolution.
    """

    restored: torch.Tensor
    decoder_features: list[torch.Tensor]


def _enc_block(cin, cout, stride):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride, 1),
        nn.GroupNorm(4, cout),
        nn.LeakyReLU(0.2),
    )


def _dec_block(cin, cout):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, 1, 1),
        nn.GroupNorm(4, cout),
        nn.ReLU(),
    )


class Restorer(nn.Module):
    """Encoder-decoder for one view, with skip connections at every level."""

    def __init__(self, config: RestorerConfig, view_kind: ViewKind):
        super().__init__()
        self.config = config
        self.view_kind = view_kind
        s = config.skip_blocks
        cin = config.input_channels + (1 if config.mask_channel and view_kind is ViewKind.MASKED else 0)

        self.encoders = nn.ModuleList()
        self.encoders.append(_enc_block(cin, config.width(0), stride=1))
        for lv in range(1, s):
            self.encoders.append(_enc_block(config.width(lv - 1), config.width(lv), stride=2))

        self.bottleneck = _dec_block(config.width(s - 1), config.width(s - 1))
        self.decoders = nn.ModuleList()
        for lv in range(s - 2, -1, -1):
            self.decoders.append(_dec_block(config.width(lv + 1) + config.width(lv), config.width(lv)))
        self.up = nn.Upsample(scale_factor=2, mode="nearest")
        self.head = nn.Conv2d(config.width(0), config.output_channels, 3, 1, 1)

    @property
    def feature_channels(self) -> list[int]:
        s = self.config.skip_blocks
        return [self.config.width(lv) for lv in range(s - 1, -1, -1)]

    def forward(self, x: torch.Tensor) -> CompletionOutput:
        single = x.ndim == 3
        if single:
            x = x.unsqueeze(0)
        h, w = x.shape[-2], x.shape[-1]
        if h % 2 ** (self.config.skip_blocks - 1) or w % 2 ** (self.config.skip_blocks - 1):
            raise DimensionError(f"input ({h}, {w}) not divisible by 2^(S-1)")

        skips = []
        out = x
        for enc in self.encoders:
            out = enc(out)
            skips.append(out)

        feats = [self.bottleneck(skips[-1])]
        for i, dec in enumerate(self.decoders):
            skip = skips[-2 - i]
            out = dec(torch.cat([self.up(feats[-1]), skip], dim=1))
            feats.append(out)
        restored = torch.sigmoid(self.head(feats[-1]))

        for a, b in zip(feats, feats[1:]):
            if 2 * a.shape[-1] != b.shape[-1] or 2 * a.shape[-2] != b.shape[-2]:
                raise DimensionError("decoder feature ladder broke the doubling contract")
        if single:
            restored = restored.squeeze(0)
            feats = [f.squeeze(0) for f in feats]
        return CompletionOutput(restored, feats)


def restorer_input(view: View, config: RestorerConfig) -> torch.Tensor:
    """Tensor fed to the restorer; optionally appends the mask indicator."""
    data = view.data
    if config.mask_channel and view.kind is ViewKind.MASKED:
        if view.mask is None:
            raise ConfigError("mask_channel requested but view carries no mask")
        data = torch.cat([data, view.mask.to(data.dtype)], dim=0)
    return data


def complete(view: View, restorer: Restorer) -> CompletionOutput:
    """Run a view through its restorer. Deterministic in evaluation mode."""
    if view.kind is not restorer.view_kind:
        raise ConfigError(f"view kind {view.kind} does not match restorer kind {restorer.view_kind}")
    return restorer(restorer_input(view, restorer.config))


def restoration_loss(original: torch.Tensor, output: CompletionOutput | torch.Tensor, lambda_freq: float) -> torch.Tensor:
    """Dual-domain restoration objective: mean absolute pixel error plus
    lambda times the spectral squared L2 distance."""
    restored = output.restored if isinstance(output, CompletionOutput) else output
    if original.shape != restored.shape:
        raise DimensionError(f"shape mismatch: {tuple(original.shape)} vs {tuple(restored.shape)}")
    pixel = (original - restored).abs().mean()
    return pixel + lambda_freq * frequency_loss(original, restored)


def pixel_l1(original: torch.Tensor, restored: torch.Tensor) -> torch.Tensor:
    return (original - restored).abs().mean()


@dataclass
class AugmentParams:
    """Stochastic input corruption applied to the source image before view
    extraction during restorer training; each op fires with prob 0.5."""

    enabled: bool = True
    noise_sigma_max: float = 0.05
    jitter_range: float = 0.1
    blur_sigma_max: float = 1.0
    prob: float = 0.5


def augment_image(image: torch.Tensor, rng: np.random.Generator, params: AugmentParams) -> torch.Tensor:
    if not params.enabled:
        return image
    out = image
    if rng.random() < params.prob:
        sigma = rng.uniform(0.0, params.noise_sigma_max)
        noise = torch.from_numpy(rng.normal(0.0, sigma, size=tuple(out.shape))).to(out.dtype)
        out = out + noise
    if rng.random() < params.prob:
        scale = 1.0 + rng.uniform(-params.jitter_range, params.jitter_range, size=(out.shape[0], 1, 1))
        out = out * torch.from_numpy(scale).to(out.dtype)
    if rng.random() < params.prob:
        sigma = rng.uniform(0.0, params.blur_sigma_max)
        if sigma > 1e-3:
            arr = out.detach().cpu().numpy()
            arr = gaussian_filter(arr, sigma=(0.0, sigma, sigma), mode="reflect")
            out = torch.from_numpy(arr).to(image.dtype)
    return out.clamp(0.0, 1.0)


@dataclass
class RestorerHistory:
    pixel: list = field(default_factory=list)
    freq: list = field(default_factory=list)
    val_pixel: list = field(default_factory=list)
    val_total: list = field(default_factory=list)


def _view_for(image, kind, *, mask_seed, mask_ratio, mask_fill, edge_params):
    layout = None
    if kind is ViewKind.MASKED:
        layout = make_mask_layout(image.shape[-2], image.shape[-1], mask_ratio, mask_seed)
    return extract_view(image, kind, layout=layout, edge_params=edge_params, fill=mask_fill)


def train_restorer(
    real_corpus: Sequence,
    kind: ViewKind,
    config: RestorerConfig,
    schedule,
    *,
    edge_params: EdgeParams = EdgeParams(),
    mask_ratio: float = 0.5,
    mask_fill: float = 0.5,
    augment: AugmentParams = AugmentParams(),
    val_fraction: float = 0.1,
    log=None,
) -> tuple[Restorer, RestorerHistory]:
    """Train one restorer on a real-only corpus.

    Every item must carry a real label; a single fake sample aborts the run.
    Mask layouts are resampled per training step; augmentation and batch
    order derive from (seed, epoch, step) so runs are reproducible.
    """
    items = list(real_corpus)
    for i, item in enumerate(items):
        if item.label != LABEL_REAL:
            raise ContractError(f"restorer corpus must be real-only; item {i} has label {item.label}")
    if not items:
        raise ContractError("empty restorer corpus")

    images = [it.image for it in items]
    h, w = images[0].shape[-2], images[0].shape[-1]
    config.validate_resolution(h, w)

    n_val = max(1, int(round(val_fraction * len(images)))) if len(images) > 1 else 0
    split_rng = rng_for(schedule.seed, "restorer-split", kind.value)
    order = split_rng.permutation(len(images))
    val_idx = set(order[:n_val].tolist())
    train_images = [images[i] for i in range(len(images)) if i not in val_idx]
    val_images = [images[i] for i in sorted(val_idx)]

    torch.manual_seed(int(rng_for(schedule.seed, "restorer-init", kind.value).integers(2**62)))
    model = Restorer(config, kind)
    opt = torch.optim.Adam(model.parameters(), lr=schedule.lr)
    history = RestorerHistory()
    batch = schedule.batch_size

    for epoch in range(schedule.epochs):
        for group in opt.param_groups:
            group["lr"] = schedule.lr_at(epoch)
        perm = rng_for(schedule.seed, "restorer-order", kind.value, epoch).permutation(len(train_images))
        model.train()
        ep_pix, ep_freq, n_batches = 0.0, 0.0, 0
        for step, start in enumerate(range(0, len(perm), batch)):
            idxs = perm[start : start + batch]
            xs, vs = [], []
            for j, idx in enumerate(idxs):
                rng = rng_for(schedule.seed, "restorer-aug", kind.value, epoch, step, int(idx))
                img = augment_image(train_images[idx], rng, augment)
                mask_seed = schedule.seed ^ (epoch * 1_000_003 + step) ^ int(idx)
                view = _view_for(
                    img, kind, mask_seed=mask_seed, mask_ratio=mask_ratio,
                    mask_fill=mask_fill, edge_params=edge_params,
                )
                xs.append(img)
                vs.append(restorer_input(view, config))
            x = torch.stack(xs)
            v = torch.stack(vs)
            opt.zero_grad()
            out = model(v)
            pix = (x - out.restored).abs().mean()
            freq = frequency_loss(x, out.restored)
            loss = pix + config.lambda_freq * freq
            loss.backward()
            opt.step()
            ep_pix += float(pix.detach())
            ep_freq += float(freq.detach())
            n_batches += 1
        history.pixel.append(ep_pix / max(n_batches, 1))
        history.freq.append(ep_freq / max(n_batches, 1))

        model.eval()
        val_pix, val_tot = _evaluate_restoration(
            model, val_images or train_images[: min(8, len(train_images))], kind,
            seed=schedule.seed, mask_ratio=mask_ratio, mask_fill=mask_fill,
            edge_params=edge_params, lambda_freq=config.lambda_freq,
        )
        history.val_pixel.append(val_pix)
        history.val_total.append(val_tot)
        if log:
            log(f"[{kind.value}] epoch {epoch}: L_pix={history.pixel[-1]:.4f} "
                f"L_fre={history.freq[-1]:.4f} val_pix={val_pix:.4f}")
    model.eval()
    return model, history


def _evaluate_restoration(model, images, kind, *, seed, mask_ratio, mask_fill, edge_params, lambda_freq):
    """Held-out restoration losses with per-image fixed mask layouts."""
    pix_sum, tot_sum = 0.0, 0.0
    with torch.no_grad():
        for i, img in enumerate(images):
            view = _view_for(
                img, kind, mask_seed=seed ^ i, mask_ratio=mask_ratio,
                mask_fill=mask_fill, edge_params=edge_params,
            )
            out = model(restorer_input(view, model.config))
            pix_sum += float((img - out.restored).abs().mean())
            tot_sum += float((img - out.restored).abs().mean() + lambda_freq * frequency_loss(img, out.restored))
    n = max(len(images), 1)
    return pix_sum / n, tot_sum / n
