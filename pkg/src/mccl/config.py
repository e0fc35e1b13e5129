"""Flat key-value run configuration.

One document covers every tunable in the pipeline. Keys are dotted
(`section.field`), values are scalars or short lists, and unknown keys are
rejected outright so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .classifier import ClassifierConfig
from .errors import ConfigError
from .intraview import PyramidConfig
from .restorer import AugmentParams, RestorerConfig
from .spectral import ButterworthFilter
from .views import EdgeParams

# key -> (default, comment). The comment is emitted into the shipped config.
DEFAULTS = {
    "seed": (0, "global RNG seed; every stochastic choice derives from it"),
    "resolution": (64, "square image side; desk-scale default (method reference scale is 128)"),
    "views.mask_ratio": (0.5, "fraction of the 16x16 patch grid that gets masked (method default)"),
    "views.mask_fill": (0.5, "fill value for masked patches; mid-gray is distribution-neutral"),
    "views.edge_sigma": (1.0, "Gaussian pre-smoothing for the Canny edge view"),
    "views.edge_low": (0.1, "Canny low hysteresis threshold on [0,1] luma"),
    "views.edge_high": (0.2, "Canny high hysteresis threshold on [0,1] luma"),
    "restorer.skip_blocks": (4, "U-Net levels S; desk default 4 at 64px, method default 5 at 128px"),
    "restorer.base_channels": (16, "encoder width at full resolution; 64 at full scale"),
    "restorer.lambda_freq": (10.0, "weight of the spectral term in the restoration loss (method default)"),
    "restorer.mask_channel": (False, "append the mask indicator channel to the masked restorer input"),
    "restorer.augment": (True, "enable noise/jitter/blur input augmentation during restorer training"),
    "restorer.noise_sigma_max": (0.05, "augmentation: max additive Gaussian sigma"),
    "restorer.jitter_range": (0.1, "augmentation: per-channel multiplicative jitter, +/- fraction"),
    "restorer.blur_sigma_max": (1.0, "augmentation: max Gaussian blur sigma"),
    "intraview.pyramid_channels": (32, "channel width of every feature-pyramid level"),
    "intraview.butterworth_d0": (0.1, "low-pass cutoff for the residual attention (Nyquist = 0.5)"),
    "intraview.butterworth_order": (1, "Butterworth order; the attention uses first order"),
    "classifier.backbone": ("small_cnn", "small_cnn | deep_cnn; desk-scale replacement for a heavy backbone"),
    "classifier.width": (32, "base width of the classifier CNN"),
    "classifier.blocks": (6, "number of strided blocks before global average pooling"),
    "classifier.dropout": (0.0, "2D dropout inside classifier blocks"),
    "fusion.tau": (4.0, "power exponent of the loss-fusion weights (method default)"),
    "fusion.beta_update": ("per_epoch", "per_epoch | per_k_steps: cadence of the closed-form beta update"),
    "fusion.beta_update_k": (100, "step interval when beta_update = per_k_steps"),
    "fusion.per_view_loss_only": (False, "train each view on its own loss instead of the beta-weighted sum"),
    "training.lr": (1e-3, "initial Adam learning rate (method default)"),
    "training.lr_halving_period": (10, "halve the learning rate after every this many epochs (method default)"),
    "training.batch_size": (32, "desk-scale batch; 80 at full scale"),
    "training.stage1_epochs": (12, "restorer training epochs"),
    "training.stage2_epochs": (10, "classifier training epochs"),
    "training.continue_restorer_updates": (False, "keep updating restorers on real samples during stage 2"),
    "training.val_fraction": (0.1, "held-out fraction used to monitor restoration loss"),
    "training.checkpoint_keep": (3, "per-epoch checkpoints retained per model"),
    "baseline.epochs": (10, "training epochs for the raw-pixel reference CNN / attack surrogate"),
    "toy.n_real": (1000, "synthetic corpus: number of real images"),
    "toy.n_fake": (1000, "synthetic corpus: number of fake images"),
    "toy.artifact": ("spectral_bump", "grid | checkerboard_residual | spectral_bump"),
    "toy.amplitude": (0.1, "artifact amplitude; must leave pixel values inside [0,1]"),
    "toy.train_fraction": (0.7, "train/test split of the toy corpus"),
    "perturb.epsilon": (8.0 / 255.0, "l-inf budget for FGSM/PGD (method evaluation default 8/255)"),
    "perturb.pgd_steps": (10, "PGD iterations"),
    "perturb.pgd_step_fraction": (0.25, "PGD step size as a fraction of epsilon"),
    "perturb.blur_sigmas": ([1.0, 2.0], "per-image blur sigma grid"),
    "perturb.crop_fractions": ([0.9, 0.8], "per-image crop fraction grid"),
    "perturb.jpeg_qualities": ([90, 70, 50], "per-image JPEG quality grid"),
    "perturb.noise_sigmas": ([0.01, 0.02], "per-image noise sigma grid"),
    "perturb.sdn_max_scale": (10.0, "cap on the per-bin spectral rescaling factor"),
    "paths.workdir": ("runs/experiment", "checkpoints, corpora and reports land here"),
}


@dataclass
class PipelineConfig:
    """Typed view over a validated flat config document."""

    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    @property
    def resolution(self) -> int:
        return int(self.values["resolution"])

    def restorer_config(self) -> RestorerConfig:
        return RestorerConfig(
            skip_blocks=int(self.values["restorer.skip_blocks"]),
            base_channels=int(self.values["restorer.base_channels"]),
            lambda_freq=float(self.values["restorer.lambda_freq"]),
            mask_channel=bool(self.values["restorer.mask_channel"]),
        )

    def augment_params(self) -> AugmentParams:
        return AugmentParams(
            enabled=bool(self.values["restorer.augment"]),
            noise_sigma_max=float(self.values["restorer.noise_sigma_max"]),
            jitter_range=float(self.values["restorer.jitter_range"]),
            blur_sigma_max=float(self.values["restorer.blur_sigma_max"]),
        )

    def edge_params(self) -> EdgeParams:
        return EdgeParams(
            sigma=float(self.values["views.edge_sigma"]),
            low_threshold=float(self.values["views.edge_low"]),
            high_threshold=float(self.values["views.edge_high"]),
        )

    def pyramid_config(self) -> PyramidConfig:
        return PyramidConfig(
            channels=int(self.values["intraview.pyramid_channels"]),
            levels=int(self.values["restorer.skip_blocks"]),
        )

    def butterworth(self) -> ButterworthFilter:
        return ButterworthFilter(
            cutoff_d0=float(self.values["intraview.butterworth_d0"]),
            order=int(self.values["intraview.butterworth_order"]),
        )

    def classifier_config(self) -> ClassifierConfig:
        return ClassifierConfig(
            backbone=str(self.values["classifier.backbone"]),
            input_channels=int(self.values["intraview.pyramid_channels"]),
            width=int(self.values["classifier.width"]),
            blocks=int(self.values["classifier.blocks"]),
            dropout=float(self.values["classifier.dropout"]),
        )

    def digest(self) -> str:
        """Digest of the semantic configuration; output locations (paths.*)
        do not change what is computed and are excluded."""
        canon = json.dumps(
            {k: v for k, v in self.values.items() if not k.startswith("paths.")},
            sort_keys=True,
        )
        return hashlib.sha256(canon.encode()).hexdigest()


def _coerce(key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected bool, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{key}: expected integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected list, got {value!r}")
        return list(value)
    raise ConfigError(f"{key}: unsupported config type {type(default)}")


def default_config(**overrides) -> PipelineConfig:
    values = {k: v for k, (v, _) in DEFAULTS.items()}
    unknown = set(overrides) - set(values)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key, val in overrides.items():
        values[key] = _coerce(key, val, DEFAULTS[key][0])
    return PipelineConfig(values)


def load_config(path: str | Path) -> PipelineConfig:
    """Parse and validate a flat YAML config; every key must be known."""
    raw = yaml.safe_load(Path(path).read_text())
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping, got {type(raw).__name__}")
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    return default_config(**raw)


def write_default_config(path: str | Path) -> None:
    """Emit the shipped defaults with one comment per key."""
    lines = ["# Flat run configuration; unknown keys are rejected.", ""]
    for key, (value, comment) in DEFAULTS.items():
        rendered = yaml.safe_dump({key: value}, default_flow_style=True).strip()
        if rendered.startswith("{") and rendered.endswith("}"):
            rendered = rendered[1:-1]
        lines.append(f"{rendered}  # {comment}")
    Path(path).write_text("\n".join(lines) + "\n")
