"""Robustness attack suite: common manipulations, gradient-based adversarial
attacks against a declared surrogate, and spectrum calibration.

All perturbations preserve image shape and the [0, 1] range, and are
deterministic given their seed. The adversarial attacks only ever touch the
surrogate passed in, never the detector under evaluation.
"""

from __future__ import annotations

import enum
import io as _io
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image as PILImage
from scipy.ndimage import gaussian_filter

from .errors import CapabilityError, ConfigError, DimensionError
from .imgio import rng_for
from .spectral import SpectralProfile, radius_map

DEFAULT_EPS = 8.0 / 255.0
SDN_MAX_SCALE = 10.0


class PerturbKind(enum.Enum):
    BLUR = "blur"
    CROP = "crop"
    COMPRESSION = "compression"
    NOISE = "noise"
    MIX = "mix"
    FGSM = "fgsm"
    PGD = "pgd"
    SDN = "sdn"


COMMON_KINDS = (PerturbKind.BLUR, PerturbKind.CROP, PerturbKind.COMPRESSION, PerturbKind.NOISE, PerturbKind.MIX)

# Per-image parameter grids; scalar values are used as-is, lists are sampled
# uniformly under the seed.
DEFAULT_GRIDS = {
    PerturbKind.BLUR: {"sigma": [1.0, 2.0]},
    PerturbKind.CROP: {"fraction": [0.9, 0.8]},
    PerturbKind.COMPRESSION: {"quality": [90, 70, 50]},
    PerturbKind.NOISE: {"sigma": [0.01, 0.02]},
}


@dataclass
class PerturbationSpec:
    kind: PerturbKind
    params: dict = field(default_factory=dict)

    def resolved(self, rng: np.random.Generator) -> dict:
        """Sample concrete parameters from any grid-valued entries."""
        base = dict(DEFAULT_GRIDS.get(self.kind, {}))
        base.update(self.params)
        out = {}
        for key, value in base.items():
            if isinstance(value, (list, tuple)):
                out[key] = value[int(rng.integers(len(value)))]
            else:
                out[key] = value
        return out


def _validate(spec: PerturbationSpec, params: dict) -> None:
    if spec.kind is PerturbKind.CROP and not (0.0 < params["fraction"] <= 1.0):
        raise ConfigError(f"crop fraction must be in (0, 1], got {params['fraction']}")
    if spec.kind is PerturbKind.COMPRESSION and not (10 <= params["quality"] <= 100):
        raise ConfigError(f"jpeg quality must be in [10, 100], got {params['quality']}")
    if spec.kind in (PerturbKind.BLUR, PerturbKind.NOISE) and params["sigma"] < 0:
        raise ConfigError(f"sigma must be non-negative, got {params['sigma']}")


def _blur(image: torch.Tensor, sigma: float) -> torch.Tensor:
    if sigma <= 0:
        return image.clone()
    arr = image.detach().cpu().numpy()
    arr = gaussian_filter(arr, sigma=(0.0, sigma, sigma), mode="reflect")
    return torch.from_numpy(arr).to(image.dtype)


def _crop(image: torch.Tensor, fraction: float, rng: np.random.Generator) -> torch.Tensor:
    h, w = image.shape[-2], image.shape[-1]
    ch, cw = max(1, round(fraction * h)), max(1, round(fraction * w))
    top = int(rng.integers(h - ch + 1))
    left = int(rng.integers(w - cw + 1))
    patch = image[..., top : top + ch, left : left + cw]
    out = F.interpolate(patch.unsqueeze(0), size=(h, w), mode="bilinear", align_corners=False)
    return out.squeeze(0).clamp(0.0, 1.0)


def _compress(image: torch.Tensor, quality: int) -> torch.Tensor:
    arr = (image.clamp(0, 1).detach().cpu().numpy().transpose(1, 2, 0) * 255.0).round().astype(np.uint8)
    buf = _io.BytesIO()
    PILImage.fromarray(arr, mode="RGB").save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    with PILImage.open(buf) as im:
        decoded = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(decoded.transpose(2, 0, 1)).to(image.dtype)


def _noise(image: torch.Tensor, sigma: float, rng: np.random.Generator) -> torch.Tensor:
    if sigma <= 0:
        return image.clone()
    noise = torch.from_numpy(rng.normal(0.0, sigma, size=tuple(image.shape))).to(image.dtype)
    return (image + noise).clamp(0.0, 1.0)


def apply_common(image: torch.Tensor, spec: PerturbationSpec, seed: int) -> torch.Tensor:
    """Apply one of the common manipulations (or the blur-crop-compress-noise
    mix, composed in that fixed order) deterministically under the seed."""
    if spec.kind not in COMMON_KINDS:
        raise ConfigError(f"apply_common got non-common kind {spec.kind}")
    if image.ndim != 3 or image.shape[0] != 3:
        raise DimensionError(f"expected (3, H, W) image, got {tuple(image.shape)}")
    rng = rng_for(seed, "perturb", spec.kind.value)

    if spec.kind is PerturbKind.MIX:
        out = image
        for kind in (PerturbKind.BLUR, PerturbKind.CROP, PerturbKind.COMPRESSION, PerturbKind.NOISE):
            sub = PerturbationSpec(kind, {k: v for k, v in spec.params.items() if k in DEFAULT_GRIDS[kind]})
            out = apply_common(out, sub, seed)
        return out

    params = spec.resolved(rng)
    _validate(spec, params)
    if spec.kind is PerturbKind.BLUR:
        return _blur(image, params["sigma"])
    if spec.kind is PerturbKind.CROP:
        return _crop(image, params["fraction"], rng)
    if spec.kind is PerturbKind.COMPRESSION:
        return _compress(image, params["quality"])
    return _noise(image, params["sigma"], rng)


def _project_linf(x_adv: torch.Tensor, x0: torch.Tensor, eps: float) -> torch.Tensor:
    """Project onto the l-inf ball so the measured |out - x0| never exceeds
    eps even after float rounding (the bound must hold exactly per sample)."""
    out = x0 + torch.clamp(x_adv - x0, -eps, eps)
    for _ in range(4):
        over = (out - x0).abs() > eps
        if not bool(over.any()):
            return out
        out = torch.where(over, torch.nextafter(out, x0), out)
    raise AssertionError("l-inf projection did not converge")


def _surrogate_loss(surrogate, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    logits = surrogate(x)
    if logits.ndim > 1:
        logits = logits.squeeze(-1)
    return F.binary_cross_entropy_with_logits(logits, y.to(logits.dtype))


def pgd(
    image: torch.Tensor,
    label,
    surrogate,
    eps: float = DEFAULT_EPS,
    steps: int = 10,
    step_size: float | None = None,
) -> torch.Tensor:
    """Projected signed-gradient ascent on the surrogate's loss.

    Each step moves by step_size * sign(grad), then projects onto the l-inf
    ball of radius eps around the input and onto [0, 1]. With steps=1 and
    step_size=eps this reduces exactly to fgsm.
    """
    if not (0 < eps <= 1):
        raise ConfigError(f"eps must be in (0, 1], got {eps}")
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    if step_size is None:
        step_size = eps if steps == 1 else eps / 4

    single = image.ndim == 3
    x0 = image.detach().unsqueeze(0) if single else image.detach()
    y = torch.as_tensor(label).reshape(-1)
    if y.numel() != x0.shape[0]:
        raise DimensionError(f"{y.numel()} labels for {x0.shape[0]} images")

    was_training = getattr(surrogate, "training", False)
    if hasattr(surrogate, "eval"):
        surrogate.eval()
    x = x0.clone()
    try:
        for _ in range(steps):
            x = x.detach().requires_grad_(True)
            loss = _surrogate_loss(surrogate, x, y)
            if not loss.requires_grad:
                raise CapabilityError("surrogate exposes no input gradients")
            (grad,) = torch.autograd.grad(loss, x, allow_unused=True)
            if grad is None:
                raise CapabilityError("surrogate exposes no input gradients")
            x = x.detach() + step_size * torch.sign(grad)
            x = _project_linf(x, x0, eps).clamp(0.0, 1.0)
    finally:
        if was_training and hasattr(surrogate, "train"):
            surrogate.train()
    return x.squeeze(0) if single else x


def fgsm(image: torch.Tensor, label, surrogate, eps: float = DEFAULT_EPS) -> torch.Tensor:
    """Single signed-gradient step of size eps (zero gradient leaves the
    input unchanged)."""
    return pgd(image, label, surrogate, eps=eps, steps=1, step_size=eps)


@dataclass
class SdnStats:
    scale_capped_bins: int = 0
    clamped_pixels: int = 0

    @property
    def clamp_affected(self) -> bool:
        return self.clamped_pixels > 0


def sdn_detailed(
    fake_image: torch.Tensor,
    reference_profile: SpectralProfile,
    max_scale: float = SDN_MAX_SCALE,
) -> tuple[torch.Tensor, SdnStats]:
    """Rescale the image's spectral magnitudes per radial bin so its azimuthal
    power profile matches the real reference; phases are preserved.

    Bins beyond the reference grid are left unscaled; zero-power bins cap the
    scale at max_scale. Returns the attacked image and clamp diagnostics.
    """
    if fake_image.ndim != 3:
        raise DimensionError(f"expected (C, H, W) image, got {tuple(fake_image.shape)}")
    h, w = fake_image.shape[-2], fake_image.shape[-1]
    spec = torch.fft.fft2(fake_image.to(torch.float64), norm="ortho")

    rmap = np.fft.ifftshift(radius_map(h, w))  # unshifted layout to match spec
    power = (spec.real**2 + spec.imag**2).mean(dim=0).numpy()
    n_bins = int(rmap.max()) + 1
    own_power = np.bincount(rmap.ravel(), weights=power.ravel(), minlength=n_bins)
    own_power /= np.bincount(rmap.ravel(), minlength=n_bins)

    ref = np.asarray(reference_profile.power, dtype=np.float64)
    scale = np.ones(n_bins)
    covered = np.arange(n_bins) < ref.size
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.sqrt(ref[: min(ref.size, n_bins)] / own_power[: min(ref.size, n_bins)])
    raw = np.where(np.isnan(raw), np.inf, raw)
    stats = SdnStats(scale_capped_bins=int((raw > max_scale).sum()))
    scale[covered] = np.minimum(raw, max_scale)

    scale_map = torch.from_numpy(scale[rmap])
    attacked = torch.fft.ifft2(spec * scale_map, norm="ortho").real
    clamped = attacked.clamp(0.0, 1.0)
    stats.clamped_pixels = int(((attacked - clamped).abs() > 1e-9).sum())
    return clamped.to(fake_image.dtype), stats


def sdn(fake_image: torch.Tensor, reference_profile: SpectralProfile, max_scale: float = SDN_MAX_SCALE) -> torch.Tensor:
    return sdn_detailed(fake_image, reference_profile, max_scale)[0]
