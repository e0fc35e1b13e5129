"""Frequency-domain machinery: 2D FFT, frequency loss, Butterworth low-pass
filtering, and azimuthally integrated radial power profiles.

All transforms are unitary (norm="ortho") so that Parseval holds with
constant 1: the frequency loss of a pair equals its pixel-domain squared
L2 distance. Spatial dimensions are always the trailing two tensor dims,
so every operation works on (H, W), (C, H, W) and (B, C, H, W) alike.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .errors import DimensionError

DEFAULT_CUTOFF = 0.1


@dataclass
class Spectrum:
    """Per-channel 2D Fourier transform of an image.

    data: complex tensor, same leading dims as the source image.
    shifted: True when the DC bin sits at the spatial center.
    """

    data: torch.Tensor
    shifted: bool = False

    def shift(self) -> "Spectrum":
        if self.shifted:
            return self
        return Spectrum(torch.fft.fftshift(self.data, dim=(-2, -1)), shifted=True)

    def unshift(self) -> "Spectrum":
        if not self.shifted:
            return self
        return Spectrum(torch.fft.ifftshift(self.data, dim=(-2, -1)), shifted=False)


def fft2(image: torch.Tensor) -> Spectrum:
    """Unitary per-channel 2D FFT. Rejects non-finite input."""
    if not torch.isfinite(image).all():
        raise ValueError("fft2: input contains non-finite values")
    return Spectrum(torch.fft.fft2(image, norm="ortho"), shifted=False)


def ifft2(spectrum: Spectrum) -> torch.Tensor:
    """Inverse of fft2; returns the real part."""
    data = spectrum.unshift().data
    return torch.fft.ifft2(data, norm="ortho").real


def frequency_loss(x: torch.Tensor, x_restored: torch.Tensor) -> torch.Tensor:
    """Squared L2 distance between the Fourier spectra of two images.

    Summed over all spatial positions and channels; mean-reduced over the
    batch dim when inputs are 4D. Differentiable in both arguments.
    """
    if x.shape != x_restored.shape:
        raise DimensionError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_restored.shape)}")
    diff = torch.fft.fft2(x, norm="ortho") - torch.fft.fft2(x_restored, norm="ortho")
    sq = diff.real**2 + diff.imag**2
    if x.ndim == 4:
        return sq.sum(dim=(1, 2, 3)).mean()
    return sq.sum()


@dataclass(frozen=True)
class ButterworthFilter:
    """First-order low-pass Butterworth filter in normalized frequency.

    cutoff_d0 is the radial frequency (cycles/sample, Nyquist = 0.5) at
    which the gain is 0.5 for order 1. Gain is 1 at DC and decreases
    monotonically with radius.
    """

    cutoff_d0: float = DEFAULT_CUTOFF
    order: int = 1

    def __post_init__(self):
        if not (0.0 < self.cutoff_d0 <= 0.5):
            raise ValueError(f"cutoff_d0 must be in (0, 0.5], got {self.cutoff_d0}")
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")

    def gain(self, d):
        """Gain at normalized radial distance d (scalar or array)."""
        return 1.0 / (1.0 + (d / self.cutoff_d0) ** (2 * self.order))

    def gain_grid(self, height: int, width: int, device=None, dtype=torch.float64) -> torch.Tensor:
        """(H, W) gain grid in unshifted FFT layout."""
        fy = torch.fft.fftfreq(height, device=device, dtype=dtype)
        fx = torch.fft.fftfreq(width, device=device, dtype=dtype)
        d = torch.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
        return 1.0 / (1.0 + (d / self.cutoff_d0) ** (2 * self.order))


def butterworth_lowpass(image: torch.Tensor, filt: ButterworthFilter) -> torch.Tensor:
    """Filter an image through the low-pass gain in the Fourier domain.

    Multiplies the spectrum by gain(d), inverse-transforms and takes the
    real part. Differentiable; shape-preserving.
    """
    h, w = image.shape[-2], image.shape[-1]
    real_dtype = image.dtype if image.dtype.is_floating_point else torch.float64
    gain = filt.gain_grid(h, w, device=image.device, dtype=real_dtype)
    spec = torch.fft.fft2(image, norm="ortho") * gain
    return torch.fft.ifft2(spec, norm="ortho").real


@dataclass
class SpectralProfile:
    """1D radial power profile from azimuthal integration of a spectrum."""

    radii: np.ndarray
    power: np.ndarray
    view_tag: str = ""
    corpus_tag: str = ""

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=np.int64)
        self.power = np.asarray(self.power, dtype=np.float64)
        if self.radii.shape != self.power.shape:
            raise DimensionError("radii and power must have equal length")


def radius_map(height: int, width: int) -> np.ndarray:
    """Integer map of rounded distances to the DC-centered origin, (H, W)."""
    cy, cx = height // 2, width // 2
    yy, xx = np.indices((height, width))
    return np.rint(np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)).astype(np.int64)


def azimuthal_profile(source: Spectrum | torch.Tensor, view_tag: str = "", corpus_tag: str = "") -> SpectralProfile:
    """Mean squared spectral magnitude per integer radial bin.

    Accepts a Spectrum (shifted internally if needed) or an image tensor,
    which is transformed first. Bins run from 0 (DC) to floor(min(H, W)/2);
    magnitudes are pooled over channels.
    """
    if isinstance(source, torch.Tensor):
        source = fft2(source)
    data = source.shift().data
    h, w = data.shape[-2], data.shape[-1]
    power = (data.real**2 + data.imag**2).detach().cpu().numpy().astype(np.float64)
    power = power.reshape(-1, h, w)

    rmap = radius_map(h, w)
    rmax = min(h, w) // 2
    keep = rmap <= rmax
    flat_r = rmap[keep]
    counts = np.bincount(flat_r, minlength=rmax + 1)
    total = np.zeros(rmax + 1)
    for chan in power:
        total += np.bincount(flat_r, weights=chan[keep], minlength=rmax + 1)
    mean_power = total / (counts * power.shape[0])
    return SpectralProfile(np.arange(rmax + 1), mean_power, view_tag=view_tag, corpus_tag=corpus_tag)


# Floor below which power values are clamped when moving to log scale.
LOG_POWER_EPS = 1e-12


def mean_log_power(profiles: Sequence[SpectralProfile]) -> np.ndarray:
    """Per-bin mean of log power over a set of profiles (all on one radii grid)."""
    if not profiles:
        raise DimensionError("empty profile set")
    base = profiles[0].radii
    for p in profiles[1:]:
        if not np.array_equal(p.radii, base):
            raise DimensionError("profiles have mismatched radii grids")
    stack = np.stack([np.log(np.maximum(p.power, LOG_POWER_EPS)) for p in profiles])
    return stack.mean(axis=0)


def profile_gap(real_profiles: Sequence[SpectralProfile], fake_profiles: Sequence[SpectralProfile]) -> float:
    """RMS distance between the mean log-power curves of two profile sets.

    Non-negative, symmetric, zero iff the mean curves coincide.
    """
    curve_a = mean_log_power(real_profiles)
    curve_b = mean_log_power(fake_profiles)
    if curve_a.shape != curve_b.shape:
        raise DimensionError("profile sets live on different radii grids")
    return float(np.sqrt(np.mean((curve_a - curve_b) ** 2)))
