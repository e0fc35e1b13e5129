"""Multi-view completion classification learning for detecting generated images.

Real images train a set of view-to-image restorers (masked, grayscale, edge);
per-view classifiers then read completion-derived features through a feature
pyramid and low-pass residual-guided attention, and their losses are fused
with self-adaptive simplex weights. The package also ships the perturbation
robustness harness and the spectral analysis tooling used to evaluate it.
"""

__version__ = "0.1.0"

from .classifier import Prediction, SmallCNN, ce_loss, classify
from .data import LABEL_FAKE, LABEL_REAL, Corpus, CorpusItem
from .fusion import FusionState, fuse_predictions, fused_loss, solve_beta
from .restorer import CompletionOutput, Restorer, RestorerConfig, complete, restoration_loss
from .spectral import (
    ButterworthFilter,
    SpectralProfile,
    Spectrum,
    azimuthal_profile,
    butterworth_lowpass,
    fft2,
    frequency_loss,
    ifft2,
    profile_gap,
)
from .views import EdgeParams, MaskLayout, View, ViewKind, extract_view, make_mask_layout

__all__ = [
    "ButterworthFilter",
    "CompletionOutput",
    "Corpus",
    "CorpusItem",
    "EdgeParams",
    "FusionState",
    "LABEL_FAKE",
    "LABEL_REAL",
    "MaskLayout",
    "Prediction",
    "Restorer",
    "RestorerConfig",
    "SmallCNN",
    "SpectralProfile",
    "Spectrum",
    "View",
    "ViewKind",
    "azimuthal_profile",
    "butterworth_lowpass",
    "ce_loss",
    "classify",
    "complete",
    "extract_view",
    "fft2",
    "frequency_loss",
    "fuse_predictions",
    "fused_loss",
    "ifft2",
    "make_mask_layout",
    "profile_gap",
    "restoration_loss",
    "solve_beta",
]
