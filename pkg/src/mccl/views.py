"""Incomplete views of an image: patch-masked, grayscale, and edge sketch.

Every view extractor is a pure function of (image, parameters, seed), so they
are safe to call from parallel data-loading workers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import torch
from skimage.feature import canny

from .errors import ConfigError, DimensionError
from .imgio import luma

# Patch grid is fixed: masking always tiles the image into 16x16 patches.
GRID = 16
DEFAULT_MASK_FILL = 0.5


class ViewKind(enum.Enum):
    MASKED = "masked"
    GRAY = "gray"
    EDGE = "edge"


ALL_VIEWS = (ViewKind.MASKED, ViewKind.GRAY, ViewKind.EDGE)


@dataclass(frozen=True)
class EdgeParams:
    """Canny parameters on [0, 1] luminance."""

    sigma: float = 1.0
    low_threshold: float = 0.1
    high_threshold: float = 0.2


@dataclass
class MaskLayout:
    """Boolean 16x16 patch grid; True marks a masked patch."""

    grid: np.ndarray
    patch_size: tuple[int, int]
    seed: int

    @property
    def n_masked(self) -> int:
        return int(self.grid.sum())


@dataclass
class View:
    kind: ViewKind
    data: torch.Tensor  # (C, H, W), values in [0, 1]
    source_shape: tuple[int, int]
    mask: torch.Tensor | None = None  # (1, H, W) indicator, masked views only


def make_mask_layout(height: int, width: int, ratio: float, seed: int) -> MaskLayout:
    """Sample a random non-overlapping patch mask covering `ratio` of the grid.

    The patch count is round(ratio * 256); the layout is a pure function of
    the seed. Raises DimensionError when the image does not tile into the
    16x16 grid (callers must resize first, never pad).
    """
    if height % GRID != 0 or width % GRID != 0:
        raise DimensionError(f"image dims ({height}, {width}) not divisible by {GRID}")
    if not (0.0 <= ratio <= 1.0):
        raise ValueError(f"mask ratio must be in [0, 1], got {ratio}")
    n_cells = GRID * GRID
    k = int(round(ratio * n_cells))
    rng = np.random.default_rng(seed)
    grid = np.zeros(n_cells, dtype=bool)
    if k:
        grid[rng.choice(n_cells, size=k, replace=False)] = True
    return MaskLayout(grid.reshape(GRID, GRID), (height // GRID, width // GRID), seed)


def mask_to_pixels(layout: MaskLayout, device=None) -> torch.Tensor:
    """Expand the patch grid to a (1, H, W) float indicator (1 = masked)."""
    ph, pw = layout.patch_size
    grid = torch.from_numpy(layout.grid.astype(np.float32))
    pixels = grid.repeat_interleave(ph, dim=0).repeat_interleave(pw, dim=1)
    return pixels.unsqueeze(0).to(device)


def extract_view(
    image: torch.Tensor,
    kind: ViewKind,
    layout: MaskLayout | None = None,
    edge_params: EdgeParams = EdgeParams(),
    fill: float = DEFAULT_MASK_FILL,
    replicate: bool = True,
) -> View:
    """Produce the incomplete view of `kind` from an image in [0, 1].

    Masked: flagged patches are replaced by the fill value (requires layout).
    Gray: BT.601 luminance. Edge: binary Canny map. Gray/Edge are replicated
    to 3 channels by default so all restorers share one input arity.
    """
    if image.ndim != 3:
        raise DimensionError(f"expected (C, H, W) image, got shape {tuple(image.shape)}")
    h, w = image.shape[-2], image.shape[-1]

    if kind is ViewKind.MASKED:
        if layout is None:
            raise ConfigError("masked view requires a MaskLayout")
        ph, pw = layout.patch_size
        if ph * GRID != h or pw * GRID != w:
            raise DimensionError(f"layout patch size {layout.patch_size} does not tile ({h}, {w})")
        mask = mask_to_pixels(layout, device=image.device).to(image.dtype)
        data = image * (1.0 - mask) + fill * mask
        return View(kind, data, (h, w), mask=mask)

    if kind is ViewKind.GRAY:
        data = luma(image)
    elif kind is ViewKind.EDGE:
        gray_np = luma(image)[0].detach().cpu().numpy().astype(np.float64)
        edges = canny(
            gray_np,
            sigma=edge_params.sigma,
            low_threshold=edge_params.low_threshold,
            high_threshold=edge_params.high_threshold,
        )
        data = torch.from_numpy(edges.astype(np.float32)).unsqueeze(0).to(image.dtype)
    else:
        raise ConfigError(f"unknown view kind {kind!r}")

    if replicate:
        data = data.expand(3, h, w).clone() if data.shape[0] == 1 else data
    return View(kind, data, (h, w))
