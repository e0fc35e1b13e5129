"""Image I/O and tensor conventions.

Images travel through the pipeline as float torch tensors of shape (C, H, W)
with values in [0, 1]; batches are (B, C, H, W). Numpy arrays appear only at
file boundaries and when calling into scipy/scikit-image.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage

from .errors import DataError, DimensionError

# ITU-R BT.601 luma weights
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def to_numpy_hwc(image: torch.Tensor) -> np.ndarray:
    """(C, H, W) tensor -> (H, W, C) float64 numpy array."""
    if image.ndim != 3:
        raise DimensionError(f"expected (C, H, W), got shape {tuple(image.shape)}")
    return image.detach().cpu().numpy().transpose(1, 2, 0).astype(np.float64)


def from_numpy_hwc(array: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(H, W, C) or (H, W) numpy array -> (C, H, W) tensor."""
    if array.ndim == 2:
        array = array[:, :, None]
    if array.ndim != 3:
        raise DimensionError(f"expected (H, W, C), got shape {array.shape}")
    return torch.from_numpy(np.ascontiguousarray(array.transpose(2, 0, 1))).to(dtype)


def luma(image: torch.Tensor) -> torch.Tensor:
    """Single-channel BT.601 luminance, shape (1, H, W). Idempotent for gray inputs."""
    if image.shape[0] == 1:
        return image
    if image.shape[0] != 3:
        raise DimensionError(f"expected 1 or 3 channels, got {image.shape[0]}")
    w = torch.tensor(LUMA_WEIGHTS, dtype=image.dtype, device=image.device).view(3, 1, 1)
    return (image * w).sum(dim=0, keepdim=True)


def load_image(path: str | Path, resolution: int | None = None) -> torch.Tensor:
    """Decode a PNG/JPEG file to a (3, H, W) tensor in [0, 1].

    If `resolution` is given and differs from the file's size, the image is
    center-cropped to square and resized (the only place pixel data is altered
    during ingestion).
    """
    try:
        with PILImage.open(path) as im:
            im = im.convert("RGB")
            if resolution is not None and im.size != (resolution, resolution):
                side = min(im.size)
                left = (im.width - side) // 2
                top = (im.height - side) // 2
                im = im.crop((left, top, left + side, top + side))
                im = im.resize((resolution, resolution), PILImage.BILINEAR)
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except OSError as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    return from_numpy_hwc(arr)


def save_png(image: torch.Tensor, path: str | Path) -> None:
    """Write a (C, H, W) tensor in [0, 1] as an 8-bit PNG (lossless)."""
    arr = to_numpy_hwc(image.clamp(0.0, 1.0))
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    data = np.round(arr * 255.0).astype(np.uint8)
    PILImage.fromarray(data, mode="RGB").save(path, format="PNG")


def image_digest(image: torch.Tensor) -> int:
    """Stable 64-bit content digest of an image tensor (used to key per-image RNG)."""
    arr = np.ascontiguousarray(image.detach().cpu().to(torch.float32).numpy())
    h = hashlib.sha256(arr.tobytes()).digest()
    return int.from_bytes(h[:8], "big")


def rng_for(*parts) -> np.random.Generator:
    """Deterministic RNG derived from a tuple of ints/strings.

    All stochastic choices in the pipeline key their generator off
    (global seed, context tags...) through this helper so that runs are
    reproducible and resumable at epoch granularity.
    """
    entropy = []
    for p in parts:
        if isinstance(p, str):
            entropy.append(int.from_bytes(hashlib.sha256(p.encode()).digest()[:8], "big"))
        else:
            entropy.append(int(p) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))
