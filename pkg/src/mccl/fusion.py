"""Inter-view learning: self-adaptive loss-fusion weights on the probability
simplex (closed form) and inference-time probability averaging.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .classifier import Prediction
from .errors import ConfigError, DimensionError

LOSS_FLOOR = 1e-8


class FloorCounter:
    """Counts non-positive losses clamped before the closed-form solve."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


floor_diagnostics = FloorCounter()


def solve_beta(losses, tau: float) -> np.ndarray:
    """Closed-form minimizer of sum_v beta_v^tau * L_v over the simplex.

    beta_v = L_v^(1/(1-tau)) / sum_n L_n^(1/(1-tau)). Since 1/(1-tau) < 0
    for tau > 1, smaller losses receive larger weights. Scale-invariant in
    the losses; non-positive losses are clamped to a small floor and counted.
    """
    if tau <= 1.0:
        raise ConfigError(f"tau must be > 1, got {tau}")
    arr = np.asarray(losses, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError("losses must be a non-empty 1D vector")
    n_floored = int((arr <= 0).sum())
    if n_floored:
        floor_diagnostics.count += n_floored
        arr = np.maximum(arr, LOSS_FLOOR)
    # computed in log space; the common shift cancels in the normalization
    exponent = 1.0 / (1.0 - tau)
    logw = exponent * np.log(arr)
    logw -= logw.max()
    w = np.exp(logw)
    return w / w.sum()


def fused_loss(losses: Sequence, beta, tau: float = 4.0) -> torch.Tensor:
    """Weighted objective sum_v beta_v^tau * L_v with beta held fixed.

    beta enters as a constant, so gradients flow only into the losses
    (and from there into network parameters): d(fused)/dL_v = beta_v^tau.
    """
    beta = np.asarray(beta, dtype=np.float64)
    if len(losses) != beta.size:
        raise DimensionError(f"{len(losses)} losses vs {beta.size} weights")
    total = None
    for weight, loss in zip(beta**tau, losses):
        term = float(weight) * loss
        total = term if total is None else total + term
    return total


def fuse_predictions(preds: Sequence[Prediction]) -> tuple[float, str]:
    """Average the per-view fake probabilities; fake iff the mean exceeds 0.5.

    The boundary p_fake == 0.5 maps to real (strict inequality). Order of
    the predictions does not matter.
    """
    if not preds:
        raise ConfigError("need at least one prediction to fuse")
    views = [p.view for p in preds]
    if len(set(views)) != len(views):
        raise ConfigError(f"duplicate view predictions: {views}")
    p_fake = float(np.mean([p.p_fake for p in preds]))
    return p_fake, ("fake" if p_fake > 0.5 else "real")


@dataclass
class FusionState:
    """Simplex weights beta with their exponent tau and the loss snapshot
    they were solved from. One writer (the epoch-boundary update); training
    workers read `weights` as constants for the duration of an epoch."""

    beta: np.ndarray
    tau: float = 4.0
    per_view_losses: np.ndarray = field(default_factory=lambda: np.array([]))

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.tau <= 1.0:
            raise ConfigError(f"tau must be > 1, got {self.tau}")
        if abs(self.beta.sum() - 1.0) > 1e-9 or (self.beta < 0).any():
            raise ConfigError(f"beta must lie on the simplex, got {self.beta}")

    @classmethod
    def uniform(cls, n_views: int, tau: float = 4.0) -> "FusionState":
        return cls(np.full(n_views, 1.0 / n_views), tau=tau)

    @property
    def weights(self) -> np.ndarray:
        """Effective loss weights beta^tau used in the fused objective."""
        return self.beta**self.tau

    def update(self, losses) -> np.ndarray:
        """Re-solve beta from fresh per-view mean losses; returns the new beta."""
        losses = np.asarray(losses, dtype=np.float64)
        if self.beta.size and losses.size != self.beta.size:
            raise DimensionError(f"expected {self.beta.size} losses, got {losses.size}")
        self.per_view_losses = losses
        self.beta = solve_beta(losses, self.tau)
        return self.beta
