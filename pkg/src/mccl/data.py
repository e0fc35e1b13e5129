"""Shared corpus structures and the label convention (0 = real, 1 = fake)."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .errors import DataError

LABEL_REAL = 0
LABEL_FAKE = 1
LABEL_NAMES = {"real": LABEL_REAL, "fake": LABEL_FAKE}


@dataclass
class CorpusItem:
    image: torch.Tensor  # (3, H, W) in [0, 1]
    label: int
    source_tag: str = ""
    path: str = ""


@dataclass
class Corpus:
    items: list[CorpusItem] = field(default_factory=list)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, idx):
        return self.items[idx]

    def reals(self) -> "Corpus":
        return Corpus([it for it in self.items if it.label == LABEL_REAL])

    def fakes(self) -> "Corpus":
        return Corpus([it for it in self.items if it.label == LABEL_FAKE])

    def validate_labels(self) -> None:
        for i, it in enumerate(self.items):
            if it.label not in (LABEL_REAL, LABEL_FAKE):
                raise DataError(f"item {i} ({it.path}): invalid label {it.label}")
