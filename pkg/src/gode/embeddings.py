"""User/item embedding container shared by training and convolution."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, ZeroNormRow


@dataclass
class EmbeddingSet:
    U: np.ndarray
    V: np.ndarray
    flavor: str = "initial"

    def __post_init__(self):
        if self.U.ndim != 2 or self.V.ndim != 2 or self.U.shape[1] != self.V.shape[1]:
            raise DimensionMismatch(f"incompatible embedding shapes {self.U.shape} / {self.V.shape}")

    @property
    def dim(self) -> int:
        return self.U.shape[1]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.U.shape[0], self.V.shape[0], self.U.shape[1]

    def copy(self) -> "EmbeddingSet":
        return EmbeddingSet(self.U.copy(), self.V.copy(), self.flavor)

    def astype(self, dtype) -> "EmbeddingSet":
        return EmbeddingSet(self.U.astype(dtype), self.V.astype(dtype), self.flavor)


def row_normalize(X: np.ndarray, side: str = "embedding") -> tuple[np.ndarray, np.ndarray]:
    """Return ``(X / ||X||, ||X||)`` row-wise; zero rows are an error."""
    norms = np.sqrt(np.einsum("ij,ij->i", X, X))
    if (norms == 0).any():
        raise ZeroNormRow(side, int(np.flatnonzero(norms == 0)[0]))
    return X / norms[:, None], norms
