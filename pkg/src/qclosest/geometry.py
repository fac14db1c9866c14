"""Euclidean space or flat 2D torus with minimal-image distances."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = ["DomainGeometry"]


@njit(cache=True)
def _dist(x, i, y, j, period):
    acc = 0.0
    for k in range(x.shape[1]):
        d = x[i, k] - y[j, k]
        if period > 0.0:
            d -= period * math.floor(d / period + 0.5)
        acc += d * d
    return math.sqrt(acc)


@njit(cache=True)
def _pairwise(x, period):
    n = x.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = _dist(x, i, x, j, period)
            out[i, j] = d
            out[j, i] = d
    return out


@dataclass(frozen=True)
class DomainGeometry:
    """Where particles live.

    ``kind`` is ``"euclidean"`` (any dimension 1-3) or ``"torus"`` (2D only,
    square fundamental domain ``[0, period)^2``).
    """

    kind: str = "euclidean"
    dim: int = 2
    period: float | None = None

    def __post_init__(self):
        if self.kind not in ("euclidean", "torus"):
            raise ValueError(f"unknown geometry kind {self.kind!r}")
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.kind == "torus":
            if self.dim != 2:
                raise ValueError("torus geometry requires dim = 2")
            if self.period is None or not self.period > 0:
                raise ValueError("torus geometry requires a positive period")
        elif self.period is not None:
            raise ValueError("period is only meaningful for the torus")

    @property
    def is_torus(self) -> bool:
        return self.kind == "torus"

    @property
    def period_value(self) -> float:
        """Period for the compiled routines; 0.0 encodes Euclidean space."""
        return float(self.period) if self.is_torus else 0.0

    @property
    def radius_cap(self) -> float:
        return 0.5 * self.period if self.is_torus else math.inf

    def check_kernel(self, sigma: float):
        if self.is_torus and not self.period > 4.0 * sigma:
            raise ValueError(f"torus period {self.period} must exceed 4*sigma = {4.0 * sigma}")

    def displacement(self, a, b):
        """a - b, reduced to the minimal image on the torus."""
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        if self.is_torus:
            d = d - self.period * np.floor(d / self.period + 0.5)
        return d

    def distance(self, a, b):
        return np.linalg.norm(self.displacement(a, b), axis=-1)

    def pairwise_distances(self, x) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=float)
        return _pairwise(x, self.period_value)

    def wrap(self, x):
        if not self.is_torus:
            return x
        return np.mod(x, self.period)

    def diameter(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape[0] < 2:
            return 0.0
        return float(self.pairwise_distances(x).max())
