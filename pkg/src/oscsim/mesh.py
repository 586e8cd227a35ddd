"""1D mesh over [0, L] with optional geometric grading toward the contacts."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Mesh1D:
    """Strictly increasing node coordinates with x[0]=0 and x[-1]=L."""

    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1 or x.size < 3:
            raise ValueError("mesh needs at least 3 nodes")
        if np.any(np.diff(x) <= 0.0):
            raise ValueError("node coordinates must be strictly increasing")
        object.__setattr__(self, "x", x)

    @property
    def n_nodes(self) -> int:
        return self.x.size

    @property
    def length(self) -> float:
        return float(self.x[-1] - self.x[0])

    @property
    def h(self) -> np.ndarray:
        """Edge lengths, size n_nodes - 1."""
        return np.diff(self.x)

    @property
    def volumes(self) -> np.ndarray:
        """Control volume sizes (half-cells at the contacts)."""
        h = self.h
        w = np.empty(self.n_nodes)
        w[0] = 0.5 * h[0]
        w[-1] = 0.5 * h[-1]
        w[1:-1] = 0.5 * (h[:-1] + h[1:])
        return w

    @property
    def edge_mid(self) -> np.ndarray:
        return 0.5 * (self.x[:-1] + self.x[1:])

    @classmethod
    def uniform(cls, length: float, n_nodes: int) -> "Mesh1D":
        return cls(np.linspace(0.0, length, n_nodes))

    @classmethod
    def graded(cls, length: float, n_nodes: int, ratio: float) -> "Mesh1D":
        """Symmetric mesh whose edges grow geometrically from both contacts.

        ratio = 1 reproduces the uniform mesh. The grading is mirror
        symmetric so that x -> L - x maps nodes onto nodes.
        """
        if ratio < 1.0:
            raise ValueError("grading ratio must be >= 1")
        if ratio == 1.0:
            return cls.uniform(length, n_nodes)
        n_edges = n_nodes - 1
        half = n_edges // 2
        steps = ratio ** np.arange(half)
        if n_edges % 2 == 0:
            edges = np.concatenate([steps, steps[::-1]])
        else:
            edges = np.concatenate([steps, [ratio ** half], steps[::-1]])
        edges *= length / edges.sum()
        x = np.concatenate([[0.0], np.cumsum(edges)])
        x[-1] = length
        return cls(x)
