"""Uniform 2D grids and complex wave fields living on them.

Arrays are stored with shape ``(ny, nx)``: the first index is the row
(``x2``) and the second the column (``x1``), so ``x1`` runs fastest in
memory.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


class DomainError(ValueError):
    """Raised when a point or path leaves the domain of a sampled quantity."""


@dataclass(frozen=True)
class Grid2D:
    """Uniform node grid ``x = origin + (i*h, j*h)``.

    Parameters
    ----------
    origin : tuple of float
        Coordinates of node ``(0, 0)``.
    h : float
        Node spacing, identical in both directions.
    nx, ny : int
        Number of nodes along ``x1`` and ``x2``.
    """

    origin: tuple[float, float]
    h: float
    nx: int
    ny: int

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("grid spacing must be positive")
        if self.nx < 8 or self.ny < 8:
            raise ValueError("grid needs at least 8 nodes per direction")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))

    @classmethod
    def square(cls, half_width: float, n: int) -> "Grid2D":
        """Grid of ``n x n`` nodes covering ``[-half_width, half_width]^2``."""
        h = 2.0 * half_width / (n - 1)
        return cls((-half_width, -half_width), h, n, n)

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def size(self):
        return self.nx * self.ny

    @property
    def xs(self):
        return self.origin[0] + self.h * np.arange(self.nx)

    @property
    def ys(self):
        return self.origin[1] + self.h * np.arange(self.ny)

    @property
    def extent(self):
        """``(x_min, x_max, y_min, y_max)`` of the node set."""
        x0, y0 = self.origin
        return (x0, x0 + self.h * (self.nx - 1), y0, y0 + self.h * (self.ny - 1))

    def mesh(self):
        """Return ``(X, Y)`` node coordinates, each of shape ``(ny, nx)``."""
        return np.meshgrid(self.xs, self.ys)

    def contains(self, x, y, pad: float = 0.0):
        x_min, x_max, y_min, y_max = self.extent
        x = np.asarray(x)
        y = np.asarray(y)
        return (x >= x_min - pad) & (x <= x_max + pad) & (y >= y_min - pad) & (y <= y_max + pad)

    def nearest_index(self, point):
        """Indices ``(j, i)`` of the node nearest to ``point``."""
        i = int(round((point[0] - self.origin[0]) / self.h))
        j = int(round((point[1] - self.origin[1]) / self.h))
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise DomainError(f"point {tuple(point)} lies outside the grid")
        return j, i

    def node(self, j: int, i: int):
        return np.array([self.origin[0] + i * self.h, self.origin[1] + j * self.h])

    def to_dict(self):
        return {"origin": list(self.origin), "h": self.h, "nx": self.nx, "ny": self.ny}


@dataclass
class WaveState:
    """Complex wave function sampled on a grid.

    Attributes
    ----------
    grid : Grid2D
    values : ndarray of complex, shape ``(ny, nx)``
    time : float
    mask : ndarray of bool or None
        True on obstacle nodes, where the values are forced to zero.
    """

    grid: Grid2D
    values: np.ndarray
    time: float = 0.0
    mask: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values have shape {self.values.shape}, grid wants {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("wave values must be finite")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.grid.shape:
                raise ValueError("mask shape does not match grid")
            self.values = np.where(self.mask, 0.0, self.values)

    def norm(self) -> float:
        """Discrete L2 norm ``sqrt(sum |u|^2 h^2)``."""
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2)) * self.grid.h)

    def density(self):
        return np.abs(self.values) ** 2

    def copy(self, **changes) -> "WaveState":
        values = changes.pop("values", self.values.copy())
        return replace(self, values=values, **changes)
