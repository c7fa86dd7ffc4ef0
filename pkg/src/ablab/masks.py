"""Obstacle masks: static shapes and time-dependent generators.

A mask generator is any callable ``gen(grid, t) -> bool array`` of shape
``(ny, nx)``; True marks obstacle nodes where the wave is held at zero.
Generators with ``static = True`` are evaluated once per grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Grid2D
from .smooth import wrap_angle


class Shape:
    static = True

    def inside(self, X, Y, t=0.0):
        raise NotImplementedError

    def __call__(self, grid: Grid2D, t: float = 0.0):
        X, Y = grid.mesh()
        return np.asarray(self.inside(X, Y, t), dtype=bool)

    def __or__(self, other):
        return Union((self, other))


@dataclass(frozen=True)
class NoObstacle(Shape):
    def inside(self, X, Y, t=0.0):
        return np.zeros(np.shape(X), dtype=bool)


@dataclass(frozen=True)
class Disc(Shape):
    center: tuple
    radius: float

    def inside(self, X, Y, t=0.0):
        return (X - self.center[0]) ** 2 + (Y - self.center[1]) ** 2 <= self.radius ** 2


@dataclass(frozen=True)
class ConvexPolygon(Shape):
    """Convex polygon with counterclockwise vertices (closed region)."""

    vertices: tuple

    def inside(self, X, Y, t=0.0):
        v = np.asarray(self.vertices, dtype=float)
        out = np.ones(np.shape(X), dtype=bool)
        for a, b in zip(v, np.roll(v, -1, axis=0)):
            cross = (b[0] - a[0]) * (Y - a[1]) - (b[1] - a[1]) * (X - a[0])
            out &= cross >= 0
        return out


@dataclass(frozen=True)
class Annulus(Shape):
    center: tuple
    r_in: float
    r_out: float

    def inside(self, X, Y, t=0.0):
        r2 = (X - self.center[0]) ** 2 + (Y - self.center[1]) ** 2
        return (r2 >= self.r_in ** 2) & (r2 <= self.r_out ** 2)


@dataclass(frozen=True)
class Union(Shape):
    parts: tuple

    @property
    def static(self):
        return all(getattr(p, "static", True) for p in self.parts)

    def inside(self, X, Y, t=0.0):
        out = np.zeros(np.shape(X), dtype=bool)
        for p in self.parts:
            out |= np.asarray(p.inside(X, Y, t), dtype=bool)
        return out


@dataclass(frozen=True)
class MovingDisc(Shape):
    """Disc whose center moves with constant velocity."""

    center: tuple
    radius: float
    velocity: tuple = (0.0, 0.0)
    static = False

    def center_at(self, t):
        return (self.center[0] + self.velocity[0] * t, self.center[1] + self.velocity[1] * t)

    def inside(self, X, Y, t=0.0):
        cx, cy = self.center_at(t)
        return (X - cx) ** 2 + (Y - cy) ** 2 <= self.radius ** 2


@dataclass(frozen=True)
class MergingDiscs(Shape):
    """Two discs approaching each other, overlapping (merged), then separating.

    The centers sit at ``center +- d(t) * axis`` with
    ``d(t) = d_min + (d_max - d_min) * |t - t_mid| / t_mid`` for ``t`` in
    ``[0, 2 t_mid]``; they merge whenever ``d(t) < radius``.
    """

    center: tuple
    radius: float
    d_max: float
    d_min: float
    t_mid: float
    axis: tuple = (1.0, 0.0)
    static = False

    def separation(self, t):
        s = min(abs(t - self.t_mid) / self.t_mid, 1.0)
        return self.d_min + (self.d_max - self.d_min) * s

    def inside(self, X, Y, t=0.0):
        d = self.separation(t)
        ax = np.asarray(self.axis, float) / np.linalg.norm(self.axis)
        out = np.zeros(np.shape(X), dtype=bool)
        for sgn in (1.0, -1.0):
            cx = self.center[0] + sgn * d * ax[0]
            cy = self.center[1] + sgn * d * ax[1]
            out |= (X - cx) ** 2 + (Y - cy) ** 2 <= self.radius ** 2
        return out


@dataclass(frozen=True)
class GatedAnnulus(Shape):
    """Annular wall with a gate that closes and later reopens.

    The wall ``r_in <= |x - center| <= r_out`` has an opening of angular
    half-width ``gap(t)`` around ``gate_angle``. The opening shrinks
    linearly from ``gap_half_width`` to zero on ``[0, t_close]``, stays shut
    until ``t_open``, and widens linearly back on ``[t_open, t_open_end]``.
    While shut the inner disc is a separate connected component.
    """

    center: tuple
    r_in: float
    r_out: float
    gap_half_width: float
    t_close: float
    t_open: float
    t_open_end: float
    gate_angle: float = math.pi
    static = False

    def __post_init__(self):
        if not (0 < self.t_close < self.t_open < self.t_open_end):
            raise ValueError("gate times must satisfy 0 < t_close < t_open < t_open_end")
        if not 0 < self.r_in < self.r_out:
            raise ValueError("annulus radii must satisfy 0 < r_in < r_out")

    def gap(self, t):
        g = self.gap_half_width
        if t <= 0:
            return g
        if t < self.t_close:
            return g * (1.0 - t / self.t_close)
        if t <= self.t_open:
            return 0.0
        if t < self.t_open_end:
            return g * (t - self.t_open) / (self.t_open_end - self.t_open)
        return g

    def is_closed(self, t):
        return self.gap(t) == 0.0

    def inside(self, X, Y, t=0.0):
        dx, dy = X - self.center[0], Y - self.center[1]
        r2 = dx * dx + dy * dy
        wall = (r2 >= self.r_in ** 2) & (r2 <= self.r_out ** 2)
        g = self.gap(t)
        if g <= 0.0:
            return wall
        ang = np.abs(wrap_angle(np.arctan2(dy, dx) - self.gate_angle))
        return wall & (ang >= g)

    def inner_region(self, X, Y):
        dx, dy = X - self.center[0], Y - self.center[1]
        return dx * dx + dy * dy < self.r_in ** 2


def as_generator(mask):
    """Normalise ``None``, a bool array, a shape or a callable into a generator."""
    if mask is None:
        return NoObstacle()
    if isinstance(mask, np.ndarray):
        fixed = mask.astype(bool)

        class _Fixed(Shape):
            def __call__(self, grid, t=0.0):
                if fixed.shape != grid.shape:
                    raise ValueError("mask shape does not match grid")
                return fixed

        return _Fixed()
    return mask
