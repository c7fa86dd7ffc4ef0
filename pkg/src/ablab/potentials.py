"""Factories for common vector and scalar potentials.

Every analytic vector potential here carries an exact straight-segment
integral, which the lattice Hamiltonian uses for its link phases.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .fields import Constants, ScalarPotential, VectorPotential
from .grid import DomainError, Grid2D
from .smooth import smooth_step, smooth_step_derivative, wrap_angle

__all__ = [
    "zero_potential", "ab_potential", "wedge_ab_potential", "uniform_field_potential",
    "constant_potential", "gradient_potential", "grid_vector_potential",
    "zero_scalar", "constant_scalar", "pulse_scalar", "grid_scalar",
]


def zero_potential() -> VectorPotential:
    def seg(ax, ay, bx, by, t):
        return np.zeros(np.broadcast(np.asarray(ax), np.asarray(bx)).shape)

    return VectorPotential(segment_integral=seg, label="zero")


def ab_potential(alpha0: float, center=(0.0, 0.0), constants: Constants | None = None) -> VectorPotential:
    """Point-flux potential ``(alpha0 / 2 pi) (-y, x) / |x|^2`` about ``center``.

    The amplitude is scaled by ``hbar c / e`` so that the loop flux of any
    counterclockwise loop around ``center`` equals ``alpha0``.
    """
    c = constants or Constants()
    k = alpha0 / (2.0 * math.pi) / c.flux_scale
    cx, cy = float(center[0]), float(center[1])

    def func(x, y, t):
        dx, dy = x - cx, y - cy
        r2 = dx * dx + dy * dy
        return -k * dy / r2, k * dx / r2

    def seg(ax, ay, bx, by, t):
        ta = np.arctan2(np.asarray(ay) - cy, np.asarray(ax) - cx)
        tb = np.arctan2(np.asarray(by) - cy, np.asarray(bx) - cx)
        return k * np.asarray(wrap_angle(tb - ta))

    return VectorPotential(func=func, singular_points=((cx, cy),), segment_integral=seg,
                           label=f"ab({alpha0:g})")


def wedge_ab_potential(alpha0: float, center=(0.0, 0.0), direction: float = math.pi,
                       width: float = math.pi / 3, constants: Constants | None = None) -> VectorPotential:
    """Curl-free point-flux potential supported in an angular wedge.

    ``A = alpha0 (hbar c / e) grad S``, where ``S`` is a smooth step of the
    polar angle about ``center`` rising across ``|angle - direction| < width/2``.
    ``A`` vanishes outside the wedge, carries loop flux ``alpha0`` about the
    center and is gauge equivalent to :func:`ab_potential` on any domain that
    excludes the center.
    """
    if not 0 < width < 2 * math.pi:
        raise ValueError("wedge width must lie in (0, 2 pi)")
    c = constants or Constants()
    k = alpha0 / c.flux_scale
    cx, cy = float(center[0]), float(center[1])

    def rel(x, y):
        return wrap_angle(np.arctan2(np.asarray(y) - cy, np.asarray(x) - cx) - direction)

    def step(phi):
        return smooth_step(np.asarray(phi) / width + 0.5)

    def func(x, y, t):
        dx, dy = x - cx, y - cy
        r2 = dx * dx + dy * dy
        w = k * smooth_step_derivative(np.asarray(rel(x, y)) / width + 0.5) / width
        return -w * dy / r2, w * dx / r2

    def seg(ax, ay, bx, by, t):
        ta = np.arctan2(np.asarray(ay) - cy, np.asarray(ax) - cx)
        tb = np.arctan2(np.asarray(by) - cy, np.asarray(bx) - cx)
        pa, pb = np.asarray(rel(ax, ay)), np.asarray(rel(bx, by))
        turn = np.asarray(wrap_angle(tb - ta))
        n = np.round((pa + turn - pb) / (2 * math.pi))
        return k * (step(pb) - step(pa) + n)

    return VectorPotential(func=func, singular_points=((cx, cy),), segment_integral=seg,
                           label=f"wedge_ab({alpha0:g})", panel_ratio=width / 16.0)


def uniform_field_potential(B: float, center=(0.0, 0.0)) -> VectorPotential:
    """Symmetric-gauge potential ``(B/2)(-y, x)`` of a uniform field ``B``."""
    cx, cy = float(center[0]), float(center[1])

    def func(x, y, t):
        return -0.5 * B * (y - cy), 0.5 * B * (x - cx)

    def seg(ax, ay, bx, by, t):
        # A is linear, so the midpoint rule is exact
        mx, my = 0.5 * (ax + bx), 0.5 * (ay + by)
        a1, a2 = func(mx, my, t)
        return a1 * (bx - ax) + a2 * (by - ay)

    return VectorPotential(func=func, segment_integral=seg, label=f"uniform({B:g})")


def constant_potential(a1: float, a2: float) -> VectorPotential:
    def func(x, y, t):
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        return np.full(shape, float(a1)), np.full(shape, float(a2))

    def seg(ax, ay, bx, by, t):
        return a1 * (np.asarray(bx) - ax) + a2 * (np.asarray(by) - ay)

    return VectorPotential(func=func, segment_integral=seg, label=f"constant({a1:g},{a2:g})")


def gradient_potential(psi, grad_psi) -> VectorPotential:
    """Pure-gauge potential ``A = grad psi``.

    Parameters
    ----------
    psi : callable
        ``psi(x, y)``; its differences give the exact segment integrals.
    grad_psi : callable
        ``grad_psi(x, y) -> (d1 psi, d2 psi)``.
    """
    def func(x, y, t):
        g1, g2 = grad_psi(x, y)
        z = np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
        return g1 + z, g2 + z

    def seg(ax, ay, bx, by, t):
        return psi(np.asarray(bx, float), np.asarray(by, float)) - psi(np.asarray(ax, float), np.asarray(ay, float))

    return VectorPotential(func=func, segment_integral=seg, label="gradient")


def _interpolator(grid: Grid2D, values):
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise ValueError(f"samples have shape {values.shape}, grid wants {grid.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("grid samples must be finite")
    return RegularGridInterpolator((grid.ys, grid.xs), values, method="linear",
                                   bounds_error=False, fill_value=None)


def _inside_or_raise(grid: Grid2D, x, y):
    pad = 1e-12 * max(1.0, grid.h)
    if not np.all(grid.contains(x, y, pad)):
        raise DomainError("grid-sampled potential evaluated outside its grid")


def grid_vector_potential(grid: Grid2D, A1, A2) -> VectorPotential:
    """Bilinear interpolant of node samples ``A1``, ``A2`` (shape ``(ny, nx)``)."""
    f1, f2 = _interpolator(grid, A1), _interpolator(grid, A2)
    samples = (np.array(A1, dtype=float), np.array(A2, dtype=float))

    def func(x, y, t):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        _inside_or_raise(grid, x, y)
        pts = np.column_stack([y.ravel(), x.ravel()])
        return f1(pts).reshape(x.shape), f2(pts).reshape(x.shape)

    return VectorPotential(func=func, resolution=grid.h, kind="grid", grid=grid,
                           label="grid", samples=samples)


def zero_scalar() -> ScalarPotential:
    return ScalarPotential(time_integral=lambda x, y, t0, t1: np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape))


def constant_scalar(v: float) -> ScalarPotential:
    def func(x, y, t):
        return np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, float(v))

    def ti(x, y, t0, t1):
        return func(x, y, t0) * (t1 - t0)

    return ScalarPotential(func=func, time_integral=ti, label=f"constant({v:g})")


def pulse_scalar(region, phase: float, t_on: float, t_off: float, shape: str = "smooth",
                 constants: Constants | None = None) -> ScalarPotential:
    """Spatially uniform pulse ``V(t)`` switched on inside ``region``.

    The pulse is active on ``[t_on, t_off]`` and its amplitude is chosen so
    that ``(e / hbar) int V dt = phase`` at every point of the region.

    Parameters
    ----------
    region : callable
        ``region(x, y)`` returning weights (typically 0 or 1).
    shape : {"smooth", "box"}
        ``"smooth"`` is a C-infinity bump vanishing near both ends;
        ``"box"`` is constant on the interval.
    """
    if not t_off > t_on:
        raise ValueError("pulse needs t_off > t_on")
    c = constants or Constants()
    total = phase / c.potential_scale
    span = t_off - t_on

    if shape == "smooth":
        def profile(t):
            return total * float(smooth_step_derivative((t - t_on) / span)) / span

        def antider(t):
            return total * float(smooth_step((t - t_on) / span))
    elif shape == "box":
        def profile(t):
            return total / span if t_on <= t <= t_off else 0.0

        def antider(t):
            return total * min(max((t - t_on) / span, 0.0), 1.0)
    else:
        raise ValueError(f"unknown pulse shape {shape!r}")

    def func(x, y, t):
        return np.asarray(region(x, y), float) * profile(t)

    def ti(x, y, t0, t1):
        return np.asarray(region(x, y), float) * (antider(t1) - antider(t0))

    return ScalarPotential(func=func, time_dependent=True, time_integral=ti,
                           label=f"pulse({phase:g})")


def grid_scalar(grid: Grid2D, V) -> ScalarPotential:
    f = _interpolator(grid, V)

    def func(x, y, t):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        _inside_or_raise(grid, x, y)
        return f(np.column_stack([y.ravel(), x.ravel()])).reshape(x.shape)

    return ScalarPotential(func=func, kind="grid", grid=grid, label="grid")
