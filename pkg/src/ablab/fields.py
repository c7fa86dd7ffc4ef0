"""Potentials, gauge transformations, fluxes, currents and Wilson lines.

Conventions
-----------
* ``Constants`` carries hbar, the particle mass, the charge and the speed of
  light. The magnetic flux of a loop is ``(e / hbar c) * oint A . dx`` and is
  counterclockwise positive.
* A scalar gauge function ``g = exp(i phi)`` with winding ``p`` maps
  ``A -> A + (hbar c / e) grad(phi + p theta)``, ``V -> V - (hbar / e) d_t phi``
  and the wave function ``u -> g u``.
* Arrays on grids have shape ``(ny, nx)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import expm

from .grid import DomainError, Grid2D, WaveState
from .smooth import wrap_angle

__all__ = [
    "Constants", "VectorPotential", "ScalarPotential", "GaugeFunction",
    "MatrixPotential", "Path", "FluxVector", "SingularPathError",
    "GaugeEquivalence", "BoundaryTriple", "flux_line_integral",
    "gauge_transform", "check_gauge_equivalence", "link_phases",
    "probability_current", "boundary_triple", "wilson_line",
    "matrix_gauge_transform",
]

SINGULAR_CLEARANCE = 1e-9


class SingularPathError(ValueError):
    """A path passes (numerically) through a declared singular point."""


@dataclass(frozen=True)
class Constants:
    """Physical constants; natural units by default."""

    hbar: float = 1.0
    mass: float = 1.0
    charge: float = 1.0
    light_speed: float = 1.0

    def __post_init__(self):
        for name in ("hbar", "mass", "charge", "light_speed"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be strictly positive, got {value!r}")

    @property
    def flux_scale(self) -> float:
        """``e / (hbar c)``, converting ``oint A . dx`` into a phase."""
        return self.charge / (self.hbar * self.light_speed)

    @property
    def potential_scale(self) -> float:
        """``e / hbar``, converting ``int V dt`` into a phase."""
        return self.charge / self.hbar


def _zero_pair(x, y, t):
    z = np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
    return z, z.copy()


def _zero_scalar(x, y, t):
    return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)


@dataclass(frozen=True, eq=False)
class VectorPotential:
    """Magnetic potential ``A(x, t) = (A1, A2)``.

    Parameters
    ----------
    func : callable
        ``func(x, y, t) -> (A1, A2)``, vectorized over array arguments.
    singular_points : sequence of points
        Points where ``func`` is undefined; paths must keep clear of them.
    segment_integral : callable, optional
        Exact ``int_a^b A . dx`` along the straight segment from ``a`` to
        ``b``, as ``segment_integral(ax, ay, bx, by, t)`` (vectorized). Used
        for lattice link phases when available.
    time_dependent : bool
    resolution : float, optional
        Length scale below which ``func`` is not smooth (grid spacing for
        sampled potentials); quadrature panels are kept shorter than it.
    panel_ratio : float
        Quadrature panels are at most ``panel_ratio`` times their distance
        to the nearest singular point.
    kind : {"analytic", "grid"}
    grid : Grid2D, optional
        Sampling grid of a grid-sampled potential.
    """

    func: Callable = _zero_pair
    singular_points: tuple = ()
    segment_integral: Callable | None = None
    time_dependent: bool = False
    resolution: float | None = None
    kind: str = "analytic"
    grid: Grid2D | None = None
    label: str = "zero"
    samples: tuple | None = field(default=None, repr=False)
    panel_ratio: float = 0.5

    def __call__(self, x, y, t=0.0):
        a1, a2 = self.func(np.asarray(x, dtype=float), np.asarray(y, dtype=float), t)
        return np.asarray(a1, dtype=float), np.asarray(a2, dtype=float)

    def sample(self, grid: Grid2D, t: float = 0.0):
        """Evaluate on every node of ``grid``; returns ``(A1, A2)``."""
        X, Y = grid.mesh()
        return self(X, Y, t)

    def __add__(self, other: "VectorPotential") -> "VectorPotential":
        f, g = self.func, other.func

        def func(x, y, t):
            a1, a2 = f(x, y, t)
            b1, b2 = g(x, y, t)
            return a1 + b1, a2 + b2

        seg = None
        if self.segment_integral is not None and other.segment_integral is not None:
            s1, s2 = self.segment_integral, other.segment_integral

            def seg(ax, ay, bx, by, t):
                return s1(ax, ay, bx, by, t) + s2(ax, ay, bx, by, t)

        res = [r for r in (self.resolution, other.resolution) if r is not None]
        kind = "grid" if "grid" in (self.kind, other.kind) else "analytic"
        return VectorPotential(
            func=func,
            singular_points=tuple(self.singular_points) + tuple(other.singular_points),
            segment_integral=seg,
            time_dependent=self.time_dependent or other.time_dependent,
            resolution=min(res) if res else None,
            kind=kind,
            grid=self.grid if self.grid is not None else other.grid,
            label=f"{self.label}+{other.label}",
            panel_ratio=min(self.panel_ratio, other.panel_ratio),
        )


@dataclass(frozen=True, eq=False)
class ScalarPotential:
    """Electric potential ``V(x, t)``.

    ``time_integral(x, y, t0, t1)``, when supplied, returns the exact
    ``int_t0^t1 V dt`` and is preferred by the time stepper.
    """

    func: Callable = _zero_scalar
    time_dependent: bool = False
    time_integral: Callable | None = None
    kind: str = "analytic"
    grid: Grid2D | None = None
    label: str = "zero"

    def __call__(self, x, y, t=0.0):
        v = self.func(np.asarray(x, dtype=float), np.asarray(y, dtype=float), t)
        return np.broadcast_to(np.asarray(v, dtype=float), np.broadcast(np.asarray(x), np.asarray(y)).shape)

    def sample(self, grid: Grid2D, t: float = 0.0):
        X, Y = grid.mesh()
        return np.array(self(X, Y, t))

    def integrate_time(self, x, y, t0: float, t1: float, order: int = 6):
        """``int_t0^t1 V(x, t) dt``, exact when possible, else Gauss-Legendre."""
        if self.time_integral is not None:
            return np.asarray(self.time_integral(x, y, t0, t1), dtype=float)
        if not self.time_dependent:
            return np.array(self(x, y, t0)) * (t1 - t0)
        nodes, weights = leggauss(order)
        half = 0.5 * (t1 - t0)
        mid = 0.5 * (t1 + t0)
        total = 0.0
        for s, w in zip(nodes, weights):
            total = total + w * np.array(self(x, y, mid + half * s))
        return half * total

    def __add__(self, other: "ScalarPotential") -> "ScalarPotential":
        f, g = self.func, other.func
        ti = None
        if self.time_integral is not None or other.time_integral is not None:
            a, b = self, other

            def ti(x, y, t0, t1):
                return a.integrate_time(x, y, t0, t1) + b.integrate_time(x, y, t0, t1)

        return ScalarPotential(
            func=lambda x, y, t: f(x, y, t) + g(x, y, t),
            time_dependent=self.time_dependent or other.time_dependent,
            time_integral=ti,
            label=f"{self.label}+{other.label}",
        )


def _theta(x, y, center):
    return np.arctan2(np.asarray(y) - center[1], np.asarray(x) - center[0])


def _theta_gradient(x, y, center):
    dx = np.asarray(x, dtype=float) - center[0]
    dy = np.asarray(y, dtype=float) - center[1]
    r2 = dx * dx + dy * dy
    return -dy / r2, dx / r2


@dataclass(frozen=True, eq=False)
class GaugeFunction:
    """Unimodular gauge ``g = exp(i (phi(x, t) + p theta(x - center)))``.

    Parameters
    ----------
    phase : callable
        ``phi(x, y, t)``, vectorized.
    winding : int
        Integer ``p`` of the angular factor ``exp(i p theta)``.
    center : point
        Origin of the angle ``theta``.
    gradient, time_derivative : callable, optional
        Analytic ``grad phi`` and ``d_t phi``; fourth-order central
        differences with step ``fd_step`` are used otherwise.
    """

    phase: Callable = _zero_scalar
    winding: int = 0
    center: tuple = (0.0, 0.0)
    gradient: Callable | None = None
    time_derivative: Callable | None = None
    fd_step: float = 1e-4
    time_dependent: bool = False

    def __post_init__(self):
        w = self.winding
        if isinstance(w, bool) or not float(w).is_integer():
            raise ValueError(f"winding must be an integer, got {w!r}")
        object.__setattr__(self, "winding", int(w))

    def total_phase(self, x, y, t=0.0):
        """``phi + p theta``; the angle is taken in ``(-pi, pi]``."""
        base = np.asarray(self.phase(np.asarray(x, float), np.asarray(y, float), t), dtype=float)
        if self.winding:
            base = base + self.winding * _theta(x, y, self.center)
        return base

    def __call__(self, x, y, t=0.0):
        return np.exp(1j * self.total_phase(x, y, t))

    def phase_gradient(self, x, y, t=0.0):
        """Gradient of ``phi`` only (the winding part is handled analytically)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.gradient is not None:
            gx, gy = self.gradient(x, y, t)
            return np.asarray(gx, float) + 0 * x, np.asarray(gy, float) + 0 * y
        h = self.fd_step
        f = self.phase

        def d(fp1, fm1, fp2, fm2):
            return (8.0 * (fp1 - fm1) - (fp2 - fm2)) / (12.0 * h)

        gx = d(f(x + h, y, t), f(x - h, y, t), f(x + 2 * h, y, t), f(x - 2 * h, y, t))
        gy = d(f(x, y + h, t), f(x, y - h, t), f(x, y + 2 * h, t), f(x, y - 2 * h, t))
        return np.asarray(gx, float) + 0 * x, np.asarray(gy, float) + 0 * y

    def phase_time_derivative(self, x, y, t=0.0):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.time_derivative is not None:
            return np.asarray(self.time_derivative(x, y, t), float) + 0 * x
        h = self.fd_step
        f = self.phase
        return (8.0 * (f(x, y, t + h) - f(x, y, t - h)) - (f(x, y, t + 2 * h) - f(x, y, t - 2 * h))) / (12.0 * h) + 0 * x


@dataclass(frozen=True, eq=False)
class MatrixPotential:
    """Hermitian ``m x m`` matrix-valued potential ``(A1, A2)`` and optional ``V``.

    ``func(x, y, t)`` returns two arrays of shape ``(..., m, m)``.
    """

    m: int
    func: Callable
    scalar: Callable | None = None
    time_dependent: bool = False

    def __call__(self, x, y, t=0.0):
        a1, a2 = self.func(np.asarray(x, float), np.asarray(y, float), t)
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape + (self.m, self.m)
        return (np.broadcast_to(np.asarray(a1, complex), shape),
                np.broadcast_to(np.asarray(a2, complex), shape))


@dataclass(frozen=True)
class Path:
    """Piecewise-linear path in the plane or in space-time ``(x1, x2, t)``."""

    vertices: np.ndarray
    closed: bool = False

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[0] < 2 or v.shape[1] not in (2, 3):
            raise ValueError("a path needs at least 2 vertices in 2 or 3 dimensions")
        if not np.all(np.isfinite(v)):
            raise ValueError("path vertices must be finite")
        if self.closed and not np.allclose(v[0], v[-1], rtol=0.0, atol=1e-12):
            raise ValueError("closed path must end at its first vertex")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @classmethod
    def polygon(cls, points) -> "Path":
        """Closed polygon through ``points`` (the closing vertex is appended)."""
        p = np.asarray(points, dtype=float)
        return cls(np.vstack([p, p[:1]]), closed=True)

    @classmethod
    def circle(cls, center=(0.0, 0.0), radius=1.0, n=96, clockwise=False) -> "Path":
        """Inscribed regular ``n``-gon approximating a circle."""
        s = np.linspace(0.0, 2.0 * np.pi, n + 1)
        if clockwise:
            s = s[::-1]
        pts = np.column_stack([center[0] + radius * np.cos(s), center[1] + radius * np.sin(s)])
        pts[-1] = pts[0]
        return cls(pts, closed=True)

    @classmethod
    def segment(cls, a, b) -> "Path":
        return cls(np.array([a, b], dtype=float))

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def start(self):
        return self.vertices[0]

    @property
    def end(self):
        return self.vertices[-1]

    def reversed(self) -> "Path":
        return Path(self.vertices[::-1].copy(), closed=self.closed)

    def then(self, other: "Path") -> "Path":
        """Concatenate ``other`` after ``self``; endpoints must match."""
        if not np.allclose(self.end, other.start, rtol=0.0, atol=1e-9):
            raise ValueError("paths do not join")
        v = np.vstack([self.vertices, other.vertices[1:]])
        closed = bool(np.allclose(v[0], v[-1], rtol=0.0, atol=1e-12))
        if closed:
            v[-1] = v[0]
        return Path(v, closed=closed)

    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)))


@dataclass(frozen=True)
class FluxVector:
    """Fluxes per obstacle or basis loop, compared modulo ``modulus``."""

    values: tuple
    modulus: float = 2.0 * math.pi

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def __len__(self):
        return len(self.values)

    def canonical(self):
        """Representatives in ``(-modulus/2, modulus/2]``."""
        m = self.modulus
        return np.array([wrap_angle(v * 2 * math.pi / m) * m / (2 * math.pi) for v in self.values])

    def distance(self, other: "FluxVector") -> float:
        """Largest componentwise distance modulo ``modulus``."""
        if len(self) != len(other):
            raise ValueError("flux vectors differ in length")
        d = np.array(self.values) - np.array(other.values)
        m = self.modulus
        return float(np.max(np.abs(wrap_angle(d * 2 * math.pi / m) * m / (2 * math.pi)), initial=0.0))

    def close_to(self, other: "FluxVector", tol: float = 1e-8) -> bool:
        return self.distance(other) <= tol

    def __neg__(self):
        return FluxVector(tuple(-v for v in self.values), self.modulus)


# ----------------------------------------------------------------- quadrature

def _point_segment_distance(p, a, b):
    ab = b - a
    denom = float(ab @ ab)
    s = 0.0 if denom == 0.0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(a + s * ab - p))


def _check_clearance(a, b, singular):
    for c in singular:
        if _point_segment_distance(np.asarray(c, float), a, b) <= SINGULAR_CLEARANCE:
            raise SingularPathError(
                f"segment {a.tolist()} -> {b.tolist()} passes through singular point {list(c)}")


def _panels(a, b, singular, resolution, ratio=0.5):
    """Parameter breakpoints in [0, 1] splitting the segment ``a -> b``.

    Panels are refined until each is at most ``ratio`` times its distance to
    the nearest singular point, and no longer than ``resolution``.
    """
    length = float(np.linalg.norm(b - a))
    n0 = 1
    if resolution is not None and length > 0:
        n0 = max(1, int(math.ceil(length / resolution)))
    breaks = list(np.linspace(0.0, 1.0, n0 + 1))
    if not singular or length == 0.0:
        return np.asarray(breaks)
    sing = [np.asarray(c, float) for c in singular]
    out = [0.0]
    stack = [(breaks[i], breaks[i + 1]) for i in range(n0)][::-1]
    while stack:
        s0, s1 = stack.pop()
        p0, p1 = a + s0 * (b - a), a + s1 * (b - a)
        d = min(_point_segment_distance(c, p0, p1) for c in sing)
        if (s1 - s0) * length > ratio * d and (s1 - s0) > 1e-15:
            mid = 0.5 * (s0 + s1)
            stack.append((mid, s1))
            stack.append((s0, mid))
        else:
            out.append(s1)
    return np.asarray(out)


def _segment_quadrature(a, b, singular, resolution, order, ratio=0.5):
    """Gauss-Legendre points and weights (in the segment parameter) for ``a -> b``."""
    nodes, weights = leggauss(order)
    breaks = _panels(a[:2], b[:2], singular, resolution, ratio)
    lo, hi = breaks[:-1, None], breaks[1:, None]
    s = 0.5 * (lo + hi) + 0.5 * (hi - lo) * nodes[None, :]
    w = 0.5 * (hi - lo) * weights[None, :]
    return s.ravel(), w.ravel()


def flux_line_integral(A: VectorPotential, path: Path, quadrature_order: int = 8,
                       constants: Constants | None = None, V: ScalarPotential | None = None,
                       t: float = 0.0) -> float:
    """Line integral of the potential along ``path`` as a phase.

    For planar paths this is ``(e / hbar c) int A . dx`` evaluated at time
    ``t``. For space-time paths with vertices ``(x1, x2, t)`` the integrand is
    ``(e / hbar) ((1/c) A . dx - V dt)``.

    Parameters
    ----------
    A : VectorPotential
    path : Path
    quadrature_order : int
        Gauss-Legendre points per panel; each segment is split into panels
        near singular points and at the sampling scale of grid potentials.
    constants : Constants, optional
    V : ScalarPotential, optional
        Needed only for space-time paths; treated as zero when omitted.
    t : float
        Evaluation time for planar paths.

    Returns
    -------
    float

    Raises
    ------
    SingularPathError
        If a segment comes within ``1e-9`` of a singular point of ``A``.
    DomainError
        If a grid-sampled potential is queried outside its grid.
    """
    c = constants or Constants()
    if quadrature_order < 1:
        raise ValueError("quadrature_order must be at least 1")
    verts = path.vertices
    spacetime = path.dim == 3
    total = 0.0
    for a, b in zip(verts[:-1], verts[1:]):
        _check_clearance(a[:2], b[:2], A.singular_points)
        s, w = _segment_quadrature(a, b, A.singular_points, A.resolution, quadrature_order, A.panel_ratio)
        pts = a[None, :] + s[:, None] * (b - a)[None, :]
        d = b - a
        if spacetime:
            a1, a2 = A(pts[:, 0], pts[:, 1], pts[:, 2])
            vals = c.potential_scale * ((a1 * d[0] + a2 * d[1]) / c.light_speed)
            if V is not None and d[2] != 0.0:
                vals = vals - c.potential_scale * np.array(V(pts[:, 0], pts[:, 1], pts[:, 2])) * d[2]
        else:
            a1, a2 = A(pts[:, 0], pts[:, 1], t)
            vals = c.flux_scale * (a1 * d[0] + a2 * d[1])
        total += float(np.sum(w * vals))
    return total


# --------------------------------------------------------------- gauge maps

def gauge_transform(A: VectorPotential, V: ScalarPotential, g: GaugeFunction,
                    constants: Constants | None = None):
    """Apply the gauge ``g`` to the pair ``(A, V)``.

    ``A' = A + (hbar c / e)(grad phi + p grad theta)`` and
    ``V' = V - (hbar / e) d_t phi``. The matching wave function is ``g u``.
    Exact segment integrals of ``A`` are carried over, so lattice link
    phases of the result differ from the original ones by exact phase
    differences of ``g``.

    Returns
    -------
    (VectorPotential, ScalarPotential)
    """
    c = constants or Constants()
    k = 1.0 / c.flux_scale
    p = g.winding
    center = g.center

    def func(x, y, t):
        a1, a2 = A.func(x, y, t)
        gx, gy = g.phase_gradient(x, y, t)
        if p:
            tx, ty = _theta_gradient(x, y, center)
            gx = gx + p * tx
            gy = gy + p * ty
        return a1 + k * gx, a2 + k * gy

    seg = None
    if A.segment_integral is not None:
        base = A.segment_integral

        def seg(ax, ay, bx, by, t):
            inc = np.asarray(g.phase(bx, by, t), float) - np.asarray(g.phase(ax, ay, t), float)
            if p:
                inc = inc + p * wrap_angle(_theta(bx, by, center) - _theta(ax, ay, center))
            return base(ax, ay, bx, by, t) + k * inc

    singular = tuple(A.singular_points) + ((tuple(center),) if p else ())
    time_dep = V.time_dependent or g.time_dependent
    A2 = VectorPotential(func=func, singular_points=singular, segment_integral=seg,
                         time_dependent=A.time_dependent or g.time_dependent,
                         resolution=A.resolution, kind=A.kind, grid=A.grid,
                         label=f"gauged({A.label})", panel_ratio=A.panel_ratio)
    vk = 1.0 / c.potential_scale

    def vfunc(x, y, t):
        return np.asarray(V(x, y, t)) - vk * g.phase_time_derivative(x, y, t)

    def vint(x, y, t0, t1):
        dphi = np.asarray(g.phase(x, y, t1), float) - np.asarray(g.phase(x, y, t0), float)
        return V.integrate_time(x, y, t0, t1) - vk * dphi

    V2 = ScalarPotential(func=vfunc, time_dependent=time_dep, time_integral=vint,
                         label=f"gauged({V.label})")
    return A2, V2


@dataclass(frozen=True)
class GaugeEquivalence:
    equivalent: bool
    offsets: list
    differences: list


def check_gauge_equivalence(A, V, A2, V2, basis_loops: Sequence[Path], tol: float = 1e-8,
                            constants: Constants | None = None, quadrature_order: int = 8,
                            t: float = 0.0) -> GaugeEquivalence:
    """Compare two potential pairs through their fluxes over a homology basis.

    The pairs are gauge equivalent iff every flux difference
    ``flux(A2) - flux(A)`` lies within ``tol`` of ``2 pi n``; the integers
    ``n`` are returned as ``offsets``.
    """
    offsets, diffs = [], []
    ok = True
    for loop in basis_loops:
        if not loop.closed:
            raise ValueError("basis loops must be closed")
        f1 = flux_line_integral(A, loop, quadrature_order, constants, V, t)
        f2 = flux_line_integral(A2, loop, quadrature_order, constants, V2, t)
        d = f2 - f1
        n = int(round(d / (2.0 * math.pi)))
        diffs.append(d)
        offsets.append(n)
        if abs(d - 2.0 * math.pi * n) > tol:
            ok = False
    return GaugeEquivalence(ok, offsets, diffs)


# ------------------------------------------------------------ lattice links

def link_phases(grid: Grid2D, A: VectorPotential, t: float = 0.0,
                constants: Constants | None = None, rule="auto"):
    """Phases ``(e / hbar c) int_a^b A . dl`` on the grid links.

    Parameters
    ----------
    rule : {"auto", "exact", "midpoint"} or int
        ``"exact"`` uses the potential's segment integral, ``"midpoint"``
        samples ``A`` at the link centre, an integer ``q`` uses ``q``-point
        Gauss-Legendre. ``"auto"`` means exact when available, else midpoint.

    Returns
    -------
    theta_x : ndarray, shape ``(ny, nx - 1)``
        From node ``(j, i)`` to ``(j, i + 1)``.
    theta_y : ndarray, shape ``(ny - 1, nx)``
        From node ``(j, i)`` to ``(j + 1, i)``.
    """
    c = constants or Constants()
    X, Y = grid.mesh()
    h = grid.h
    if rule == "auto":
        rule = "exact" if A.segment_integral is not None else "midpoint"
    if rule == "exact":
        if A.segment_integral is None:
            raise ValueError("potential has no exact segment integral")
        tx = A.segment_integral(X[:, :-1], Y[:, :-1], X[:, 1:], Y[:, 1:], t)
        ty = A.segment_integral(X[:-1, :], Y[:-1, :], X[1:, :], Y[1:, :], t)
        return c.flux_scale * np.asarray(tx, float), c.flux_scale * np.asarray(ty, float)
    order = 1 if rule == "midpoint" else int(rule)
    nodes, weights = leggauss(order)
    tx = np.zeros((grid.ny, grid.nx - 1))
    ty = np.zeros((grid.ny - 1, grid.nx))
    for s, w in zip(nodes, weights):
        off = 0.5 * h * (1.0 + s)
        a1, _ = A(X[:, :-1] + off, Y[:, :-1], t)
        _, a2 = A(X[:-1, :], Y[:-1, :] + off, t)
        tx += 0.5 * w * h * a1
        ty += 0.5 * w * h * a2
    return c.flux_scale * tx, c.flux_scale * ty


def _covariant_gradient(u, theta_x, theta_y, h):
    """Gauge-covariant differences ``D_j u`` with centered interior stencils.

    The neighbour value is transported back along the link with
    ``exp(-i theta)``, so ``D (g u) = g D u`` whenever the link phases shift
    by the exact phase differences of ``g``.
    """
    fwd_x = np.exp(-1j * theta_x) * u[:, 1:]   # neighbour to the right seen from the left node
    bwd_x = np.exp(1j * theta_x) * u[:, :-1]   # neighbour to the left seen from the right node
    fwd_y = np.exp(-1j * theta_y) * u[1:, :]
    bwd_y = np.exp(1j * theta_y) * u[:-1, :]
    dx = np.empty_like(u)
    dy = np.empty_like(u)
    dx[:, 1:-1] = (fwd_x[:, 1:] - bwd_x[:, :-1]) / (2 * h)
    dx[:, 0] = (fwd_x[:, 0] - u[:, 0]) / h
    dx[:, -1] = (u[:, -1] - bwd_x[:, -1]) / h
    dy[1:-1, :] = (fwd_y[1:, :] - bwd_y[:-1, :]) / (2 * h)
    dy[0, :] = (fwd_y[0, :] - u[0, :]) / h
    dy[-1, :] = (u[-1, :] - bwd_y[-1, :]) / h
    return dx, dy


def probability_current(u: WaveState, A: VectorPotential, constants: Constants | None = None,
                        rule="auto"):
    """Probability current ``S = Im[(hbar grad u - i (e/c) A u) conj(u)]``.

    The combination ``grad - i (e / hbar c) A`` is discretised by covariant
    differences built from the link phases, centered in the interior and
    one-sided on the boundary. This keeps ``S`` exactly invariant under
    ``(u, A) -> (g u, A')`` on the lattice.

    Returns
    -------
    (S1, S2) : tuple of ndarray, shape ``(ny, nx)``
    """
    c = constants or Constants()
    tx, ty = link_phases(u.grid, A, u.time, c, rule)
    dx, dy = _covariant_gradient(u.values, tx, ty, u.grid.h)
    ub = np.conj(u.values)
    return c.hbar * np.imag(dx * ub), c.hbar * np.imag(dy * ub)


@dataclass(frozen=True)
class BoundaryTriple:
    """Gauge-invariant boundary data sampled at boundary nodes."""

    points: np.ndarray
    density: np.ndarray
    normal_slope: np.ndarray
    current: np.ndarray


def boundary_triple(u: WaveState, A: VectorPotential, boundary_segment: Path,
                    constants: Constants | None = None, rule="auto") -> BoundaryTriple:
    """Density, outward normal density slope and current along a boundary segment.

    Raises
    ------
    ValueError
        If the segment does not lie on one side of the grid boundary.
    """
    grid = u.grid
    v = boundary_segment.vertices
    if v.shape[1] != 2:
        raise ValueError("boundary segment must be planar")
    x_min, x_max, y_min, y_max = grid.extent
    tol = 1e-9 * max(1.0, grid.h)
    a, b = v[0], v[-1]
    sides = {
        "left": np.all(np.abs(v[:, 0] - x_min) <= tol),
        "right": np.all(np.abs(v[:, 0] - x_max) <= tol),
        "bottom": np.all(np.abs(v[:, 1] - y_min) <= tol),
        "top": np.all(np.abs(v[:, 1] - y_max) <= tol),
    }
    side = next((s for s, ok in sides.items() if ok), None)
    if side is None:
        raise ValueError("segment does not lie on the grid boundary")
    S1, S2 = probability_current(u, A, constants, rule)
    dens = np.abs(u.values) ** 2
    h = grid.h
    if side in ("left", "right"):
        lo, hi = sorted((a[1], b[1]))
        j = np.nonzero((grid.ys >= lo - tol) & (grid.ys <= hi + tol))[0]
        i, inner = (0, 1) if side == "left" else (grid.nx - 1, grid.nx - 2)
        pts = np.column_stack([np.full(j.size, grid.xs[i]), grid.ys[j]])
        f1 = dens[j, i]
        f2 = (dens[j, i] - dens[j, inner]) / h
        f3 = np.column_stack([S1[j, i], S2[j, i]])
    else:
        lo, hi = sorted((a[0], b[0]))
        i = np.nonzero((grid.xs >= lo - tol) & (grid.xs <= hi + tol))[0]
        j, inner = (0, 1) if side == "bottom" else (grid.ny - 1, grid.ny - 2)
        pts = np.column_stack([grid.xs[i], np.full(i.size, grid.ys[j])])
        f1 = dens[j, i]
        f2 = (dens[j, i] - dens[inner, i]) / h
        f3 = np.column_stack([S1[j, i], S2[j, i]])
    return BoundaryTriple(pts, f1, f2, f3)


# ------------------------------------------------------------- Wilson lines

def _check_hermitian(M, tol=1e-12):
    dev = np.max(np.abs(M - np.conj(np.swapaxes(M, -1, -2))), initial=0.0)
    scale = max(1.0, float(np.max(np.abs(M), initial=0.0)))
    if dev > tol * scale:
        raise ValueError(f"matrix potential is not Hermitian (deviation {dev:.3e})")


def _ordered_product(U):
    """``U[n-1] @ ... @ U[1] @ U[0]`` by pairwise reduction (later factors on the left)."""
    while U.shape[0] > 1:
        if U.shape[0] % 2:
            tail = U[-1:]
            U = U[:-1]
        else:
            tail = None
        U = U[1::2] @ U[0::2]
        if tail is not None:
            U = np.concatenate([U, tail])
    return U[0]


def wilson_line(A: MatrixPotential, path: Path, steps_per_segment: int = 64, t: float = 0.0):
    """Path-ordered exponential ``P exp(i int A . dx)`` along ``path``.

    Each segment is cut into ``steps_per_segment`` equal sub-steps; the
    sub-step factor is ``exp(i A(x_mid) . dx)`` and later factors multiply
    on the left, so the result transports data from the start of the path
    to its end.

    Returns
    -------
    ndarray, shape ``(m, m)``

    Raises
    ------
    ValueError
        If a sampled matrix is not Hermitian or ``steps_per_segment < 1``.
    """
    if steps_per_segment < 1:
        raise ValueError("steps_per_segment must be at least 1")
    verts = path.vertices[:, :2]
    s = (np.arange(steps_per_segment) + 0.5) / steps_per_segment
    mids, steps = [], []
    for a, b in zip(verts[:-1], verts[1:]):
        mids.append(a[None, :] + s[:, None] * (b - a)[None, :])
        steps.append(np.broadcast_to((b - a) / steps_per_segment, (steps_per_segment, 2)))
    mids = np.vstack(mids)
    steps = np.vstack(steps)
    a1, a2 = A(mids[:, 0], mids[:, 1], t)
    _check_hermitian(a1)
    _check_hermitian(a2)
    M = a1 * steps[:, 0, None, None] + a2 * steps[:, 1, None, None]
    if A.m == 1:
        return np.array([[np.exp(1j * np.sum(M[:, 0, 0].real))]])
    U = expm(1j * M)
    return _ordered_product(U)


def matrix_gauge_transform(A: MatrixPotential, g: Callable, dg: Callable) -> MatrixPotential:
    """Gauge a matrix potential: ``A' = g^-1 A g + i g^-1 d g``.

    ``g(x, y)`` returns unitary matrices of shape ``(..., m, m)`` and
    ``dg(x, y)`` returns their partial derivatives ``(d1 g, d2 g)``. With
    this convention the Wilson line transforms as
    ``W' = g(end)^-1 W g(start)``.
    """
    def func(x, y, t):
        a1, a2 = A(x, y, t)
        G = np.asarray(g(x, y), complex)
        Gi = np.conj(np.swapaxes(G, -1, -2))
        d1, d2 = dg(x, y)
        b1 = Gi @ a1 @ G + 1j * Gi @ d1
        b2 = Gi @ a2 @ G + 1j * Gi @ d2
        return b1, b2

    return MatrixPotential(A.m, func, A.scalar, A.time_dependent)
