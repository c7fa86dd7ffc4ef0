"""Stationary metrics and the gravitational analogue of the AB flux.

A stationary metric ``g00 dt^2 + 2 g0j dt dx_j + gjk dx_j dx_k`` with
coefficients independent of ``t`` carries the 1-form ``w = (g0j / g00) dx_j``.
A time shift ``t -> t + a(x)`` changes ``w`` by the exact form ``-da``, so the
loop integrals of ``w`` are invariants of the metric up to isometry. The
metric is locally static where ``w`` is closed and globally static when in
addition all its periods vanish.

Component functions take the spatial coordinates as separate arrays
(``f(x1, x2)`` or ``f(x1, x2, x3)``) and broadcast over them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fields import Path, SingularPathError, _segment_quadrature


class SignatureError(ValueError):
    """The sampled metric does not have the required sign structure."""


class ExpressionError(ValueError):
    """Malformed metric expression."""


def _full(shape, value):
    return np.full(shape, float(value))


@dataclass
class StationaryMetric:
    """Time-independent metric coefficients on an ``n``-dimensional space.

    Parameters
    ----------
    dimension : int
        Spatial dimension, 2 or 3.
    g00 : callable
        ``g00(*x) -> array``; must stay positive where queried.
    g0 : sequence of callables
        Off-diagonal coefficients ``g0j(*x)``.
    gs : nested sequence of callables
        Spatial block ``gjk(*x)``; symmetry is assumed for ``j != k`` and
        only the upper triangle is read.
    singular_points : list of points, optional
        Points excluded from the domain (e.g. the axis of an AB-form). Loop
        quadrature refines near them and rejects loops passing through.
    """

    dimension: int
    g00: Callable
    g0: Sequence[Callable]
    gs: Sequence[Sequence[Callable]]
    singular_points: list = field(default_factory=list)

    def __post_init__(self):
        n = int(self.dimension)
        if n not in (2, 3):
            raise ValueError("dimension must be 2 or 3")
        self.dimension = n
        if len(self.g0) != n or len(self.gs) != n or any(len(row) != n for row in self.gs):
            raise ValueError(f"g0 needs {n} entries and gs must be {n}x{n}")
        self.singular_points = [tuple(float(c) for c in p) for p in self.singular_points]

    @classmethod
    def static(cls, dimension=2, lapse=1.0):
        """Ultrastatic metric ``lapse dt^2 - |dx|^2``."""
        n = dimension
        one = lambda *x: _full(np.broadcast(*x).shape, lapse)
        zero = lambda *x: np.zeros(np.broadcast(*x).shape)
        minus = lambda *x: _full(np.broadcast(*x).shape, -1.0)
        gs = [[minus if j == k else zero for k in range(n)] for j in range(n)]
        return cls(n, one, [zero] * n, gs)

    def evaluate(self, *x):
        """Return ``(g00, g0, gs)`` as arrays of shapes ``S``, ``(n,)+S``, ``(n,n)+S``."""
        shape = np.broadcast(*x).shape
        g00 = np.broadcast_to(np.asarray(self.g00(*x), float), shape)
        g0 = np.stack([np.broadcast_to(np.asarray(f(*x), float), shape) for f in self.g0])
        n = self.dimension
        gs = np.empty((n, n) + shape)
        for j in range(n):
            for k in range(j, n):
                gs[j, k] = gs[k, j] = np.broadcast_to(np.asarray(self.gs[j][k](*x), float), shape)
        return g00, g0, gs

    def one_form(self, *x):
        """``g0j / g00`` at the given points, shape ``(n,) + S``.

        Raises
        ------
        SignatureError
            If ``g00 <= 0`` at any point.
        """
        g00 = np.broadcast_to(np.asarray(self.g00(*x), float), np.broadcast(*x).shape)
        if np.any(~(g00 > 0)):
            raise SignatureError("g00 must be positive at every sampled point")
        return np.stack([np.asarray(f(*x), float) / g00 for f in self.g0])

    def check_signature(self, *x):
        """Raise ``SignatureError`` unless ``g00 > 0`` and the spatial block is negative definite."""
        g00, g0, gs = self.evaluate(*x)
        if np.any(~(g00 > 0)):
            raise SignatureError("g00 must be positive")
        blocks = np.moveaxis(gs.reshape(self.dimension, self.dimension, -1), -1, 0)
        if blocks.shape[0] and np.max(np.linalg.eigvalsh(blocks)) >= 0:
            raise SignatureError("spatial block must be negative definite")


def gravitational_flux(metric: StationaryMetric, loop: Path, quadrature_order: int = 8) -> float:
    """Loop integral of ``(g0j / g00) dx_j``.

    The value is a real invariant; no reduction modulo ``2 pi`` is applied.

    Parameters
    ----------
    metric : StationaryMetric
    loop : Path
        Closed polyline in the spatial coordinates.
    quadrature_order : int
        Gauss-Legendre points per panel.

    Raises
    ------
    SignatureError
        If a quadrature node samples ``g00 <= 0``.
    """
    verts = loop.vertices
    if verts.shape[1] != metric.dimension:
        raise ValueError(f"loop lives in {verts.shape[1]} dimensions, metric in {metric.dimension}")
    if not np.allclose(verts[0], verts[-1], rtol=0, atol=1e-12):
        raise ValueError("loop must be closed")
    sing = metric.singular_points
    total = 0.0
    for a, b in zip(verts[:-1], verts[1:]):
        for p in sing:
            if _point_segment_distance(np.asarray(p), a, b) < 1e-9:
                raise SingularPathError(f"loop passes within 1e-9 of the excluded point {p}")
        if metric.dimension == 2:
            s, w = _segment_quadrature(a, b, sing, None, quadrature_order, 0.25)
        else:
            s, w = _segment_quadrature_nd(a, b, sing, quadrature_order)
        pts = a[None, :] + s[:, None] * (b - a)[None, :]
        omega = metric.one_form(*pts.T)
        total += float(np.sum(w * (omega.T @ (b - a))))
    return total


def _point_segment_distance(p, a, b):
    d = b - a
    L2 = float(d @ d)
    s = 0.0 if L2 == 0 else min(1.0, max(0.0, float((p - a) @ d) / L2))
    return float(np.linalg.norm(a + s * d - p))


def _segment_quadrature_nd(a, b, sing, order, ratio=0.25):
    # geometric panels towards the closest approach to each singular point
    breaks = {0.0, 1.0}
    d = b - a
    L = float(np.linalg.norm(d))
    for p in sing:
        p = np.asarray(p)
        s0 = min(1.0, max(0.0, float((p - a) @ d) / (L * L))) if L > 0 else 0.0
        dist = max(_point_segment_distance(p, a, b), 1e-12)
        for side in (-1.0, 1.0):
            r = ratio * dist
            while True:
                s = s0 + side * r / L
                if not 0.0 < s < 1.0:
                    break
                breaks.add(s)
                r *= 2.0
    edges = np.array(sorted(breaks))
    x, w = np.polynomial.legendre.leggauss(order)
    lo, hi = edges[:-1, None], edges[1:, None]
    s = (0.5 * (hi - lo) * x[None, :] + 0.5 * (hi + lo)).ravel()
    ws = (0.5 * (hi - lo) * w[None, :]).ravel()
    return s, ws


def time_shift_isometry(metric: StationaryMetric, a: Callable, grad_a: Callable) -> StationaryMetric:
    """Metric in the coordinates ``t' = t + a(x)``.

    Parameters
    ----------
    metric : StationaryMetric
    a : callable
        The shift itself; kept only for reference, the new coefficients
        depend on its gradient.
    grad_a : callable
        ``grad_a(*x) -> sequence`` of the ``n`` partial derivatives.

    Returns
    -------
    StationaryMetric
        ``g'00 = g00``, ``g'0j = g0j - g00 a_j``,
        ``g'jk = gjk - g0j a_k - g0k a_j + g00 a_j a_k``.
    """
    n = metric.dimension
    old = metric

    def g0(j):
        return lambda *x: old.g0[j](*x) - old.g00(*x) * np.asarray(grad_a(*x)[j], float)

    def gs(j, k):
        def f(*x):
            da = grad_a(*x)
            aj, ak = np.asarray(da[j], float), np.asarray(da[k], float)
            return (old.gs[j][k](*x) - old.g0[j](*x) * ak - old.g0[k](*x) * aj
                    + old.g00(*x) * aj * ak)
        return f

    return StationaryMetric(n, old.g00, [g0(j) for j in range(n)],
                            [[gs(j, k) for k in range(n)] for j in range(n)],
                            list(old.singular_points))


@dataclass(frozen=True)
class StaticReport:
    locally_static: bool
    globally_static: bool
    fluxes: tuple
    max_curl: float
    tolerance: float

    def to_dict(self):
        return {"locally_static": self.locally_static, "globally_static": self.globally_static,
                "fluxes": list(self.fluxes), "max_curl": self.max_curl, "tolerance": self.tolerance}


def one_form_curl(metric: StationaryMetric, points, step: float = 1e-5):
    """Centered-difference exterior derivative of ``g0j / g00`` at ``points``.

    Returns the antisymmetric components ``d_j w_k - d_k w_j`` for ``j < k``
    as an array of shape ``(m, n_points)`` with ``m = 1`` in 2D, 3 in 3D.
    """
    P = np.atleast_2d(np.asarray(points, float))
    n = metric.dimension
    if P.shape[1] != n:
        raise ValueError(f"points must have {n} columns")
    # jac[j, k] = d_j w_k
    jac = np.empty((n, n, P.shape[0]))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        wp = metric.one_form(*(P + e).T)
        wm = metric.one_form(*(P - e).T)
        jac[j] = (wp - wm) / (2.0 * step)
    pairs = [(j, k) for j in range(n) for k in range(j + 1, n)]
    return np.stack([jac[j, k] - jac[k, j] for j, k in pairs])


def static_obstruction(metric: StationaryMetric, basis_loops, probe_grid, tol: float | None = None,
                       quadrature_order: int = 8, step: float = 1e-5) -> StaticReport:
    """Test whether the metric is locally and globally static.

    Parameters
    ----------
    metric : StationaryMetric
    basis_loops : sequence of Path
        Loops generating the first homology of the domain.
    probe_grid : array_like, shape (m, n), or Grid2D
        Probe points inside the domain, away from excluded points.
    tol : float, optional
        Threshold for both the curl and the fluxes. Defaults to ``1e-6``
        times the largest ``|g0j / g00|`` seen at the probes (at least
        ``1e-6``).
    quadrature_order : int
    step : float
        Centered-difference step.

    Returns
    -------
    StaticReport
    """
    if hasattr(probe_grid, "mesh"):
        X, Y = probe_grid.mesh()
        P = np.column_stack([X.ravel(), Y.ravel()])
    else:
        P = np.atleast_2d(np.asarray(probe_grid, float))
    if tol is None:
        scale = float(np.max(np.abs(metric.one_form(*P.T)), initial=0.0))
        tol = 1e-6 * max(scale, 1.0)
    curl = one_form_curl(metric, P, step)
    max_curl = float(np.max(np.abs(curl), initial=0.0))
    fluxes = tuple(gravitational_flux(metric, loop, quadrature_order) for loop in basis_loops)
    local = max_curl < tol
    glob = local and all(abs(f) < tol for f in fluxes)
    return StaticReport(local, glob, fluxes, max_curl, float(tol))


# ---------------------------------------------------------------------------
# expression language for configuration files
#
#   number                                  constant
#   {"poly": [[c, p1, p2(, p3)], ...]}      sum of c * x1^p1 * x2^p2 * x3^p3
#   {"ab_form": {"alpha": a, "center": [..], "component": j}}
#                                           j-th component (1-based) of
#                                           alpha (-(x2-c2), x1-c1) / (2 pi r^2)
#   {"sum": [e, ...]}, {"product": [e, ...]}
# ---------------------------------------------------------------------------

@dataclass
class Expr:
    """Compiled expression: value, gradient, and excluded points."""

    value: Callable
    gradient: Callable | None
    singular_points: list


def _shape(x):
    return np.broadcast(*x).shape


def compile_expression(spec, dimension: int = 2) -> Expr:
    """Turn a JSON expression into callables of ``(x1, .., xn)``."""
    n = dimension
    if isinstance(spec, bool):
        raise ExpressionError("booleans are not expressions")
    if isinstance(spec, (int, float)):
        c = float(spec)
        return Expr(lambda *x: _full(_shape(x), c),
                    lambda *x: [np.zeros(_shape(x)) for _ in range(n)], [])
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ExpressionError(f"expected a number or a one-key object, got {spec!r}")
    (kind, arg), = spec.items()
    if kind == "poly":
        terms = []
        for t in arg:
            if len(t) != n + 1:
                raise ExpressionError(f"poly terms need {n + 1} entries [coef, powers...]")
            powers = [int(p) for p in t[1:]]
            if any(p < 0 or p != q for p, q in zip(powers, t[1:])):
                raise ExpressionError("powers must be non-negative integers")
            terms.append((float(t[0]), powers))

        def value(*x):
            out = np.zeros(_shape(x))
            for c, pw in terms:
                term = c
                for xi, p in zip(x, pw):
                    term = term * np.asarray(xi, float) ** p
                out = out + term
            return out

        def gradient(*x):
            grads = []
            for j in range(n):
                g = np.zeros(_shape(x))
                for c, pw in terms:
                    if pw[j] == 0:
                        continue
                    term = c * pw[j]
                    for i, (xi, p) in enumerate(zip(x, pw)):
                        term = term * np.asarray(xi, float) ** (p - 1 if i == j else p)
                    g = g + term
                grads.append(g)
            return grads

        return Expr(value, gradient, [])
    if kind == "ab_form":
        alpha = float(arg["alpha"])
        center = [float(c) for c in arg.get("center", [0.0] * n)]
        comp = int(arg["component"])
        if comp not in (1, 2):
            raise ExpressionError("ab_form component must be 1 or 2")
        pad = center + [0.0] * (n - len(center))

        def value(*x):
            u = np.asarray(x[0], float) - center[0]
            v = np.asarray(x[1], float) - center[1]
            r2 = u * u + v * v
            num = -v if comp == 1 else u
            return alpha * num / (2.0 * math.pi * r2) + np.zeros(_shape(x))

        sing = [tuple(pad)] if n == 2 else []
        return Expr(value, None, sing)
    if kind in ("sum", "product"):
        parts = [compile_expression(e, n) for e in arg]
        if not parts:
            raise ExpressionError(f"{kind} needs at least one operand")
        sing = [p for e in parts for p in e.singular_points]
        if kind == "sum":
            value = lambda *x: sum(e.value(*x) for e in parts)
            if all(e.gradient is not None for e in parts):
                gradient = lambda *x: [sum(e.gradient(*x)[j] for e in parts) for j in range(n)]
            else:
                gradient = None
        else:
            def value(*x):
                out = np.ones(_shape(x))
                for e in parts:
                    out = out * e.value(*x)
                return out

            if all(e.gradient is not None for e in parts):
                def gradient(*x):
                    vals = [e.value(*x) for e in parts]
                    grads = [e.gradient(*x) for e in parts]
                    out = []
                    for j in range(n):
                        g = np.zeros(_shape(x))
                        for i in range(len(parts)):
                            term = grads[i][j]
                            for m, v in enumerate(vals):
                                if m != i:
                                    term = term * v
                            g = g + term
                        out.append(g)
                    return out
            else:
                gradient = None
        return Expr(value, gradient, sing)
    raise ExpressionError(f"unknown expression kind {kind!r}")


def metric_from_spec(spec: dict) -> StationaryMetric:
    """Build a metric from ``{"dimension", "g00", "g0", "gs"}`` expressions.

    Omitted entries default to ``g00 = 1``, ``g0 = 0``, ``gs = -identity``.
    """
    n = int(spec.get("dimension", 2))
    g00 = compile_expression(spec.get("g00", 1.0), n)
    g0 = [compile_expression(e, n) for e in spec.get("g0", [0.0] * n)]
    default_gs = [[-1.0 if j == k else 0.0 for k in range(n)] for j in range(n)]
    gs = [[compile_expression(e, n) for e in row] for row in spec.get("gs", default_gs)]
    sing = list(g00.singular_points)
    for e in g0 + [e for row in gs for e in row]:
        sing.extend(p for p in e.singular_points if p not in sing)
    sing.extend(tuple(map(float, p)) for p in spec.get("singular_points", []))
    return StationaryMetric(n, g00.value, [e.value for e in g0], [[e.value for e in row] for row in gs], sing)


def shift_from_spec(spec, dimension: int = 2):
    """Compile a time-shift function; returns ``(a, grad_a)``."""
    e = compile_expression(spec, dimension)
    if e.gradient is None:
        raise ExpressionError("time shift must be built from polynomials")
    return e.value, e.gradient
