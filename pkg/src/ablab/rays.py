"""Broken rays among convex obstacles, winding numbers and flux recovery.

A broken ray travels in straight segments and reflects specularly,
``w' = w - 2 (n . w) n`` with ``n`` the outward normal, off the first
obstacle it meets. The phase difference between a broken ray and a
reference path sharing its endpoints is the flux enclosed by the closed
contour they form, weighted by winding numbers; enough such relations fix
the per-obstacle fluxes up to a global sign.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .fields import Constants, FluxVector, Path, flux_line_integral
from .smooth import wrap_angle

CORNER_TOL = 1e-9


class TangencyError(ValueError):
    """A ray hits a polygon corner or grazes an obstacle."""


class TrappedRayError(RuntimeError):
    """The reflection cap was reached before the ray left the box."""


class UnderdeterminedError(ValueError):
    """The measurements do not determine the fluxes (up to sign)."""


class InconsistencyError(ValueError):
    """No flux assignment reproduces the measurements within tolerance."""


# ------------------------------------------------------------------ obstacles

@dataclass(frozen=True)
class ConvexObstacle:
    """Disc (``center``, ``radius``) or convex polygon (``vertices``, CCW)."""

    center: tuple | None = None
    radius: float | None = None
    vertices: tuple | None = None

    def __post_init__(self):
        if (self.vertices is None) == (self.radius is None):
            raise ValueError("give either center and radius, or polygon vertices")
        if self.vertices is None:
            if not self.radius > 0:
                raise ValueError("disc radius must be positive")
            object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
            return
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
            raise ValueError("polygon needs at least 3 planar vertices")
        e = np.roll(v, -1, axis=0) - v
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if np.any(cross <= 0):
            raise ValueError("polygon vertices must be strictly convex and counterclockwise")
        object.__setattr__(self, "vertices", tuple(map(tuple, v)))
        object.__setattr__(self, "center", tuple(v.mean(axis=0)))

    @classmethod
    def disc(cls, center, radius):
        return cls(center=center, radius=radius)

    @classmethod
    def polygon(cls, vertices):
        return cls(vertices=vertices)

    @property
    def is_disc(self):
        return self.vertices is None

    @property
    def reference_point(self):
        """Disc center or polygon vertex centroid, used for winding numbers."""
        return np.array(self.center)

    def _edges(self):
        v = np.asarray(self.vertices)
        w = np.roll(v, -1, axis=0)
        e = w - v
        normals = np.column_stack([e[:, 1], -e[:, 0]]) / np.linalg.norm(e, axis=1)[:, None]
        return v, w, normals

    def contains(self, p, strict: bool = True, tol: float = 1e-12) -> bool:
        """Whether ``p`` lies inside (strictly, beyond ``tol``) the obstacle."""
        p = np.asarray(p, dtype=float)
        if self.is_disc:
            d = math.hypot(p[0] - self.center[0], p[1] - self.center[1])
            return d < self.radius - tol if strict else d <= self.radius + tol
        v, _, n = self._edges()
        s = np.einsum("ij,ij->i", n, p - v)
        return bool(np.all(s < -tol)) if strict else bool(np.all(s <= tol))

    def hit(self, p, d):
        """First entry of the ray ``p + t d`` (``t > 0``).

        Returns ``(t, point, normal)`` or ``None`` on a miss.
        """
        p = np.asarray(p, float)
        d = np.asarray(d, float)
        if self.is_disc:
            c = np.asarray(self.center)
            q = p - c
            b = float(q @ d)
            cc = float(q @ q) - self.radius ** 2
            disc = b * b - cc
            if disc < 0:
                return None
            t = -b - math.sqrt(disc)
            if t <= 1e-12 * max(1.0, self.radius):
                return None
            x = p + t * d
            n = (x - c) / np.linalg.norm(x - c)
            if abs(float(n @ d)) < 1e-9:
                raise TangencyError(f"ray grazes disc at {tuple(x)}")
            return t, x, n
        v, _, normals = self._edges()
        t_in, t_out, k_in = -math.inf, math.inf, -1
        for k in range(len(v)):
            num = float(normals[k] @ (v[k] - p))
            den = float(normals[k] @ d)
            if den == 0.0:
                if num < 0:
                    return None
                continue
            t = num / den
            if den < 0:
                if t > t_in:
                    t_in, k_in = t, k
            else:
                t_out = min(t_out, t)
        if k_in < 0 or t_in > t_out or t_in <= 1e-12:
            return None
        x = p + t_in * d
        if np.min(np.linalg.norm(v - x, axis=1)) < CORNER_TOL:
            raise TangencyError(f"ray hits polygon corner near {tuple(x)}")
        if t_out - t_in < CORNER_TOL:
            raise TangencyError(f"ray grazes polygon near {tuple(x)}")
        return t_in, x, normals[k_in]

    def segment_enters(self, a, b, tol: float = 1e-9) -> bool:
        """Whether the open segment ``ab`` passes through the interior."""
        a = np.asarray(a, float)
        b = np.asarray(b, float)
        if self.is_disc:
            c = np.asarray(self.center)
            ab = b - a
            L2 = float(ab @ ab)
            s = 0.0 if L2 == 0 else float(np.clip((c - a) @ ab / L2, 0.0, 1.0))
            return float(np.linalg.norm(a + s * ab - c)) < self.radius * (1.0 - tol)
        v, _, normals = self._edges()
        d = b - a
        t0, t1 = 0.0, 1.0
        for k in range(len(v)):
            num = float(normals[k] @ (v[k] - a))
            den = float(normals[k] @ d)
            if den == 0.0:
                if num <= tol:
                    return False
                continue
            t = num / den
            if den < 0:
                t0 = max(t0, t)
            else:
                t1 = min(t1, t)
        return t1 - t0 > tol

    def to_dict(self):
        if self.is_disc:
            return {"type": "disc", "center": list(self.center), "radius": self.radius}
        return {"type": "polygon", "vertices": [list(p) for p in self.vertices]}

    @classmethod
    def from_dict(cls, d):
        if d["type"] == "disc":
            return cls.disc(d["center"], d["radius"])
        if d["type"] == "polygon":
            return cls.polygon(d["vertices"])
        raise ValueError(f"unknown obstacle type {d['type']!r}")


# --------------------------------------------------------------- broken rays

@dataclass
class BrokenRay:
    """Straight segments ``(start, direction, length)`` joined at reflections."""

    segments: list
    reflection_points: list = field(default_factory=list)
    normals: list = field(default_factory=list)
    obstacle_ids: list = field(default_factory=list)

    @property
    def points(self):
        pts = [np.asarray(self.segments[0][0], float)]
        for s, d, L in self.segments:
            pts.append(np.asarray(s, float) + L * np.asarray(d, float))
        return np.array(pts)

    @property
    def start(self):
        return np.asarray(self.segments[0][0], float)

    @property
    def end(self):
        return self.points[-1]

    def to_path(self) -> Path:
        return Path(self.points)

    def length(self) -> float:
        return float(sum(L for _, _, L in self.segments))

    def up_to(self, point, tol: float = 1e-9) -> "BrokenRay":
        """Truncate at the first visit of ``point`` (which must lie on the ray)."""
        point = np.asarray(point, float)
        for k, (s, d, L) in enumerate(self.segments):
            s = np.asarray(s, float)
            d = np.asarray(d, float)
            t = float((point - s) @ d)
            if -tol <= t <= L + tol and np.linalg.norm(s + t * d - point) <= tol:
                segs = list(self.segments[:k]) + [(s, d, max(t, 0.0))]
                return BrokenRay(segs, self.reflection_points[:k], self.normals[:k], self.obstacle_ids[:k])
        raise ValueError(f"point {tuple(point)} is not on the ray")

    def specular_residual(self) -> float:
        """Largest ``|w' - w + 2 (n . w) n|`` over the reflections."""
        worst = 0.0
        for k, n in enumerate(self.normals):
            w = np.asarray(self.segments[k][1])
            w2 = np.asarray(self.segments[k + 1][1])
            n = np.asarray(n)
            worst = max(worst, float(np.linalg.norm(w2 - w + 2.0 * (n @ w) * n)))
        return worst


def _box_exit(p, d, box):
    x_min, x_max, y_min, y_max = box
    ts = []
    for lo, hi, pi, di in ((x_min, x_max, p[0], d[0]), (y_min, y_max, p[1], d[1])):
        if di > 0:
            ts.append((hi - pi) / di)
        elif di < 0:
            ts.append((lo - pi) / di)
    return min(ts)


def trace_broken_ray(start, direction, obstacles, box, max_reflections: int = 64) -> BrokenRay:
    """Follow a ray until it leaves ``box`` = ``(x_min, x_max, y_min, y_max)``.

    Raises
    ------
    TangencyError
        On a polygon corner hit (within 1e-9) or a grazing hit.
    TrappedRayError
        When more than ``max_reflections`` reflections occur.
    """
    p = np.asarray(start, dtype=float)
    d = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > 1e-12:
        raise ValueError("direction must be a unit vector")
    x_min, x_max, y_min, y_max = box
    if not (x_min <= p[0] <= x_max and y_min <= p[1] <= y_max):
        raise ValueError("start lies outside the box")
    for ob in obstacles:
        if ob.contains(p, strict=False, tol=0.0):
            raise ValueError("start lies inside an obstacle")
    ray = BrokenRay([])
    last = None
    while True:
        best = None
        for k, ob in enumerate(obstacles):
            if k == last:
                continue  # a convex body cannot be re-entered straight after leaving it
            h = ob.hit(p, d)
            if h is not None and (best is None or h[0] < best[0]):
                best = (h[0], h[1], h[2], k)
        t_box = _box_exit(p, d, box)
        if best is None or best[0] >= t_box:
            ray.segments.append((p.copy(), d.copy(), float(t_box)))
            return ray
        if len(ray.reflection_points) >= max_reflections:
            raise TrappedRayError(f"no exit after {max_reflections} reflections")
        t, x, n, k = best
        ray.segments.append((p.copy(), d.copy(), float(t)))
        ray.reflection_points.append(x)
        ray.normals.append(n)
        ray.obstacle_ids.append(k)
        d = d - 2.0 * float(n @ d) * n
        p = x
        last = k


# ------------------------------------------------------------ winding numbers

def _polyline_points(closed_polyline):
    if isinstance(closed_polyline, Path):
        v = closed_polyline.vertices[:, :2]
    elif isinstance(closed_polyline, BrokenRay):
        v = closed_polyline.points
    else:
        v = np.asarray(closed_polyline, dtype=float)
    if not np.allclose(v[0], v[-1], rtol=0.0, atol=1e-9):
        v = np.vstack([v, v[:1]])
    return v


def winding_numbers(closed_polyline, obstacles, tol: float = 1e-6) -> np.ndarray:
    """Integer winding of a closed polyline about each obstacle.

    The signed angles subtended at each obstacle's reference point are
    summed over the polyline edges. Open input is closed with a final edge.
    """
    v = _polyline_points(closed_polyline)
    out = np.zeros(len(obstacles), dtype=int)
    for k, ob in enumerate(obstacles):
        for a, b in zip(v[:-1], v[1:]):
            if ob.contains(a, strict=True, tol=1e-9) or ob.segment_enters(a, b):
                raise ValueError(f"contour passes through the interior of obstacle {k}")
        r = v - ob.reference_point
        cross = r[:-1, 0] * r[1:, 1] - r[:-1, 1] * r[1:, 0]
        dot = np.einsum("ij,ij->i", r[:-1], r[1:])
        w = float(np.sum(np.arctan2(cross, dot))) / (2.0 * math.pi)
        n = round(w)
        if abs(w - n) > tol:
            raise ValueError(f"winding about obstacle {k} is not an integer ({w:.3g})")
        out[k] = n
    return out


# ---------------------------------------------------------------- loop phases

def _as_path(p):
    if isinstance(p, BrokenRay):
        return p.to_path()
    if isinstance(p, Path):
        return p
    return Path(np.asarray(p, float))


def loop_phase(A, gamma, beta, constants: Constants | None = None, t: float = 0.0,
               quadrature_order: int = 8) -> float:
    """Flux along ``gamma`` minus flux along ``beta``, reduced to ``(-pi, pi]``.

    Both paths must share start and end points; the result is the flux of
    the closed contour ``gamma`` followed by ``beta`` reversed.
    """
    g = _as_path(gamma)
    b = _as_path(beta)
    if np.linalg.norm(g.start - b.start) > 1e-9 or np.linalg.norm(g.end - b.end) > 1e-9:
        raise ValueError("gamma and beta must share both endpoints")
    I1 = flux_line_integral(A, g, quadrature_order=quadrature_order, constants=constants, t=t)
    I2 = flux_line_integral(A, b, quadrature_order=quadrature_order, constants=constants, t=t)
    return float(wrap_angle(I1 - I2))


def closed_contour(gamma, beta) -> np.ndarray:
    """Vertices of ``gamma`` followed by ``beta`` reversed."""
    g = _as_path(gamma).vertices[:, :2]
    b = _as_path(beta).vertices[::-1, :2]
    return np.vstack([g, b[1:]])


# ------------------------------------------------------------ flux recovery

@dataclass(frozen=True)
class FluxMeasurement:
    """Winding vector of a closed contour and what was observed about its flux.

    Exactly one of ``phase`` (the flux modulo 2 pi) or ``cos_only`` is set.
    ``cos_only = (1 - cos a) / 2 = sin^2(a / 2)``, a quarter of the
    interference fringe ``4 sin^2(a / 2)``, is what a density measurement
    yields; it fixes ``a`` only up to sign.
    """

    winding: tuple
    phase: float | None = None
    cos_only: float | None = None

    def __post_init__(self):
        w = tuple(self.winding)
        if any(float(x) != int(x) for x in w):
            raise ValueError("winding entries must be integers")
        object.__setattr__(self, "winding", tuple(int(x) for x in w))
        if (self.phase is None) == (self.cos_only is None):
            raise ValueError("give exactly one of phase or cos_only")
        if self.cos_only is not None and not 0.0 <= self.cos_only <= 1.0:
            raise ValueError("cos_only must lie in [0, 1]")

    @classmethod
    def from_fringe(cls, winding, fringe):
        return cls(winding, cos_only=float(np.clip(fringe / 4.0, 0.0, 1.0)))

    @property
    def mode(self):
        return "phase" if self.phase is not None else "cos_only"

    def magnitude(self):
        """``|a|`` in ``[0, pi]`` from a density measurement."""
        c = min(max(self.cos_only, 0.0), 1.0 - 1e-12)
        return 2.0 * math.asin(math.sqrt(c))


@dataclass
class FluxRecovery:
    candidates: tuple
    residual: float
    runner_up: float = math.inf

    def contains(self, alpha, tol=1e-8):
        a = alpha if isinstance(alpha, FluxVector) else FluxVector(tuple(alpha))
        return any(c.close_to(a, tol) for c in self.candidates)


def _independent_rows(W):
    rows = []
    for i in range(W.shape[0]):
        trial = rows + [i]
        if np.linalg.matrix_rank(W[trial]) == len(trial):
            rows = trial
        if len(rows) == W.shape[1]:
            break
    return rows


def _solve_phases(W, phi, tol):
    """All flux classes ``a`` (mod 2 pi) with ``W a = phi`` (mod 2 pi).

    Returns a list of ``(a, residual)`` with residual below ``tol``,
    refined by least squares over all rows.
    """
    n = W.shape[1]
    rows = _independent_rows(W)
    W0 = W[rows]
    inv = np.linalg.inv(W0)
    bound = [int(np.sum(np.abs(W0[i]))) + 1 for i in range(n)]
    offsets = np.array(list(itertools.product(*[range(-b, b + 1) for b in bound])), dtype=float)
    cand = (phi[rows][None, :] + 2.0 * math.pi * offsets) @ inv.T
    cand = wrap_angle(cand)
    # deduplicate classes
    keys = np.round(cand / 1e-6).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    found = []
    for a in cand[np.sort(first)]:
        m = np.round((W @ a - phi) / (2.0 * math.pi))
        a_ls, *_ = np.linalg.lstsq(W, phi + 2.0 * math.pi * m, rcond=None)
        res = float(np.max(np.abs(wrap_angle(W @ a_ls - phi))))
        if res <= tol:
            found.append((wrap_angle(a_ls), res))
    # merge numerically equal classes
    merged = []
    for a, r in sorted(found, key=lambda x: x[1]):
        if not any(FluxVector(tuple(a)).close_to(FluxVector(tuple(b)), 1e-6) for b, _ in merged):
            merged.append((a, r))
    return merged


def recover_fluxes(measurements, n_obstacles: int, tol: float = 1e-6) -> FluxRecovery:
    """Per-obstacle fluxes, up to a global sign, from contour measurements.

    Phase-mode measurements are solved modulo 2 pi by a branch search over
    per-equation offsets. With ``cos_only`` measurements each magnitude
    ``|a|`` is given a sign, every sign pattern is solved, inconsistent
    patterns are pruned, and the surviving pair ``{a, -a}`` is returned.

    Raises
    ------
    UnderdeterminedError
        Winding matrix of deficient rank, or several sign classes fit.
    InconsistencyError
        No branch fits within ``tol``.
    """
    ms = list(measurements)
    if len(ms) < n_obstacles:
        raise UnderdeterminedError(f"{len(ms)} measurements for {n_obstacles} obstacles")
    W = np.array([m.winding for m in ms], dtype=float)
    if W.shape[1] != n_obstacles:
        raise ValueError("winding vectors do not match the number of obstacles")
    if np.linalg.matrix_rank(W) < n_obstacles:
        raise UnderdeterminedError("winding matrix is rank deficient")
    modes = {m.mode for m in ms}
    if modes == {"phase"}:
        phi = np.array([m.phase for m in ms], dtype=float)
        sols = _solve_phases(W, phi, tol)
    else:
        mags = np.array([m.phase if m.mode == "phase" else m.magnitude() for m in ms])
        free = [i for i, m in enumerate(ms) if m.mode == "cos_only" and 1e-9 < mags[i] < math.pi - 1e-9]
        sols = []
        # the pattern and its negation give negated solutions; fix the first free sign
        for signs in itertools.product((1.0, -1.0), repeat=max(len(free) - 1, 0)):
            s = np.ones(len(ms))
            if free:
                s[free[1:]] = signs
            for a, r in _solve_phases(W, s * mags, tol):
                if not any(FluxVector(tuple(a)).close_to(FluxVector(tuple(b)), 1e-6) for b, _ in sols):
                    sols.append((a, r))
        # close the set under negation before pairing
        sols = sols + [(wrap_angle(-a), r) for a, r in sols]
    if not sols:
        raise InconsistencyError(f"no flux assignment fits the measurements within {tol:g}")
    pairs = []
    for a, r in sorted(sols, key=lambda x: x[1]):
        v = FluxVector(tuple(a))
        if not any(v.close_to(p, 1e-6) or v.close_to(-p, 1e-6) for p, _ in pairs):
            pairs.append((v, r))
    best, res = pairs[0]
    runner = pairs[1][1] if len(pairs) > 1 else math.inf
    if len(pairs) > 1 and runner <= tol and runner < 4.0 * res + 1e-9:
        raise UnderdeterminedError(
            f"{len(pairs)} sign classes fit the measurements (residuals {res:.2e}, {runner:.2e})")
    canon = FluxVector(tuple(best.canonical()))
    return FluxRecovery(candidates=(canon, FluxVector(tuple(wrap_angle(-np.array(canon.values))))),
                        residual=res, runner_up=runner)


def forward_measurements(alpha, windings, mode: str = "phase"):
    """Synthetic measurements ``W alpha`` (mod 2 pi) for the given windings."""
    a = np.asarray(alpha, float)
    out = []
    for w in windings:
        total = float(np.asarray(w, float) @ a)
        if mode == "phase":
            out.append(FluxMeasurement(tuple(w), phase=float(wrap_angle(total))))
        else:
            out.append(FluxMeasurement(tuple(w), cos_only=(1.0 - math.cos(total)) / 2.0))
    return out


def write_measurements_csv(path, measurements):
    """Columns ``w1..wn, value, mode``."""
    ms = list(measurements)
    n = len(ms[0].winding)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow([f"w{k + 1}" for k in range(n)] + ["value", "mode"])
        for m in ms:
            value = m.phase if m.mode == "phase" else m.cos_only
            wr.writerow(list(m.winding) + [repr(float(value)), m.mode])


def read_measurements_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        w = tuple(int(r[k]) for k in r if k.startswith("w"))
        if r["mode"] == "phase":
            out.append(FluxMeasurement(w, phase=float(r["value"])))
        elif r["mode"] == "cos_only":
            out.append(FluxMeasurement(w, cos_only=float(r["value"])))
        else:
            raise ValueError(f"unknown measurement mode {r['mode']!r}")
    return out
