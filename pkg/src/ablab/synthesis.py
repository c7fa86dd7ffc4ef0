"""Vector potentials realizing a prescribed compactly supported magnetic field.

Two constructions are provided:

* :func:`synthesize_compact_potential` for fields of zero total flux. In
  Fourier space the field is written as ``B~ = xi_1 B~_1 + xi_2 B~_2`` with
  ``B~_j(xi) = int_0^1 dB~/dxi_j (t xi) dt`` and the potential is
  ``A~_1 = i B~_2``, ``A~_2 = -i B~_1``. In position space this is the
  outward radial integral ``A(x) = (x_2, -x_1) int_1^inf s B(s x) ds``,
  which vanishes wherever the ray beyond ``x`` misses the support.
* :func:`split_flux_potential` for fields with net flux: a point-flux tail
  plus a compact core.

The transforms are direct sums over grid nodes evaluated on the DFT
frequency box of the grid. They are separable, so each quadrature node in
``t`` costs two dense matrix products.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import Constants, VectorPotential
from .grid import DomainError, Grid2D
from .potentials import ab_potential, grid_vector_potential, zero_potential
from .smooth import bump


@dataclass
class ScalarGridField:
    """Real field sampled on the nodes of ``grid`` (shape ``(ny, nx)``)."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values have shape {self.values.shape}, grid wants {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @classmethod
    def from_function(cls, grid: Grid2D, func):
        X, Y = grid.mesh()
        return cls(grid, func(X, Y))

    @property
    def origin(self):
        return self.grid.origin

    @property
    def spacing(self):
        return self.grid.h

    @property
    def nx(self):
        return self.grid.nx

    @property
    def ny(self):
        return self.grid.ny

    def total(self) -> float:
        """Riemann sum ``sum B h^2``."""
        return float(np.sum(self.values) * self.grid.h ** 2)

    def l1(self) -> float:
        return float(np.sum(np.abs(self.values)) * self.grid.h ** 2)


@dataclass(frozen=True)
class SupportDisc:
    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("support radius must be positive")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    def check_inside(self, grid: Grid2D):
        x_min, x_max, y_min, y_max = grid.extent
        cx, cy = self.center
        r = self.radius
        if cx - r < x_min or cx + r > x_max or cy - r < y_min or cy + r > y_max:
            raise DomainError("support disc is not contained in the grid")

    def contains(self, X, Y):
        return (X - self.center[0]) ** 2 + (Y - self.center[1]) ** 2 <= self.radius ** 2


def _components(A, grid=None):
    if isinstance(A, VectorPotential):
        if A.samples is not None:
            return A.grid, np.asarray(A.samples[0], float), np.asarray(A.samples[1], float)
        if grid is None:
            raise ValueError("an analytic potential needs a grid to be sampled on")
        A1, A2 = A.sample(grid)
        return grid, np.asarray(A1, float), np.asarray(A2, float)
    A1, A2 = A
    if grid is None:
        raise ValueError("raw component arrays need a grid")
    return grid, np.asarray(A1, float), np.asarray(A2, float)


def _wavenumbers(n, h):
    """DFT wavenumbers and the derivative symbol (zero at an unpaired Nyquist mode)."""
    k = 2.0 * math.pi * np.fft.fftfreq(n, d=h)
    deriv = k.copy()
    if n % 2 == 0:
        deriv[n // 2] = 0.0
    return k, deriv


def curl_2d(A, grid: Grid2D | None = None, method: str = "centered") -> ScalarGridField:
    """Scalar curl ``dA2/dx1 - dA1/dx2`` of a grid-sampled potential.

    Parameters
    ----------
    A : VectorPotential or tuple of arrays
        Grid-sampled potential, or an analytic one together with ``grid``.
    method : {"centered", "spectral"}
        ``"centered"`` uses second-order centered differences in the
        interior and one-sided second-order stencils on the edges.
        ``"spectral"`` differentiates the trigonometric interpolant (the
        field is treated as periodic; an unpaired Nyquist mode has zero
        derivative); it is the derivative matched to the Fourier
        construction below.
    """
    grid, A1, A2 = _components(A, grid)
    h = grid.h
    if method == "centered":
        d2_dx = np.gradient(A2, h, axis=1, edge_order=2)
        d1_dy = np.gradient(A1, h, axis=0, edge_order=2)
        return ScalarGridField(grid, d2_dx - d1_dy)
    if method == "spectral":
        _, dx = _wavenumbers(grid.nx, h)
        _, dy = _wavenumbers(grid.ny, h)
        F1 = np.fft.fft2(A1)
        F2 = np.fft.fft2(A2)
        curl = np.fft.ifft2(1j * dx[None, :] * F2 - 1j * dy[:, None] * F1)
        return ScalarGridField(grid, curl.real)
    raise ValueError(f"unknown curl method {method!r}")


def _phase_matrix(k, coords, scale):
    # rows: wavenumber, columns: node
    return np.exp(-1j * scale * np.outer(k, coords))


def _close_nyquist(At1, At2, B, xs, ys, kx, ky, dx, dy, h):
    """Re-solve the unpaired Nyquist lines with the node-derivative symbol.

    Node samples cannot carry the odd half of a Nyquist mode, so on the line
    ``kx = pi/h`` only ``-i ky A1`` reaches the curl (and symmetrically on
    ``ky = pi/h``). There the field is assigned to that single component.
    Modes with both derivative symbols zero stay empty.
    """
    nyq_x = np.flatnonzero((dx == 0) & (kx != 0))
    nyq_y = np.flatnonzero((dy == 0) & (ky != 0))
    if nyq_x.size == 0 and nyq_y.size == 0:
        return
    Bh = (np.exp(-1j * np.outer(ky, ys)) @ B @ np.exp(-1j * np.outer(kx, xs)).T) * h * h
    for i in nyq_x:
        col = np.zeros_like(Bh[:, i])
        ok = dy != 0
        col[ok] = 1j * Bh[ok, i] / dy[ok]
        At1[:, i] = col
        At2[:, i] = 0.0
    for j in nyq_y:
        row = np.zeros_like(Bh[j, :])
        ok = dx != 0
        row[ok] = -1j * Bh[j, ok] / dx[ok]
        At2[j, :] = row
        At1[j, :] = 0.0


def synthesize_compact_potential(B: ScalarGridField, support: SupportDisc, t_nodes: int = 16,
                                 t_panels: int | None = None, flux_rtol: float = 1e-8,
                                 restrict: bool = False) -> VectorPotential:
    """Compactly supported potential with ``curl A = B`` for zero-flux ``B``.

    Parameters
    ----------
    B : ScalarGridField
        Field supported inside ``support``; its total flux must vanish.
    support : SupportDisc
        Disc containing the support of ``B``. Its center is the base point
        of the radial construction.
    t_nodes : int
        Gauss-Legendre nodes per panel of the ``t`` integral.
    t_panels : int, optional
        Number of equal panels on ``[0, 1]``. By default enough panels are
        used that each one sees at most about ``t_nodes / 2`` radians of
        oscillation at the highest grid frequency.
    restrict : bool
        Zero the result outside the support disc. The continuum
        construction vanishes there exactly; on the grid the band-limited
        reconstruction leaks at the level of the aliasing error of ``B``,
        and restricting trades that leakage for a curl defect of the same
        size along the disc boundary.

    Returns
    -------
    VectorPotential
        Grid-sampled potential on ``B.grid``.

    Raises
    ------
    ValueError
        If the total flux is not zero; use :func:`split_flux_potential`.
    """
    grid = B.grid
    support.check_inside(grid)
    X, Y = grid.mesh()
    outside = ~support.contains(X, Y)
    scale = max(np.max(np.abs(B.values)), np.finfo(float).tiny)
    if np.any(np.abs(B.values[outside]) > 1e-12 * scale):
        raise ValueError("B does not vanish outside the support disc")
    if abs(B.total()) >= flux_rtol * max(B.l1(), np.finfo(float).tiny):
        raise ValueError(f"B has total flux {B.total():.3e}; a field with net flux needs "
                         "split_flux_potential, which removes the flux with a point-flux tail")
    if not np.any(B.values):
        z = np.zeros(grid.shape)
        return grid_vector_potential(grid, z, z)

    h = grid.h
    xs = grid.xs - support.center[0]
    ys = grid.ys - support.center[1]
    kx, dx = _wavenumbers(grid.nx, h)
    ky, dy = _wavenumbers(grid.ny, h)

    if t_panels is None:
        kmax = math.hypot(np.max(np.abs(kx)), np.max(np.abs(ky)))
        t_panels = max(1, math.ceil(kmax * support.radius / (0.5 * t_nodes)))
    gl_x, gl_w = np.polynomial.legendre.leggauss(int(t_nodes))
    edges = np.linspace(0.0, 1.0, int(t_panels) + 1)
    ts = np.concatenate([0.5 * (a + b) + 0.5 * (b - a) * gl_x for a, b in zip(edges[:-1], edges[1:])])
    ws = np.concatenate([0.5 * (b - a) * gl_w for a, b in zip(edges[:-1], edges[1:])])

    f1 = -1j * xs[None, :] * B.values  # transform of -i x_1 B is dB~/dxi_1
    f2 = -1j * ys[:, None] * B.values
    Bt1 = np.zeros((grid.ny, grid.nx), complex)
    Bt2 = np.zeros((grid.ny, grid.nx), complex)
    for t, w in zip(ts, ws):
        Ex = _phase_matrix(kx, xs, t)
        Ey = _phase_matrix(ky, ys, t)
        Bt1 += w * (Ey @ f1 @ Ex.T)
        Bt2 += w * (Ey @ f2 @ Ex.T)
    Bt1 *= h * h
    Bt2 *= h * h

    At1 = 1j * Bt2
    At2 = -1j * Bt1
    _close_nyquist(At1, At2, B.values, xs, ys, kx, ky, dx, dy, h)
    Ex = _phase_matrix(kx, xs, 1.0)
    Ey = _phase_matrix(ky, ys, 1.0)
    norm = 1.0 / (grid.nx * grid.ny * h * h)
    A1 = (Ey.conj().T @ At1 @ Ex.conj()).real * norm
    A2 = (Ey.conj().T @ At2 @ Ex.conj()).real * norm
    if restrict:
        A1[outside] = 0.0
        A2[outside] = 0.0
    return grid_vector_potential(grid, A1, A2)


def mollifier(grid: Grid2D, center, radius: float) -> ScalarGridField:
    """Bump ``exp(1 - 1/(1 - r^2/eps^2))`` normalized to unit discrete mass."""
    X, Y = grid.mesh()
    r2 = ((X - center[0]) ** 2 + (Y - center[1]) ** 2) / radius ** 2
    b = bump(r2)
    mass = np.sum(b) * grid.h ** 2
    if mass <= 0:
        raise ValueError("mollifier radius is below the grid resolution")
    return ScalarGridField(grid, b / mass)


def split_flux_potential(B: ScalarGridField, support: SupportDisc, mollifier_radius: float | None = None,
                         constants: Constants | None = None, t_nodes: int = 16,
                         restrict_core: bool = True):
    """Split ``B`` into a point-flux tail and a compactly supported core.

    With ``alpha0 = (e / hbar c) sum B h^2`` the tail is the point-flux
    potential of flux ``alpha0`` at the coordinate origin and the core is
    :func:`synthesize_compact_potential` applied to ``B - flux * b_eps``,
    where ``b_eps`` is a unit-mass bump of radius ``mollifier_radius``
    centered at the origin (default four grid spacings). With
    ``restrict_core`` the core is cut to the support disc, so loops outside
    the disc see exactly the tail flux.

    Returns
    -------
    tail : VectorPotential
        Analytic point-flux potential (zero when the total flux is zero).
    core : VectorPotential
        Grid-sampled compact potential.
    alpha0 : float
        Flux carried by the tail.
    """
    c = constants or Constants()
    grid = B.grid
    eps = 4.0 * grid.h if mollifier_radius is None else float(mollifier_radius)
    cx, cy = support.center
    if math.hypot(cx, cy) + eps > support.radius:
        raise ValueError("mollifier disc around the origin is not inside the support disc")
    flux = B.total()
    if abs(flux) < 1e-15 * max(B.l1(), np.finfo(float).tiny):
        flux = 0.0
    alpha0 = c.flux_scale * flux
    if flux == 0.0:
        residual = B
        tail = zero_potential()
    else:
        b = mollifier(grid, (0.0, 0.0), eps)
        residual = ScalarGridField(grid, B.values - flux * b.values)
        tail = ab_potential(alpha0, constants=c)
        if residual.l1() <= 1e-12 * B.l1():
            residual = ScalarGridField(grid, np.zeros(grid.shape))
    core = synthesize_compact_potential(residual, support, t_nodes=t_nodes, restrict=restrict_core)
    return tail, core, alpha0
