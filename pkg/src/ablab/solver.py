"""Crank-Nicolson evolution of the magnetic Schrodinger equation on a grid.

The lattice operator is the 5-point magnetic Laplacian with Peierls link
factors. For the link from node ``a`` to its neighbour ``b`` the phase is
``theta = (e / hbar c) int_a^b A . dl`` and the matrix entry in row ``b``,
column ``a`` is ``-(hbar^2 / 2 m h^2) exp(i theta)``; the transposed entry is
its conjugate, so the operator is Hermitian by construction and a gauge
change ``u -> exp(i chi) u`` corresponds exactly to
``theta -> theta + chi_b - chi_a``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, bicgstab, splu

from numpy.polynomial.legendre import leggauss

from .fields import (SINGULAR_CLEARANCE, Constants, ScalarPotential, SingularPathError,
                     VectorPotential, link_phases)
from .grid import Grid2D, WaveState
from .masks import as_generator
from .potentials import zero_potential, zero_scalar
from .smooth import plateau

__all__ = [
    "SolverError", "DiscreteHamiltonian", "Diagnostics", "build_hamiltonian",
    "step_crank_nicolson", "evolve", "go_packet", "gaussian_packet",
]


class SolverError(RuntimeError):
    """Linear solve failed to converge; carries the final relative residual."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass
class DiscreteHamiltonian:
    """Lattice Hamiltonian: link phases, on-site energies and a mask snapshot."""

    grid: Grid2D
    theta_x: np.ndarray
    theta_y: np.ndarray
    onsite: np.ndarray
    mask: np.ndarray
    constants: Constants = field(default_factory=Constants)
    _matrix: sp.csr_matrix | None = field(default=None, repr=False)

    @property
    def hopping(self) -> float:
        c = self.constants
        return c.hbar ** 2 / (2.0 * c.mass * self.grid.h ** 2)

    @property
    def matrix(self) -> sp.csr_matrix:
        if self._matrix is None:
            self._matrix = self._assemble()
        return self._matrix

    def _assemble(self):
        g = self.grid
        nx, ny = g.nx, g.ny
        idx = np.arange(g.size).reshape(ny, nx)
        free = ~self.mask
        t = self.hopping
        rows, cols, vals = [], [], []
        # horizontal links (j, i) -> (j, i + 1)
        keep = free[:, :-1] & free[:, 1:]
        a, b = idx[:, :-1][keep], idx[:, 1:][keep]
        hv = -t * np.exp(1j * self.theta_x[keep])
        rows += [b, a]
        cols += [a, b]
        vals += [hv, np.conj(hv)]
        keep = free[:-1, :] & free[1:, :]
        a, b = idx[:-1, :][keep], idx[1:, :][keep]
        hv = -t * np.exp(1j * self.theta_y[keep])
        rows += [b, a]
        cols += [a, b]
        vals += [hv, np.conj(hv)]
        diag = np.where(free, 4.0 * t + self.onsite, 1.0).ravel()
        rows.append(idx.ravel())
        cols.append(idx.ravel())
        vals.append(diag.astype(complex))
        M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(g.size, g.size))
        M.sort_indices()
        return M

    def apply(self, u):
        """``H u`` for a field of shape ``(ny, nx)``."""
        return (self.matrix @ np.asarray(u, complex).ravel()).reshape(self.grid.shape)

    def gauge_transformed(self, chi) -> "DiscreteHamiltonian":
        """Operator for the gauged wave ``exp(i chi) u`` with consistent link phases."""
        chi = np.asarray(chi, dtype=float)
        tx = self.theta_x + chi[:, 1:] - chi[:, :-1]
        ty = self.theta_y + chi[1:, :] - chi[:-1, :]
        return DiscreteHamiltonian(self.grid, tx, ty, self.onsite.copy(), self.mask.copy(), self.constants)

    def hermiticity_defect(self) -> float:
        M = self.matrix
        D = M - M.conj().T
        return float(np.max(np.abs(D.data), initial=0.0))


def _check_singularities(grid: Grid2D, A: VectorPotential, mask):
    for c in A.singular_points:
        cx, cy = c
        if not grid.contains(cx, cy, pad=2 * grid.h):
            continue
        X, Y = grid.mesh()
        near = (X - cx) ** 2 + (Y - cy) ** 2 <= (1.5 * grid.h) ** 2
        if np.any(near & ~mask):
            raise ValueError(f"singular point {tuple(c)} of the vector potential is not covered by the mask")


def build_hamiltonian(grid: Grid2D, A: VectorPotential | None = None, V: ScalarPotential | None = None,
                      mask=None, constants: Constants | None = None, t: float = 0.0,
                      link_rule="auto") -> DiscreteHamiltonian:
    """Assemble the lattice Hamiltonian at time ``t``.

    Parameters
    ----------
    grid : Grid2D
    A, V : potentials, optional (zero by default)
    mask : bool array, mask generator or None
    constants : Constants, optional
    t : float
    link_rule : {"auto", "exact", "midpoint"} or int
        How link phases are integrated; see :func:`ablab.fields.link_phases`.

    Raises
    ------
    ValueError
        If a singular point of ``A`` is not masked or a sampled value is not finite.
    """
    c = constants or Constants()
    A = A or zero_potential()
    m = as_generator(mask)(grid, t) if not isinstance(mask, np.ndarray) else mask.astype(bool)
    _check_singularities(grid, A, m)
    with np.errstate(divide="ignore", invalid="ignore"):
        tx, ty = link_phases(grid, A, t, c, link_rule)
        onsite = np.zeros(grid.shape) if V is None else c.charge * np.asarray(V.sample(grid, t), float)
    free = ~m
    bad = (~np.isfinite(onsite) & free).any()
    bad |= (~np.isfinite(tx) & free[:, :-1] & free[:, 1:]).any()
    bad |= (~np.isfinite(ty) & free[:-1, :] & free[1:, :]).any()
    if bad:
        raise ValueError("potential is not finite on the unmasked region")
    tx = np.where(np.isfinite(tx), tx, 0.0)
    ty = np.where(np.isfinite(ty), ty, 0.0)
    onsite = np.where(free & np.isfinite(onsite), onsite, 0.0)
    return DiscreteHamiltonian(grid, tx, ty, onsite, m, c)


class _CNSystem:
    """Factorised or preconditioned ``I + i dt/(2 hbar) H`` for repeated solves."""

    def __init__(self, H: DiscreteHamiltonian, dt: float, method: str = "iterative",
                 rtol: float = 1e-12, maxiter: int = 500):
        self.H = H
        self.delta = dt / (2.0 * H.constants.hbar)
        M = H.matrix
        n = M.shape[0]
        eye = sp.identity(n, dtype=complex, format="csr")
        self.lhs = (eye + 1j * self.delta * M).tocsr()
        self.rhs = (eye - 1j * self.delta * M).tocsr()
        self.method = method
        self.rtol = rtol
        self.maxiter = maxiter
        if method == "direct":
            self._lu = splu(self.lhs.tocsc())
        elif method == "iterative":
            inv = 1.0 / self.lhs.diagonal()
            self._precond = LinearOperator((n, n), matvec=lambda r: inv * r, dtype=complex)
        else:
            raise ValueError(f"unknown linear solver {method!r}")
        self.last_iterations = 0
        self.last_residual = 0.0

    def solve(self, u):
        b = self.rhs @ u
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            self.last_iterations, self.last_residual = 0, 0.0
            return np.zeros_like(b)
        if self.method == "direct":
            x = self._lu.solve(b)
            self.last_iterations = 1
        else:
            count = [0]

            def cb(_):
                count[0] += 1

            x, info = bicgstab(self.lhs, b, x0=u, rtol=self.rtol, atol=0.0, maxiter=self.maxiter,
                               M=self._precond, callback=cb)
            self.last_iterations = count[0]
            if info != 0:
                res = float(np.linalg.norm(self.lhs @ x - b) / bnorm)
                raise SolverError("Crank-Nicolson solve did not converge", res, count[0])
        self.last_residual = float(np.linalg.norm(self.lhs @ x - b) / bnorm)
        return x


def step_crank_nicolson(state: WaveState, H: DiscreteHamiltonian, dt: float,
                        method: str = "iterative", rtol: float = 1e-12, maxiter: int = 500) -> WaveState:
    """One Crank-Nicolson step ``(I + i dt H / 2 hbar) u1 = (I - i dt H / 2 hbar) u0``.

    Raises
    ------
    SolverError
        If the iterative solve does not reach ``rtol`` within ``maxiter``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    system = _CNSystem(H, dt, method, rtol, maxiter)
    u0 = np.where(H.mask, 0.0, state.values).ravel()
    u1 = system.solve(u0).reshape(state.grid.shape)
    return WaveState(state.grid, u1, state.time + dt, H.mask.copy())


@dataclass
class Diagnostics:
    """Time series recorded by :func:`evolve`."""

    times: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    absorbed: float = 0.0
    absorbed_series: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    max_residual: float = 0.0
    probes: dict = field(default_factory=dict)

    def to_csv_rows(self):
        header = ["time", "norm", "absorbed", "iterations"] + [f"probe_{k}" for k in self.probes]
        rows = []
        for n, t in enumerate(self.times):
            row = [t, self.norms[n], self.absorbed_series[n], self.iterations[n]]
            row += [abs(v[n]) for v in self.probes.values()]
            rows.append(row)
        return header, rows


def evolve(state: WaveState, A: VectorPotential | None = None, V: ScalarPotential | None = None,
           mask_generator=None, t_final: float = 1.0, dt: float = 0.01,
           constants: Constants | None = None, link_rule="auto", method: str = "iterative",
           scalar_mode: str = "split", probes: dict | None = None, callback=None):
    """Evolve ``state`` to ``t_final``.

    The mask is re-evaluated at each step midpoint. Nodes that become
    masked are zeroed and their norm is added to ``absorbed``. With
    ``scalar_mode="split"`` the electric potential enters through half-step
    phase factors ``exp(-(i e / 2 hbar) int V dt)`` around the kinetic
    Crank-Nicolson step, so a field-free component with ``V = V(t)``
    acquires exactly ``exp(-(i e / hbar) int V dt)``. ``scalar_mode="implicit"``
    puts ``eV`` on the diagonal of the Crank-Nicolson operator instead.

    Parameters
    ----------
    probes : dict, optional
        ``name -> (j, i)`` node indices whose values are recorded each step.
    callback : callable, optional
        ``callback(state)`` after every step.

    Returns
    -------
    (WaveState, Diagnostics)
    """
    c = constants or Constants()
    if not t_final > state.time:
        raise ValueError("t_final must exceed the current time")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if scalar_mode not in ("split", "implicit"):
        raise ValueError("scalar_mode must be 'split' or 'implicit'")
    A = A or zero_potential()
    V = V or zero_scalar()
    gen = as_generator(mask_generator)
    grid = state.grid
    X, Y = grid.mesh()
    n_steps = max(1, int(math.ceil((t_final - state.time) / dt - 1e-9)))
    h_dt = (t_final - state.time) / n_steps
    u = state.values.copy()
    t = state.time
    diag = Diagnostics()
    probes = probes or {}
    for name in probes:
        diag.probes[name] = []
    static_mask = getattr(gen, "static", False)
    prev_mask = None
    system = None
    key = None
    for _ in range(n_steps):
        tm = t + 0.5 * h_dt
        mask = prev_mask if (static_mask and prev_mask is not None) else np.asarray(gen(grid, tm), bool)
        newly = mask & (u != 0)
        if newly.any():
            diag.absorbed += float(np.sum(np.abs(u[newly]) ** 2)) * grid.h ** 2
            u[newly] = 0.0
        mask_changed = prev_mask is None or not np.array_equal(mask, prev_mask)
        rebuild = system is None or mask_changed or A.time_dependent or (
            scalar_mode == "implicit" and V.time_dependent)
        if rebuild:
            H = build_hamiltonian(grid, A, V if scalar_mode == "implicit" else None, mask, c, tm, link_rule)
            system = _CNSystem(H, h_dt, method)
        prev_mask = mask
        if scalar_mode == "split":
            phase = c.potential_scale * np.asarray(V.integrate_time(X, Y, t, t + h_dt), float)
            half = np.exp(-0.5j * phase)
            u = half * u
        u = system.solve(u.ravel()).reshape(grid.shape)
        if scalar_mode == "split":
            u = half * u
        u[mask] = 0.0
        t = t + h_dt
        diag.iterations.append(system.last_iterations)
        diag.max_residual = max(diag.max_residual, system.last_residual)
        diag.times.append(t)
        diag.norms.append(float(np.sqrt(np.sum(np.abs(u) ** 2)) * grid.h))
        diag.absorbed_series.append(diag.absorbed)
        for name, (j, i) in probes.items():
            diag.probes[name].append(complex(u[j, i]))
        if callback is not None:
            callback(WaveState(grid, u, t, mask))
    return WaveState(grid, u, t, prev_mask), diag


def _unit(direction):
    if np.ndim(direction) == 0:
        return np.array([math.cos(direction), math.sin(direction)])
    d = np.asarray(direction, dtype=float)
    n = np.linalg.norm(d)
    if n == 0:
        raise ValueError("direction must be nonzero")
    return d / n


def _backward_phase(grid, A, X, Y, theta, constants, order):
    """``(e / hbar c) int_0^L theta . A(x - s theta) ds`` up to the grid exit, per point."""
    x_min, x_max, y_min, y_max = grid.extent
    with np.errstate(divide="ignore"):
        lx = np.where(theta[0] > 0, (X - x_min) / theta[0], np.where(theta[0] < 0, (X - x_max) / theta[0], np.inf))
        ly = np.where(theta[1] > 0, (Y - y_min) / theta[1], np.where(theta[1] < 0, (Y - y_max) / theta[1], np.inf))
    L = np.maximum(np.minimum(lx, ly), 0.0)
    for c in A.singular_points:
        # reject rays passing through a flux line
        rx, ry = c[0] - X, c[1] - Y
        s = np.clip(-(rx * theta[0] + ry * theta[1]), 0.0, L)
        dist = np.hypot(rx + s * theta[0], ry + s * theta[1])
        if np.any(dist <= SINGULAR_CLEARANCE):
            raise SingularPathError(f"backward ray passes through singular point {tuple(c)}")
    if A.segment_integral is not None:
        val = A.segment_integral(X, Y, X - L * theta[0], Y - L * theta[1], 0.0)
        # the segment runs backwards, the phase integral forwards
        return -constants.flux_scale * np.asarray(val, float)
    nodes, weights = leggauss(order)
    panel = grid.h
    n_panels = np.maximum(1, np.ceil(L / panel)).astype(int)
    total = np.zeros(X.shape)
    n_max = int(n_panels.max(initial=1))
    for p in range(n_max):
        active = p < n_panels
        lo = p * L / n_panels
        hi = (p + 1) * L / n_panels
        for s, w in zip(nodes, weights):
            sp_ = 0.5 * (lo + hi) + 0.5 * (hi - lo) * s
            a1, a2 = A(X - sp_ * theta[0], Y - sp_ * theta[1], 0.0)
            total += np.where(active, 0.5 * (hi - lo) * w * (theta[0] * a1 + theta[1] * a2), 0.0)
    return constants.flux_scale * total


def go_packet(grid: Grid2D, x0, direction, k: float, delta1: float, A: VectorPotential | None = None,
              constants: Constants | None = None, length: float | None = None,
              phase_origin=(0.0, 0.0), mask=None, quadrature_order: int = 8) -> WaveState:
    """Geometric-optics packet travelling along ``x0 + s theta``.

    ``u = exp(i (m k / hbar)(x - phase_origin) . theta) chi0(((x - x0) . theta_perp) / delta1)
    [chi0(((x - x0) . theta) / length)] exp(i (e / hbar c) int_0^inf theta . A(x - s theta) ds)``

    ``chi0`` equals 1 on ``[-1/2, 1/2]`` and vanishes outside ``[-1, 1]``.
    Without ``length`` the packet is a beam along the whole line through
    ``x0``; with it the packet is centred at ``x0``. The backward ray
    integral is truncated where the ray leaves the grid, which is exact
    once the support of ``A`` lies inside the grid.

    Raises
    ------
    ValueError
        If ``k <= 0`` or the envelope overlaps the mask.
    SingularPathError
        If a backward ray passes through a flux line.
    """
    if not k > 0:
        raise ValueError("k must be positive")
    c = constants or Constants()
    A = A or zero_potential()
    theta = _unit(direction)
    perp = np.array([-theta[1], theta[0]])
    X, Y = grid.mesh()
    dx, dy = X - x0[0], Y - x0[1]
    env = plateau((dx * perp[0] + dy * perp[1]) / delta1)
    if length is not None:
        env = env * plateau((dx * theta[0] + dy * theta[1]) / length)
    support = env != 0
    if mask is not None:
        m = as_generator(mask)(grid, 0.0) if not isinstance(mask, np.ndarray) else mask
        if np.any(support & m):
            raise ValueError("packet envelope overlaps an obstacle")
    px = (X - phase_origin[0]) * theta[0] + (Y - phase_origin[1]) * theta[1]
    u = np.zeros(grid.shape, dtype=complex)
    u[support] = env[support] * np.exp(1j * (c.mass * k / c.hbar) * px[support])
    if support.any():
        ph = _backward_phase(grid, A, X[support], Y[support], theta, c, quadrature_order)
        u[support] *= np.exp(1j * ph)
    return WaveState(grid, u, 0.0)


def gaussian_packet(grid: Grid2D, center, momentum, width: float, constants: Constants | None = None) -> WaveState:
    """Normalised Gaussian ``exp(-|x - c|^2 / (2 w^2) + i p . x / hbar)``."""
    c = constants or Constants()
    X, Y = grid.mesh()
    u = np.exp(-((X - center[0]) ** 2 + (Y - center[1]) ** 2) / (2 * width ** 2)
               + 1j * (momentum[0] * (X - center[0]) + momentum[1] * (Y - center[1])) / c.hbar)
    s = WaveState(grid, u)
    s.values /= s.norm()
    return s
