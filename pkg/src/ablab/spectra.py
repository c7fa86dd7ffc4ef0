"""Magnetic Schroedinger operator on a flat 2-torus by plane-wave Galerkin.

For a curl-free potential on the torus ``R^2 / L`` the gauge class is fixed
by the two fluxes ``alpha_j`` around the lattice generators, and a constant
representative ``A`` with ``A . e_j = alpha_j`` can be used. The operator
``(-i grad - A)^2 + V`` is diagonal in the plane waves ``exp(i k_m . x)``,
``k_m . e_j = 2 pi m_j``, apart from the coupling by the Fourier coefficients
of ``V``:

    H[m, m'] = (2 pi m - alpha)^T G^{-1} (2 pi m - alpha) delta_{mm'} + V_{m - m'},

with ``G_ij = e_i . e_j`` the Gram matrix of the lattice basis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh


def _round_half_away(x):
    return math.copysign(math.floor(abs(x) + 0.5), x)


@dataclass
class TorusOperator:
    """Galerkin model of the torus operator.

    Parameters
    ----------
    alpha : tuple of float
        Fluxes around the two lattice generators.
    lattice : 2x2 array_like
        Rows are the basis vectors ``e1``, ``e2``.
    potential : dict
        Fourier coefficients ``{(n1, n2): V_n}`` on the dual lattice; must
        satisfy ``V_{-n} = conj(V_n)`` so that ``V`` is real.
    cutoff : int
        Retain plane waves with ``max(|m1 - c1|, |m2 - c2|) <= cutoff``,
        where ``c`` is ``alpha / 2 pi`` rounded half away from zero. The
        window follows ``alpha`` so that 2 pi shifts map it onto itself.
    """

    alpha: tuple
    lattice: np.ndarray = field(default_factory=lambda: np.eye(2))
    potential: dict = field(default_factory=dict)
    cutoff: int = 8

    def __post_init__(self):
        self.alpha = tuple(float(a) for a in self.alpha)
        self.lattice = np.asarray(self.lattice, dtype=float)
        if self.lattice.shape != (2, 2) or abs(np.linalg.det(self.lattice)) < 1e-12:
            raise ValueError("lattice basis must be two independent planar vectors")
        if int(self.cutoff) < 1:
            raise ValueError("cutoff must be at least 1")
        self.cutoff = int(self.cutoff)
        pot = {}
        for key, val in self.potential.items():
            pot[(int(key[0]), int(key[1]))] = complex(val)
        for (n1, n2), v in pot.items():
            partner = pot.get((-n1, -n2), 0.0)
            if abs(partner - np.conj(v)) > 1e-14 * max(1.0, abs(v)):
                raise ValueError("potential coefficients must satisfy V(-n) = conj V(n)")
        self.potential = pot

    @property
    def gram(self):
        return self.lattice @ self.lattice.T

    def modes(self):
        """Integer dual-lattice labels ``m`` (shape ``(M, 2)``)."""
        c = [_round_half_away(a / (2.0 * math.pi)) for a in self.alpha]
        r = np.arange(-self.cutoff, self.cutoff + 1)
        m1, m2 = np.meshgrid(r + c[0], r + c[1], indexing="ij")
        return np.column_stack([m1.ravel(), m2.ravel()]).astype(int)

    @property
    def dimension(self):
        return (2 * self.cutoff + 1) ** 2

    def matrix(self):
        m = self.modes()
        q = 2.0 * math.pi * m - np.asarray(self.alpha)
        Ginv = np.linalg.inv(self.gram)
        H = np.diag(np.einsum("ij,jk,ik->i", q, Ginv, q)).astype(complex)
        if self.potential:
            index = {tuple(v): i for i, v in enumerate(m)}
            for (n1, n2), v in self.potential.items():
                for i, mi in enumerate(m):
                    j = index.get((mi[0] - n1, mi[1] - n2))
                    if j is not None:
                        H[i, j] += v
        return H


def torus_spectrum(op: TorusOperator, n_eigs: int = 10) -> np.ndarray:
    """The ``n_eigs`` smallest eigenvalues, ascending."""
    if n_eigs < 1 or n_eigs > op.dimension:
        raise ValueError(f"n_eigs must lie in [1, {op.dimension}]")
    H = op.matrix()
    return eigh(H, eigvals_only=True, subset_by_index=[0, n_eigs - 1])


def closed_form_spectrum(alpha, n_eigs: int = 10, lattice=None, reach: int = 12) -> np.ndarray:
    """Free spectrum ``(2 pi m - alpha)^T G^{-1} (2 pi m - alpha)`` by enumeration."""
    E = np.eye(2) if lattice is None else np.asarray(lattice, float)
    Ginv = np.linalg.inv(E @ E.T)
    r = np.arange(-reach, reach + 1)
    m1, m2 = np.meshgrid(r, r, indexing="ij")
    q = 2.0 * math.pi * np.column_stack([m1.ravel(), m2.ravel()]) - np.asarray(alpha, float)
    vals = np.einsum("ij,jk,ik->i", q, Ginv, q)
    return np.sort(vals)[:n_eigs]


@dataclass(frozen=True)
class FluxSignature:
    indistinguishable: bool
    max_difference: float


def spectral_flux_signature(spectrum_a, spectrum_b, tol: float = 1e-10) -> FluxSignature:
    """Compare two sorted spectra elementwise."""
    a = np.asarray(spectrum_a, float)
    b = np.asarray(spectrum_b, float)
    if a.shape != b.shape:
        raise ValueError("spectra differ in length")
    diff = float(np.max(np.abs(a - b), initial=0.0))
    return FluxSignature(diff < tol, diff)


def spectrum_sweep(alpha1_values, alpha2_values, n_eigs=6, cutoff=8, potential=None, lattice=None):
    """Rows ``(alpha1, alpha2, lambda_1 .. lambda_k)`` over a grid of fluxes."""
    rows = []
    for a1 in alpha1_values:
        for a2 in alpha2_values:
            op = TorusOperator((a1, a2), np.eye(2) if lattice is None else lattice, dict(potential or {}), cutoff)
            rows.append([a1, a2, *torus_spectrum(op, n_eigs)])
    return np.array(rows)
