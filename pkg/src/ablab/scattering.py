"""Aharonov-Bohm scattering off a point flux.

The amplitude is a distribution on the circle of directions,

    a0(theta) = cos(alpha/2) delta(theta)
                + (i sin(alpha/2) / pi) p.v. e^{i N theta} / (1 - e^{i theta}),

with ``N = ceil(alpha / 2 pi)``. Only the smooth principal-value part is
evaluated here; the forward direction ``theta = 0`` is excluded. The
amplitude is dimensionless: absolute cross sections need a wavenumber
dependent prefactor that is not part of this normalization.
"""
from __future__ import annotations

import math

import mpmath
import numpy as np

FORWARD_CUTOFF = 1e-9
MAX_ORDER = 200.0


class ForwardSingularityError(ValueError):
    """Scattering angle too close to the forward direction."""


class UnsupportedOrderError(ValueError):
    """Bessel order beyond the supported range."""


def _check_theta(theta):
    theta = np.asarray(theta, dtype=float)
    mag = np.abs(theta)
    if np.any(mag <= FORWARD_CUTOFF) or np.any(mag > math.pi):
        raise ForwardSingularityError("need 1e-9 < |theta| <= pi (theta = 0 carries the delta part)")
    return theta


def ab_amplitude_smooth(theta, alpha):
    """Principal-value part of the point-flux scattering amplitude.

    Parameters
    ----------
    theta : float or array_like
        Scattering angle(s) with ``1e-9 < |theta| <= pi``.
    alpha : float
        Flux.

    Returns
    -------
    complex or ndarray of complex
    """
    th = _check_theta(theta)
    N = math.ceil(alpha / (2.0 * math.pi))
    val = (1j * math.sin(alpha / 2.0) / math.pi) * np.exp(1j * N * th) / (1.0 - np.exp(1j * th))
    return complex(val) if val.ndim == 0 else val


def ab_cross_section_density(theta, alpha):
    """``sin^2(alpha/2) / (4 pi^2 sin^2(theta/2))``."""
    th = _check_theta(theta)
    val = math.sin(alpha / 2.0) ** 2 / (4.0 * math.pi ** 2 * np.sin(th / 2.0) ** 2)
    return float(val) if val.ndim == 0 else val


def amplitude_table(thetas, alpha):
    """Rows ``(theta, Re a, Im a, |a|^2)`` for plotting."""
    a = np.atleast_1d(ab_amplitude_smooth(np.atleast_1d(thetas), alpha))
    th = np.atleast_1d(np.asarray(thetas, float))
    return np.column_stack([th, a.real, a.imag, np.abs(a) ** 2])


def bessel_j(nu: float, x: float, derivative: int = 0, dps: int = 30) -> float:
    """``J_nu(x)`` (or its derivative) by arbitrary-precision series evaluation."""
    if abs(nu) > MAX_ORDER:
        raise UnsupportedOrderError(f"Bessel order {nu} exceeds {MAX_ORDER:g}")
    with mpmath.workdps(dps):
        return float(mpmath.besselj(mpmath.mpf(nu), mpmath.mpf(x), derivative=derivative))


def ab_radial_mode(n: int, alpha: float, k: float, r: float, derivative: int = 0):
    """Partial-wave pair ``(J_{n+alpha}(kr), J_{-n-alpha}(kr))``.

    The flux enters the angular momentum as ``n + alpha``; the first entry
    is regular at the flux line, the second generally singular. With
    ``derivative`` the derivatives with respect to ``kr`` are returned.

    Raises
    ------
    UnsupportedOrderError
        If ``|n + alpha| > 200``.
    """
    if not k > 0 or not r > 0:
        raise ValueError("need k > 0 and r > 0")
    nu = n + alpha
    if abs(nu) > MAX_ORDER:
        raise UnsupportedOrderError(f"Bessel order {nu} exceeds {MAX_ORDER:g}")
    x = k * r
    # accuracy of the series falls with x; add digits for cancellation
    dps = 30 + int(x / 2)
    return bessel_j(nu, x, derivative, dps), bessel_j(-nu, x, derivative, dps)
