"""Smooth cutoff functions shared by the potential and packet builders."""
import numpy as np


def _psi(s):
    # exp(-1/s) for s > 0, 0 otherwise; guarded against division by zero
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def _dpsi(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos]) / s[pos] ** 2
    return out


def smooth_step(s):
    """C-infinity step: 0 for ``s <= 0``, 1 for ``s >= 1``, monotone between."""
    a = _psi(s)
    b = _psi(1.0 - np.asarray(s, dtype=float))
    return a / (a + b)


def smooth_step_derivative(s):
    """Derivative of :func:`smooth_step` with respect to ``s``."""
    s = np.asarray(s, dtype=float)
    a, b = _psi(s), _psi(1.0 - s)
    da, db = _dpsi(s), -_dpsi(1.0 - s)
    return (da * b - a * db) / (a + b) ** 2


def plateau(s):
    """Even cutoff equal to 1 for ``|s| <= 1/2`` and 0 for ``|s| >= 1``."""
    return smooth_step(2.0 * (1.0 - np.abs(np.asarray(s, dtype=float))))


def bump(r2):
    """Unnormalized mollifier ``exp(1 - 1/(1 - r^2))`` for ``r^2 < 1``, else 0."""
    r2 = np.asarray(r2, dtype=float)
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def soft_bump(r2, a=16.0):
    """``exp(-a r^2 / (1 - r^2))`` for ``r^2 < 1``, else 0.

    Smooth like :func:`bump` but with a flat top and gentle edge, so it is
    resolved on much coarser grids.
    """
    r2 = np.asarray(r2, dtype=float)
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(-a * r2[inside] / (1.0 - r2[inside]))
    return out


def wrap_angle(a):
    """Reduce angles to the half-open interval ``(-pi, pi]``."""
    a = np.asarray(a, dtype=float)
    out = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    out = np.where(out == -np.pi, np.pi, out)
    return out if out.ndim else float(out)
