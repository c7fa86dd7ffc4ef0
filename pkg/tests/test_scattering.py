import math

import mpmath
import numpy as np
import pytest

from ablab.scattering import (
    ForwardSingularityError, UnsupportedOrderError, ab_amplitude_smooth, ab_cross_section_density,
    ab_radial_mode, amplitude_table, bessel_j,
)


def test_zero_flux_has_no_scattering():
    assert ab_amplitude_smooth(1.0, 0.0) == 0


def test_backscatter_value():
    assert abs(ab_amplitude_smooth(math.pi, math.pi)) ** 2 == pytest.approx(1 / (4 * math.pi ** 2), rel=1e-14)
    assert 1 / (4 * math.pi ** 2) == pytest.approx(0.0253303, abs=1e-7)


def test_forward_direction_rejected():
    with pytest.raises(ForwardSingularityError):
        ab_amplitude_smooth(0.0, 1.0)
    with pytest.raises(ForwardSingularityError):
        ab_cross_section_density(np.array([0.3, 1e-12]), 1.0)


def test_cross_section_identity_grid():
    thetas = np.linspace(-math.pi, math.pi, 102)[1:-1]
    thetas = thetas[np.abs(thetas) > 1e-6][:100]
    assert thetas.size == 100
    for alpha in np.linspace(-7.0, 7.0, 20):
        a2 = np.abs(ab_amplitude_smooth(thetas, alpha)) ** 2
        np.testing.assert_allclose(a2 * 4 * math.pi ** 2 * np.sin(thetas / 2) ** 2, math.sin(alpha / 2) ** 2, atol=1e-12)
        np.testing.assert_allclose(ab_cross_section_density(thetas, alpha), a2, rtol=1e-12)


def test_modulus_invariances():
    th = np.linspace(0.05, math.pi, 40)
    for alpha in (0.3, 1.7, -2.4, 4.0):
        base = np.abs(ab_amplitude_smooth(th, alpha)) ** 2
        np.testing.assert_allclose(np.abs(ab_amplitude_smooth(th, -alpha)) ** 2, base, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(np.abs(ab_amplitude_smooth(th, alpha + 2 * math.pi)) ** 2, base, rtol=1e-12, atol=1e-15)


def test_ceiling_phase_factor():
    # the integer part of the flux shifts the phase by exp(i N theta)
    a = ab_amplitude_smooth(0.7, 2.5)
    b = ab_amplitude_smooth(0.7, 2.5 + 2 * math.pi)
    assert b / a == pytest.approx(-np.exp(1j * 0.7), rel=1e-12)


def test_cross_section_ratio_and_integer_flux():
    assert ab_cross_section_density(1.1, math.pi) / ab_cross_section_density(1.1, math.pi / 2) == pytest.approx(2.0, rel=1e-14)
    assert np.all(np.abs(ab_cross_section_density(np.linspace(0.1, 3, 7), 2 * math.pi)) < 1e-30)
    assert ab_cross_section_density(math.pi, math.pi) == pytest.approx(1 / (4 * math.pi ** 2), rel=1e-14)


def test_amplitude_table_columns():
    t = amplitude_table([0.5, 1.0], 1.0)
    assert t.shape == (2, 4)
    assert t[1, 3] == pytest.approx(t[1, 1] ** 2 + t[1, 2] ** 2)


def test_radial_mode_small_argument():
    reg, sing = ab_radial_mode(0, 0.0, 1.0, 1e-12)
    assert reg == pytest.approx(1.0, abs=1e-12) and sing == pytest.approx(1.0, abs=1e-12)


def test_radial_mode_half_integer_closed_form():
    reg, sing = ab_radial_mode(0, 0.5, 1.0, 1.0)
    assert reg == pytest.approx(math.sqrt(2 / math.pi) * math.sin(1.0), rel=1e-13)
    assert sing == pytest.approx(math.sqrt(2 / math.pi) * math.cos(1.0), rel=1e-13)


def test_wronskian():
    nu, x = 0.3, 2.0
    j, jm = ab_radial_mode(0, nu, 1.0, x)
    dj, djm = ab_radial_mode(0, nu, 1.0, x, derivative=1)
    assert j * djm - dj * jm == pytest.approx(-2 * math.sin(nu * math.pi) / (math.pi * x), abs=1e-10)


@pytest.mark.parametrize("nu,x", [(0.3, 0.7), (3.4, 12.0), (-7.25, 33.0), (40.6, 49.0)])
def test_bessel_against_high_precision(nu, x):
    with mpmath.workdps(60):
        ref = float(mpmath.besselj(nu, x))
    assert bessel_j(nu, x) == pytest.approx(ref, rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("n,alpha,x", [(0, 0.3, 4.3), (2, -0.45, 1.7), (-3, 0.8, 9.0), (1, 0.25, 3.0)])
def test_radial_mode_satisfies_bessel_equation(n, alpha, x):
    # J'' + J'/x + (1 - nu^2/x^2) J = 0, fourth-order differences in x
    nu = n + alpha
    d = 1e-2
    f = [ab_radial_mode(n, alpha, 1.0, x + s * d)[0] for s in (-2, -1, 0, 1, 2)]
    jpp = (-f[0] + 16 * f[1] - 30 * f[2] + 16 * f[3] - f[4]) / (12 * d * d)
    jp = (f[0] - 8 * f[1] + 8 * f[3] - f[4]) / (12 * d)
    assert abs(jpp + jp / x + (1 - nu * nu / (x * x)) * f[2]) < 1e-8


def test_large_order_rejected():
    with pytest.raises(UnsupportedOrderError):
        ab_radial_mode(200, 0.5, 1.0, 1.0)
    with pytest.raises(ValueError):
        ab_radial_mode(0, 0.5, -1.0, 1.0)
