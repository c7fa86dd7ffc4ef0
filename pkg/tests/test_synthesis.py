import math

import numpy as np
import pytest

from ablab.fields import Path, flux_line_integral
from ablab.grid import Grid2D
from ablab.potentials import grid_vector_potential
from ablab.smooth import bump
from ablab.synthesis import (
    ScalarGridField, SupportDisc, curl_2d, mollifier, split_flux_potential,
    synthesize_compact_potential,
)


def _d(f, h, axis):
    return np.gradient(f, h, axis=axis, edge_order=2)


def _laplacian_bump(n=64, half_width=2.0):
    # B = D1 D1 chi + D2 D2 chi, the curl of (-D2 chi, D1 chi) under centered differences
    g = Grid2D.square(half_width, n)
    X, Y = g.mesh()
    chi = bump(X * X + Y * Y)
    B = _d(_d(chi, g.h, 1), g.h, 1) + _d(_d(chi, g.h, 0), g.h, 0)
    star = (-_d(chi, g.h, 0), _d(chi, g.h, 1))
    return g, chi, ScalarGridField(g, B), star


def test_curl_of_zero_is_zero():
    g = Grid2D.square(1.0, 16)
    z = np.zeros(g.shape)
    assert np.all(curl_2d((z, z), g).values == 0)


def test_curl_of_rotation_is_one():
    g = Grid2D.square(1.0, 20)
    X, Y = g.mesh()
    B = curl_2d(grid_vector_potential(g, -Y / 2, X / 2))
    np.testing.assert_allclose(B.values, 1.0, atol=1e-10)


def test_curl_of_polynomial_gradient_vanishes():
    g = Grid2D.square(1.5, 33)
    X, Y = g.mesh()
    # psi = x^3 - 2 x y^2 + x^2 y + y^3; each component is at most quadratic
    # in the variable it is differenced in, where the stencils are exact
    A1 = 3 * X ** 2 - 2 * Y ** 2 + 2 * X * Y
    A2 = -4 * X * Y + X ** 2 + 3 * Y ** 2
    assert np.max(np.abs(curl_2d((A1, A2), g).values)) < 1e-8


def test_spectral_curl_of_smooth_periodic_field():
    g = Grid2D((0.0, 0.0), 2 * math.pi / 32, 32, 32)
    X, Y = g.mesh()
    B = curl_2d((np.sin(Y), np.cos(2 * X)), g, method="spectral")
    np.testing.assert_allclose(B.values, -2 * np.sin(2 * X) - np.cos(Y), atol=1e-12)


def test_zero_field_gives_zero_potential():
    g = Grid2D.square(1.0, 16)
    A = synthesize_compact_potential(ScalarGridField(g, np.zeros(g.shape)), SupportDisc((0, 0), 0.5))
    assert np.all(A.samples[0] == 0) and np.all(A.samples[1] == 0)


def test_laplacian_bump_reconstruction():
    g, chi, B, star = _laplacian_bump()
    A = synthesize_compact_potential(B, SupportDisc((0.0, 0.0), 1.2))
    scale = np.max(np.abs(B.values))
    err = np.max(np.abs(curl_2d(A, method="spectral").values - B.values)) / scale
    assert err < 1e-6
    # the oracle has the same centered curl; A - A* is curl free in the matched sense
    assert np.array_equal(curl_2d(star, g).values, B.values)


def test_laplacian_bump_leakage_outside_one_and_a_half():
    g, chi, B, star = _laplacian_bump()
    A = synthesize_compact_potential(B, SupportDisc((0.0, 0.0), 1.2))
    X, Y = g.mesh()
    mag = np.hypot(*A.samples)
    leak = mag[np.hypot(X, Y) > 1.5].max() / mag.max()
    assert leak < 1e-4


def test_leakage_ratio_below_acceptance_level():
    g, chi, B, star = _laplacian_bump()
    A = synthesize_compact_potential(B, SupportDisc((0.0, 0.0), 1.2))
    X, Y = g.mesh()
    mag = np.hypot(*A.samples)
    assert mag[np.hypot(X, Y) > 1.5].max() / mag.max() < 1e-3


def _soft_bump(r2, a=16.0):
    # C-infinity, supported in r < 1, far better resolved on coarse grids than exp(1 - 1/(1 - r^2))
    out = np.zeros_like(r2)
    m = r2 < 1
    out[m] = np.exp(-a * r2[m] / (1 - r2[m]))
    return out


def test_dipole_reconstruction():
    g = Grid2D.square(2.0, 64)
    X, Y = g.mesh()
    b = lambda cx: _soft_bump(((X - cx) ** 2 + Y ** 2) / 0.25)
    B = ScalarGridField(g, b(-0.5) - b(0.5))
    assert abs(B.total()) < 1e-8 * B.l1()
    A = synthesize_compact_potential(B, SupportDisc((0.0, 0.0), 1.05))
    err = np.max(np.abs(curl_2d(A, method="spectral").values - B.values)) / np.max(np.abs(B.values))
    assert err < 1e-6


def test_unreachable_mode_bounds_the_error():
    # the x-alternating, y-constant grid mode is not the curl of any node field
    g = Grid2D.square(2.0, 64)
    X, Y = g.mesh()
    b = lambda cx: bump(((X - cx) ** 2 + Y ** 2) / 0.16)
    B = ScalarGridField(g, b(-0.5) - b(0.5))
    A = synthesize_compact_potential(B, SupportDisc((0.0, 0.0), 1.0))
    err = curl_2d(A, method="spectral").values - B.values
    mode = np.sum(B.values * (-1.0) ** np.arange(g.nx)[None, :]) / g.size
    np.testing.assert_allclose(err, -mode * (-1.0) ** np.arange(g.nx)[None, :] * np.ones(g.shape), atol=1e-11)


def test_nonzero_flux_rejected_with_pointer():
    g = Grid2D.square(2.0, 32)
    X, Y = g.mesh()
    B = ScalarGridField(g, bump((X * X + Y * Y) / 0.5))
    with pytest.raises(ValueError, match="split_flux_potential"):
        synthesize_compact_potential(B, SupportDisc((0, 0), 1.0))


def test_field_outside_support_rejected():
    g = Grid2D.square(2.0, 32)
    X, Y = g.mesh()
    B = ScalarGridField(g, bump(((X - 1.0) ** 2 + Y * Y) / 0.25) - bump(((X + 1.0) ** 2 + Y * Y) / 0.25))
    with pytest.raises(ValueError):
        synthesize_compact_potential(B, SupportDisc((0, 0), 1.0))


def test_two_outputs_differ_by_gradient():
    g, chi, B, star = _laplacian_bump()
    a = synthesize_compact_potential(B, SupportDisc((0.0, 0.0), 1.2))
    b = synthesize_compact_potential(B, SupportDisc((0.2, 0.1), 1.35))
    diff = (a.samples[0] - b.samples[0], a.samples[1] - b.samples[1])
    assert np.max(np.abs(diff[0])) > 1e-2  # genuinely different gauges
    assert np.max(np.abs(curl_2d(diff, g, method="spectral").values)) < 1e-8


def test_mollifier_has_unit_mass():
    g = Grid2D.square(1.0, 64)
    b = mollifier(g, (0.0, 0.0), 4 * g.h)
    assert b.total() == pytest.approx(1.0, abs=1e-14)


def test_split_of_pure_mollifier_has_zero_core():
    g = Grid2D.square(2.0, 64)
    eps = 0.4
    B = ScalarGridField(g, 2.5 * mollifier(g, (0.0, 0.0), eps).values)
    tail, core, alpha0 = split_flux_potential(B, SupportDisc((0, 0), 1.0), mollifier_radius=eps)
    assert alpha0 == pytest.approx(2.5, rel=1e-14)
    assert np.max(np.abs(core.samples[0])) == 0 and np.max(np.abs(core.samples[1])) == 0
    assert flux_line_integral(tail, Path.circle((0, 0), 1.5)) == pytest.approx(2.5, abs=1e-10)


@pytest.mark.parametrize("center", [(0.0, 0.0), (0.15, -0.1)])
def test_split_single_bump_loop_flux(center):
    g = Grid2D.square(1.2, 64)
    X, Y = g.mesh()
    b = bump(((X - center[0]) ** 2 + (Y - center[1]) ** 2) / 0.25)
    b *= 2 * math.pi / (b.sum() * g.h ** 2)
    B = ScalarGridField(g, b)
    tail, core, alpha0 = split_flux_potential(B, SupportDisc((0.0, 0.0), 0.95))
    flux = flux_line_integral(tail + core, Path.circle((0.0, 0.0), 1.0))
    assert abs(flux - 2 * math.pi) < 1e-6


def test_split_zero_flux_is_plain_synthesis():
    g, chi, B, star = _laplacian_bump()
    support = SupportDisc((0.0, 0.0), 1.2)
    tail, core, alpha0 = split_flux_potential(B, support, restrict_core=False)
    assert alpha0 == 0.0
    assert np.all(tail(np.array([0.3]), np.array([0.2]))[0] == 0)
    ref = synthesize_compact_potential(B, support)
    assert np.array_equal(core.samples[0], ref.samples[0])
    assert np.array_equal(core.samples[1], ref.samples[1])


def test_split_rejects_large_mollifier():
    g = Grid2D.square(2.0, 32)
    X, Y = g.mesh()
    B = ScalarGridField(g, bump((X * X + Y * Y) / 0.25))
    with pytest.raises(ValueError):
        split_flux_potential(B, SupportDisc((0.0, 0.0), 1.0), mollifier_radius=1.2)


def test_split_restricted_core_vanishes_outside():
    g = Grid2D.square(1.2, 64)
    X, Y = g.mesh()
    B = ScalarGridField(g, bump(((X - 0.2) ** 2 + Y ** 2) / 0.16))
    tail, core, alpha0 = split_flux_potential(B, SupportDisc((0.0, 0.0), 0.9))
    out = np.hypot(X, Y) > 0.9
    assert np.all(core.samples[0][out] == 0) and np.all(core.samples[1][out] == 0)
    # inside, away from the mollifier scale, the total curl matches B
    assert alpha0 == pytest.approx(B.total(), rel=1e-14)
