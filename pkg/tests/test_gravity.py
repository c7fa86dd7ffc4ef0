import math

import numpy as np
import pytest

from ablab.fields import Path, SingularPathError, flux_line_integral
from ablab.gravity import (
    ExpressionError, SignatureError, StationaryMetric, compile_expression, gravitational_flux,
    metric_from_spec, one_form_curl, shift_from_spec, static_obstruction, time_shift_isometry,
)
from ablab.potentials import ab_potential


def _zero(*x):
    return np.zeros(np.broadcast(*x).shape)


def _const(c):
    return lambda *x: np.full(np.broadcast(*x).shape, float(c))


def ab_metric(alpha0=1.0):
    g1 = lambda x, y: -y * alpha0 / (2 * math.pi * (x * x + y * y))
    g2 = lambda x, y: x * alpha0 / (2 * math.pi * (x * x + y * y))
    m = StationaryMetric.static()
    return StationaryMetric(2, m.g00, [g1, g2], m.gs, [(0.0, 0.0)])


def rotating_metric(omega=0.3):
    # flat space in a rotating frame restricted to r < 1/omega; g0 = omega (-y, x)
    g00 = lambda x, y: 1.0 - omega ** 2 * (x * x + y * y)
    return StationaryMetric(2, g00, [lambda x, y: -omega * y, lambda x, y: omega * x],
                            [[_const(-1), _zero], [_zero, _const(-1)]])


LOOPS = [
    Path.circle((0.0, 0.0), 1.0),
    Path.circle((1.3, -0.4), 0.7, n=40),
    Path.polygon([(-1.0, -1.0), (2.0, -0.5), (1.5, 1.8), (-0.7, 1.1)]),
]


@pytest.mark.parametrize("loop", LOOPS)
def test_static_metric_has_zero_flux(loop):
    assert gravitational_flux(StationaryMetric.static(), loop) == 0.0


def test_ab_form_flux_matches_magnetic_quadrature():
    alpha0 = 0.83
    loop = Path.circle((0.0, 0.0), 1.0)
    oracle = flux_line_integral(ab_potential(alpha0), loop)
    got = gravitational_flux(ab_metric(alpha0), loop)
    assert got == pytest.approx(alpha0, abs=1e-12)
    assert got == pytest.approx(oracle, abs=1e-13)


def test_ab_form_flux_is_not_reduced_mod_two_pi():
    alpha0 = 9.5
    assert gravitational_flux(ab_metric(alpha0), Path.circle((0.0, 0.0), 2.0)) == pytest.approx(9.5, abs=1e-11)


def test_ab_form_flux_off_centre_loop_not_enclosing():
    assert abs(gravitational_flux(ab_metric(1.0), Path.circle((2.0, 0.0), 1.0))) < 1e-12


def test_exact_form_integrates_to_zero():
    a = lambda x, y: np.sin(x) * np.exp(0.3 * y)
    m = StationaryMetric.static()
    em = StationaryMetric(2, m.g00, [lambda x, y: np.cos(x) * np.exp(0.3 * y),
                                     lambda x, y: 0.3 * np.sin(x) * np.exp(0.3 * y)], m.gs)
    # open-path oracle: the integral telescopes to the endpoint difference
    open_path = Path.polygon([(0.0, 0.0), (1.0, 0.5), (0.2, 1.7)])
    pts = open_path.vertices
    for p, q in zip(pts[:-1], pts[1:]):
        seg = StationaryMetric(2, em.g00, em.g0, em.gs)
        val = _open_integral(seg, p, q)
        assert val == pytest.approx(a(*q) - a(*p), abs=1e-13)
    for loop in LOOPS:
        assert abs(gravitational_flux(em, loop)) < 1e-12


def _open_integral(metric, p, q, order=16):
    x, w = np.polynomial.legendre.leggauss(order)
    s = 0.5 * (x + 1)
    pts = p[None, :] + s[:, None] * (q - p)[None, :]
    return float(np.sum(0.5 * w * (metric.one_form(*pts.T).T @ (q - p))))


def test_nonpositive_g00_raises_signature_error():
    m = rotating_metric(omega=0.5)
    with pytest.raises(SignatureError):
        gravitational_flux(m, Path.circle((0.0, 0.0), 2.5))


def test_loop_through_excluded_point_rejected():
    with pytest.raises(SingularPathError):
        gravitational_flux(ab_metric(), Path.polygon([(-1.0, 0.0), (1.0, 0.0), (0.0, 1.0)]))


def test_rotating_frame_flux_is_sagnac_integral():
    omega, r = 0.3, 0.8
    # int_0^{2 pi} omega r^2 / (1 - omega^2 r^2) dphi
    oracle = 2 * math.pi * omega * r * r / (1 - omega ** 2 * r * r)
    got = gravitational_flux(rotating_metric(omega), Path.circle((0.0, 0.0), r, n=400), quadrature_order=10)
    # polygonal loop of 400 sides: chord error ~ (pi / n)^2 relative
    assert got == pytest.approx(oracle, rel=1e-4)


def test_shift_by_constant_leaves_metric_unchanged():
    m = rotating_metric()
    m2 = time_shift_isometry(m, _const(3.0), lambda x, y: (_zero(x, y), _zero(x, y)))
    x = np.linspace(-1, 1, 7)
    y = np.linspace(0.5, -0.5, 7)
    for u, v in zip(m.evaluate(x, y), m2.evaluate(x, y)):
        assert np.array_equal(u, v)


def test_shift_formulas_pointwise():
    m = rotating_metric()
    grad = lambda x, y: (y, x)
    m2 = time_shift_isometry(m, lambda x, y: x * y, grad)
    x, y = np.array([0.3, -0.2]), np.array([0.1, 0.7])
    g00, g0, gs = m.evaluate(x, y)
    h00, h0, hs = m2.evaluate(x, y)
    da = np.stack([y, x])
    assert np.array_equal(h00, g00)
    np.testing.assert_allclose(h0, g0 - g00 * da, atol=1e-15)
    for j in range(2):
        for k in range(2):
            want = gs[j, k] - g0[j] * da[k] - g0[k] * da[j] + g00 * da[j] * da[k]
            np.testing.assert_allclose(hs[j, k], want, atol=1e-15)


@pytest.mark.parametrize("loop", LOOPS)
@pytest.mark.parametrize("metric", [rotating_metric(0.2), ab_metric(1.7)])
def test_flux_invariant_under_shift_xy(metric, loop):
    shifted = time_shift_isometry(metric, lambda x, y: x * y, lambda x, y: (y, x))
    assert gravitational_flux(shifted, loop) == pytest.approx(gravitational_flux(metric, loop), abs=1e-10)


def test_flux_invariant_under_random_polynomial_shifts():
    rng = np.random.default_rng(7)
    metric = ab_metric(0.6)
    for _ in range(5):
        terms = [[float(rng.normal()), int(p), int(q)] for p, q in rng.integers(0, 4, size=(6, 2))]
        a, grad = shift_from_spec({"poly": terms})
        c = rng.uniform(-1, 1, 2)
        loop = Path.circle(tuple(c), float(rng.uniform(0.3, 1.5)), n=64)
        if np.hypot(*c) < 1e-3:
            continue
        before = gravitational_flux(metric, loop)
        after = gravitational_flux(time_shift_isometry(metric, a, grad), loop)
        assert after == pytest.approx(before, abs=1e-10)


def test_static_shift_gives_exact_off_diagonal():
    m = StationaryMetric.static(lapse=2.0)
    m2 = time_shift_isometry(m, lambda x, y: x * x, lambda x, y: (2 * x, 0 * y))
    x = np.array([0.5, -1.0])
    np.testing.assert_allclose(m2.evaluate(x, 0 * x)[1][0], -2.0 * 2 * x)
    assert abs(gravitational_flux(m2, LOOPS[2])) < 1e-12


def _probes(exclude_radius=0.3):
    g = np.linspace(-1.5, 1.5, 13)
    X, Y = np.meshgrid(g, g)
    P = np.column_stack([X.ravel(), Y.ravel()])
    return P[np.hypot(P[:, 0], P[:, 1]) > exclude_radius]


def test_obstruction_static_metric():
    rep = static_obstruction(StationaryMetric.static(), [Path.circle((0, 0), 1.0)], _probes())
    assert rep.locally_static and rep.globally_static
    assert rep.fluxes == (0.0,)


def test_obstruction_ab_form_is_locally_but_not_globally_static():
    rep = static_obstruction(ab_metric(1.0), [Path.circle((0, 0), 1.0)], _probes())
    assert rep.locally_static
    assert not rep.globally_static
    assert rep.fluxes[0] == pytest.approx(1.0, abs=1e-12)


def test_obstruction_nonclosed_form():
    m = StationaryMetric(2, _const(1.0), [_zero, lambda x, y: x + 0 * y], StationaryMetric.static().gs)
    rep = static_obstruction(m, [Path.circle((0, 0), 1.0)], _probes(0.0))
    assert not rep.locally_static and not rep.globally_static
    assert rep.max_curl == pytest.approx(1.0, abs=1e-8)


def test_obstruction_consistency_over_random_metrics():
    rng = np.random.default_rng(3)
    for _ in range(6):
        spec = {"g0": [{"poly": [[float(rng.normal()), 1, 0], [float(rng.normal()), 0, 1]]},
                       {"poly": [[float(rng.normal()), 1, 0], [float(rng.normal()), 0, 1]]}]}
        rep = static_obstruction(metric_from_spec(spec), [Path.circle((0, 0), 1.0)], _probes(0.0))
        if rep.globally_static:
            assert rep.locally_static
        if any(abs(f) >= rep.tolerance for f in rep.fluxes):
            assert not rep.globally_static


def test_curl_in_three_dimensions():
    # w = (-x2, x1, 0) has d w = 2 dx1 ^ dx2
    n3 = lambda *x: np.zeros(np.broadcast(*x).shape)
    m = StationaryMetric(3, _const(1.0), [lambda x, y, z: -y, lambda x, y, z: x + 0 * z, n3],
                         [[_const(-1) if j == k else n3 for k in range(3)] for j in range(3)])
    c = one_form_curl(m, [[0.1, 0.2, 0.3], [1.0, -1.0, 2.0]])
    np.testing.assert_allclose(c, [[2, 2], [0, 0], [0, 0]], atol=1e-9)
    loop = Path.polygon([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)])
    assert gravitational_flux(m, loop) == pytest.approx(2.0, abs=1e-12)


def test_signature_check():
    StationaryMetric.static().check_signature(np.array([0.0, 1.0]), np.array([0.0, 2.0]))
    bad = StationaryMetric(2, _const(1.0), [_zero, _zero], [[_const(1.0), _zero], [_zero, _const(-1.0)]])
    with pytest.raises(SignatureError):
        bad.check_signature(np.array([0.0]), np.array([0.0]))


def test_expression_ab_form_matches_closure():
    m = metric_from_spec({"g0": [{"ab_form": {"alpha": 1.0, "component": 1}},
                                 {"ab_form": {"alpha": 1.0, "component": 2}}]})
    assert m.singular_points == [(0.0, 0.0)]
    ref = ab_metric(1.0)
    x, y = np.array([0.4, -1.2]), np.array([0.9, 0.1])
    np.testing.assert_allclose(m.one_form(x, y), ref.one_form(x, y), rtol=1e-15)


def test_expression_gradient_of_product():
    e = compile_expression({"product": [{"poly": [[2.0, 1, 0]]}, {"sum": [1.0, {"poly": [[1.0, 0, 2]]}]}]})
    x, y = np.array([0.7]), np.array([-0.4])
    assert e.value(x, y)[0] == pytest.approx(2 * 0.7 * (1 + 0.16))
    gx, gy = e.gradient(x, y)
    assert gx[0] == pytest.approx(2 * 1.16)
    assert gy[0] == pytest.approx(2 * 0.7 * 2 * -0.4)


@pytest.mark.parametrize("bad", [{"poly": [[1.0, -1, 0]]}, {"nope": 1}, [1, 2], True, {"sum": []}])
def test_malformed_expressions(bad):
    with pytest.raises(ExpressionError):
        compile_expression(bad)


def test_shift_rejects_ab_form():
    with pytest.raises(ExpressionError):
        shift_from_spec({"ab_form": {"alpha": 1.0, "component": 1}})
