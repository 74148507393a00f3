import cmath
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from morphforge.errors import DegenerateMap, DomainError, PoleHit
from morphforge.spheremorph import (
    CanonicalMobius,
    MobiusMap,
    hessian_F,
    inner_integrals,
    inner_integrals_quadrature,
    min_value,
    psi_bar_closed,
    psi_bar_from_inner,
    psi_bar_quadrature,
    psi_pullback,
    pullback_metric_mobius,
    reduce,
    sphere_report,
    stereographic,
)

qs = st.floats(0.0, 3.0)
rs = st.floats(0.2, 4.0)
Rs = st.floats(0.5, 3.0)
cplx = st.complex_numbers(max_magnitude=3.0, allow_nan=False, allow_infinity=False)


def fd_grad(f, q, r, h=1e-5):
    return np.array([(f(q + h, r) - f(q - h, r)) / (2 * h), (f(q, r + h) - f(q, r - h)) / (2 * h)])


# ---------------------------------------------------------------------------
# closed form and derivatives
# ---------------------------------------------------------------------------


@given(Rs)
def test_minimum_at_identity_class(R):
    assert psi_bar_closed(0.0, 1.0, R) == pytest.approx(min_value(R), rel=1e-12, abs=1e-12)
    np.testing.assert_allclose(hessian_F(0.0, 1.0, R).gradient, 0.0, atol=1e-12)


@given(qs, rs, Rs)
def test_gradient_and_hessian_match_differences(q, r, R):
    rep = hessian_F(max(q, 1e-3), r, R)
    f = lambda a, b: float(psi_bar_closed(a, b, R))
    q = max(q, 1e-3)
    scale = math.pi * R**4 * (1 + q * q + r * r) ** 2 / min(r, 1) ** 5
    np.testing.assert_allclose(fd_grad(f, q, r), rep.gradient, rtol=1e-5, atol=1e-7 * scale)
    g = lambda a, b: hessian_F(a, b, R).gradient
    fd_h = np.column_stack(fd_grad(lambda a, b: g(a, b), q, r))
    np.testing.assert_allclose(fd_h, rep.hessian, rtol=1e-5, atol=1e-7 * scale)


@given(qs, rs, Rs)
def test_hessian_positive_definite(q, r, R):
    rep = hessian_F(q, r, R)
    assert rep.positive_definite
    assert rep.det_entrywise == pytest.approx(rep.det_formula, rel=1e-9)


def test_closed_form_is_minimal_on_a_grid():
    R = 1.7
    q, r = np.meshgrid(np.linspace(0, 2, 21), np.linspace(0.3, 3, 28))
    assert np.all(psi_bar_closed(q, r, R) >= min_value(R) - 1e-12)


@pytest.mark.parametrize("q, r, R", [(0.0, 1.0, 2.0), (0.5, 0.7, 1.5), (1.5, 2.0, 0.8)])
def test_quadrature_routes_agree_with_closed_form(q, r, R):
    closed = float(psi_bar_closed(q, r, R))
    assert psi_bar_quadrature(q, r, R) == pytest.approx(closed, rel=1e-9)
    assert psi_bar_from_inner(q, r, R) == pytest.approx(closed, rel=1e-9)


@given(st.floats(0.5, 5.0), st.floats(-0.95, 0.95))
def test_inner_integrals(xi, frac):
    eta = frac * xi
    np.testing.assert_allclose(inner_integrals(xi, eta), inner_integrals_quadrature(xi, eta), rtol=1e-11)


def test_domain_errors():
    with pytest.raises(DomainError):
        psi_bar_closed(0.0, 0.0, 1.0)
    with pytest.raises(DomainError):
        CanonicalMobius(-0.1, 1.0)
    with pytest.raises(DomainError):
        inner_integrals(1.0, 1.0)


def test_sphere_report():
    rep = sphere_report(CanonicalMobius(0.0, 1.0), 2.0)
    assert rep["psi_bar_closed"] == pytest.approx(9 * math.pi)
    assert rep["min_value_reference"] == pytest.approx(9 * math.pi)
    assert rep["positive_definite"] and rep["psi_bar_quadrature"] is None


# ---------------------------------------------------------------------------
# Möbius maps
# ---------------------------------------------------------------------------


def test_degenerate_map():
    with pytest.raises(DegenerateMap):
        MobiusMap(1, 2, 2, 4)


@given(st.floats(0.0, 2.0), st.floats(0.3, 3.0))
def test_reduce_recovers_canonical(q, r):
    c = reduce(CanonicalMobius(q, r).as_map())
    assert c.q == pytest.approx(q, abs=1e-12)
    assert c.r == pytest.approx(r, rel=1e-12)


@given(cplx, cplx, cplx, cplx, cplx, cplx, st.floats(0.1, 5.0), st.floats(-3, 3))
def test_reduce_invariant_under_left_isometries_and_scaling(a, b, c, d, ua, uc, scale, angle):
    try:
        m = MobiusMap(a, b, c, d)
    except DegenerateMap:
        return
    if abs(m.det) < 1e-3 or abs(ua) + abs(uc) < 1e-3:
        return
    base = reduce(m)
    moved = reduce(MobiusMap.unitary(ua, uc) @ m)
    rescaled = reduce(MobiusMap.from_matrix(scale * cmath.exp(1j * angle) * m.matrix))
    tol = 1e-8 * (1 + base.q + base.r + 1 / base.r)
    for other in (moved, rescaled):
        assert other.q == pytest.approx(base.q, abs=tol)
        assert other.r == pytest.approx(base.r, abs=tol)


@given(cplx)
def test_unitary_maps_are_isometries(z):
    U = MobiusMap.unitary(0.3 + 0.4j, -0.2 + 0.1j)
    try:
        got = pullback_metric_mobius(U, z)
    except PoleHit:
        return
    assert got == pytest.approx(4 / (1 + abs(z) ** 2) ** 2, rel=1e-10)


def test_pole_hit():
    m = MobiusMap(1, 0, 1, -1)
    with pytest.raises(PoleHit):
        pullback_metric_mobius(m, 1.0)
    with pytest.raises(PoleHit):
        pullback_metric_mobius(m, complex("inf"))


@given(cplx)
def test_stereographic_on_unit_sphere(w):
    assert np.linalg.norm(stereographic(w)) == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("q, r, R", [(0.0, 1.0, 1.0), (0.0, 1.0, 2.0), (0.6, 1.4, 1.5)])
def test_pullback_energy_matches_closed_form(q, r, R):
    got = psi_pullback(CanonicalMobius(q, r).as_map(), R, 128, 256)
    assert got == pytest.approx(float(psi_bar_closed(q, r, R)), rel=1e-6, abs=1e-10)
