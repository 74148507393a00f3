import numpy as np
import pytest

from morphforge import geometry as geo
from morphforge.eleq import (
    christoffels,
    divergence,
    el_residual,
    first_variation,
    observed_order,
    raised_strain,
)
from morphforge.errors import ValidationError

R = 2.0


def scaled_metric(M, c):
    g = geo.first_fundamental_form(M)
    return g, geo.CovariantTensorField(2, c * c * g.components, M)


def warp(u):
    th = u[0] + (0.3 / R) * np.sin(u[0])
    return R * np.stack([np.cos(th), np.sin(th)], -1)


@pytest.fixture(scope="module")
def circles():
    return geo.circle(1.0, 256), geo.circle(R, 512)


def test_sphere_christoffels():
    S = geo.sphere(1.0, 64, 128)
    th = S.grid.coords()[0]
    G = christoffels(geo.first_fundamental_form(S)).components
    inner = (th > 0.2) & (th < np.pi - 0.2)
    np.testing.assert_allclose(G[..., 0, 1, 1][inner], (-np.sin(th) * np.cos(th))[inner], atol=1e-5)
    np.testing.assert_allclose(G[..., 1, 0, 1][inner], (np.cos(th) / np.sin(th))[inner], rtol=1e-4)
    np.testing.assert_allclose(G[..., 1, 0, 1], G[..., 1, 1, 0], atol=1e-14)
    np.testing.assert_allclose(G[..., 0, 0, 0], 0.0, atol=1e-12)


def test_circle_christoffels_vanish():
    M = geo.circle(1.5, 64)
    np.testing.assert_allclose(christoffels(geo.first_fundamental_form(M)).components, 0.0, atol=1e-12)


def test_divergence_of_height_gradient():
    # grad z on the unit sphere has div = -2 z
    S = geo.sphere(1.0, 128, 256)
    th = S.grid.coords()[0]
    X = np.stack([-np.sin(th), np.zeros_like(th)], -1)
    div = divergence(X, geo.first_fundamental_form(S))
    np.testing.assert_allclose(div, -2 * np.cos(th), atol=1e-3)
    assert abs(geo.integrate(div, S)) < 1e-12


@pytest.mark.parametrize(
    "make, c",
    [
        (lambda: geo.warped_circle(1.0, 64), 1.0),
        (lambda: geo.circle(1.0, 64), 1.7),
        (lambda: geo.sphere(1.0, 16, 32), 1.7),
    ],
)
def test_residual_vanishes_for_scalings(make, c):
    M = make()
    alpha, beta = scaled_metric(M, c)
    res = el_residual(alpha, beta)
    assert res.max < 1e-8 and res.l2 < 1e-8
    assert set(res.to_dict()) == {"residual_max", "residual_l2"}


def test_raised_strain_of_scaling():
    M = geo.sphere(1.0, 8, 16)
    alpha, beta = scaled_metric(M, 2.0)
    B = raised_strain(alpha, beta).components
    np.testing.assert_allclose(B, 3.0 * np.linalg.inv(alpha.components), rtol=1e-12)


def test_mismatched_bases_rejected():
    a = geo.first_fundamental_form(geo.circle(1.0, 32))
    b = geo.first_fundamental_form(geo.circle(1.0, 64))
    with pytest.raises(ValidationError):
        el_residual(a, b)


def test_observed_order():
    np.testing.assert_allclose(observed_order([1.0, 0.25, 0.0625], [1.0, 0.5, 0.25]), [2.0, 2.0])


def test_first_variation_matches_difference(circles):
    M, N = circles
    fv = first_variation(warp, np.sin, M, N)
    assert fv.rel_err < 1e-6
    assert fv.to_dict()["eps"] == 1e-4


def test_first_variation_linear_in_Y(circles):
    M, N = circles
    one = first_variation(warp, np.sin, M, N)
    two = first_variation(warp, lambda u: 2 * np.sin(u), M, N)
    assert two.analytic == pytest.approx(2 * one.analytic, rel=1e-12)
    assert two.finite_difference == pytest.approx(2 * one.finite_difference, rel=1e-6)


def test_pairing_matters(circles):
    M, N = circles
    beta = first_variation(warp, np.sin, M, N, pairing="beta")
    alpha = first_variation(warp, np.sin, M, N, pairing="alpha")
    assert alpha.rel_err > 100 * beta.rel_err
    with pytest.raises(ValidationError):
        first_variation(warp, np.sin, M, N, pairing="gamma")


def test_radial_map_is_critical(circles):
    M, N = circles
    fr = first_variation(lambda u: R * np.stack([np.cos(u[0]), np.sin(u[0])], -1), np.sin, M, N)
    assert abs(fr.analytic) < 1e-8 and abs(fr.finite_difference) < 1e-6
