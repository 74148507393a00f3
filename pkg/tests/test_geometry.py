import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from morphforge import geometry as geo
from morphforge.errors import NonFiniteInput, OffManifold, SingularMetric, ValidationError


def radial_samples(M, R):
    r, dr, d2r = M.jets
    return geo.MapDifferentialSamples(R * r, R * dr, R * d2r)


# ---------------------------------------------------------------------------
# fundamental forms
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("R", [1.0, 2.5])
def test_circle_forms(R):
    M = geo.circle(R, 64)
    g = geo.first_fundamental_form(M).components[:, 0, 0]
    ii = geo.second_fundamental_form(M).components[:, 0, 0]
    np.testing.assert_allclose(g, R * R, rtol=1e-14)
    # II = g / R: +1 on the unit circle
    np.testing.assert_allclose(ii, R, rtol=1e-14)


def test_sphere_forms():
    R = 1.7
    S = geo.sphere(R, 24, 48)
    th = S.grid.coords()[0]
    g = geo.first_fundamental_form(S).components
    np.testing.assert_allclose(g[..., 0, 0], R * R, rtol=1e-14)
    np.testing.assert_allclose(g[..., 1, 1], (R * np.sin(th)) ** 2, rtol=1e-13)
    np.testing.assert_allclose(g[..., 0, 1], 0, atol=1e-14)
    ii = geo.second_fundamental_form(S).components
    np.testing.assert_allclose(ii, g / R, atol=1e-13)


def test_sphere_metric_matches_finite_differences():
    S = geo.sphere(1.0, 16, 32)
    chart = geo.chart_from_parametrization(lambda u: S.chart(u)[0], 2, step=1e-3)
    fd = chart(S.grid.coords())[1]
    np.testing.assert_allclose(fd, S.jets[1], atol=1e-10)


def test_segment_is_flat():
    L = geo.segment((0.0, 0.0), (2.0, 1.0), 32)
    np.testing.assert_allclose(geo.second_fundamental_form(L).components, 0.0, atol=1e-14)


def test_orientation_sign_flips_second_form():
    M = geo.circle(1.0, 32)
    flipped = geo.EmbeddedManifold(M.grid, M.positions, -1, chart=M.chart)
    np.testing.assert_allclose(
        geo.second_fundamental_form(flipped).components, -geo.second_fundamental_form(M).components
    )


def test_tabulated_circle_uses_finite_differences():
    M = geo.circle(1.0, 256)
    tab = M.with_positions(M.positions)
    assert tab.chart is None
    np.testing.assert_allclose(geo.first_fundamental_form(tab).components, 1.0, atol=1e-7)
    np.testing.assert_allclose(geo.second_fundamental_form(tab).components, 1.0, atol=1e-6)


def test_tabulated_sphere_across_poles():
    S = geo.sphere(1.0, 32, 64)
    tab = S.with_positions(S.positions)
    np.testing.assert_allclose(
        geo.first_fundamental_form(tab).components, geo.first_fundamental_form(S).components, atol=5e-5
    )


def test_warped_sphere_is_a_round_sphere():
    W = geo.warped_sphere(1.3, 24, 48, 0.2, 0.15)
    np.testing.assert_allclose(np.linalg.norm(W.positions, axis=-1), 1.3, rtol=1e-14)
    assert geo.integrate(np.ones(W.grid.shape), W) == pytest.approx(4 * math.pi * 1.3**2, rel=1e-10)
    chart = geo.chart_from_parametrization(lambda u: W.chart(u)[0], 2, step=1e-3)
    r, dr, d2r = chart(W.grid.coords())
    np.testing.assert_allclose(dr, W.jets[1], atol=1e-9)
    np.testing.assert_allclose(d2r, W.jets[2], atol=1e-6)


def test_degenerate_parametrization_raises():
    grid = geo.ParamGrid.circle(16)
    flat = geo.EmbeddedManifold(grid, np.zeros((16, 2)))
    with pytest.raises(SingularMetric):
        geo.first_fundamental_form(flat)


def test_non_periodic_chart_rejected():
    grid = geo.ParamGrid.circle(16)

    def chart(u):
        s = u[0]
        r = np.stack([s, np.zeros_like(s)], -1)
        return r, np.stack([np.ones_like(s), np.zeros_like(s)], -1)[..., None, :], np.zeros(s.shape + (1, 1, 2))

    with pytest.raises(ValidationError):
        geo.EmbeddedManifold(grid, chart(grid.coords())[0], chart=chart)


def test_grid_validation():
    with pytest.raises(ValidationError):
        geo.ParamGrid((4,), (0.0,), (-1.0,), ("periodic",))
    with pytest.raises(ValidationError):
        geo.ParamGrid.sphere(8, 7)


# ---------------------------------------------------------------------------
# pull-backs and fiber norms
# ---------------------------------------------------------------------------


def test_pullback_identity_is_exact():
    M = geo.circle(1.0, 32)
    g = geo.first_fundamental_form(M)
    pb = geo.pullback(g, geo.identity_map(M), M)
    np.testing.assert_allclose(pb.components, g.components, rtol=1e-14)


@pytest.mark.parametrize("R", [2.0, 3.0])
def test_radial_pullback_scales_metric(R):
    M, N = geo.circle(1.0, 64), geo.circle(R, 128)
    h = radial_samples(M, R)
    via_target = geo.pullback(geo.first_fundamental_form(N), h, M)
    direct = geo.pullback_metric(h, M)
    np.testing.assert_allclose(via_target.components, R * R, rtol=1e-12)
    np.testing.assert_allclose(direct.components, R * R, rtol=1e-14)


def test_pullback_composition():
    # rotation followed by dilation equals pulling back twice
    M, N = geo.circle(1.0, 64), geo.circle(2.0, 64)
    rot = 0.3
    c, s = math.cos(rot), math.sin(rot)
    Q = np.array([[c, -s], [s, c]])
    r, dr, d2r = M.jets
    rotated = geo.MapDifferentialSamples(r @ Q.T, dr @ Q.T, d2r @ Q.T)
    step1 = geo.pullback(geo.first_fundamental_form(M), rotated, M)
    both = geo.MapDifferentialSamples(2 * r @ Q.T, 2 * dr @ Q.T, 2 * d2r @ Q.T)
    once = geo.pullback(geo.first_fundamental_form(N), both, M)
    np.testing.assert_allclose(once.components, 4 * step1.components, rtol=1e-10)


def test_pullback_off_target_raises():
    M, N = geo.circle(1.0, 32), geo.circle(2.0, 32)
    with pytest.raises(OffManifold):
        geo.pullback(geo.first_fundamental_form(N), geo.identity_map(M), M)


def test_fiber_norm_of_metric_is_dimension():
    for m in (geo.circle(1.3, 16), geo.sphere(1.0, 8, 16)):
        g = geo.first_fundamental_form(m)
        np.testing.assert_allclose(geo.fiber_norm_sq(g, g), m.dim, rtol=1e-12)


def test_radial_strain_norm():
    R = 2.0
    M = geo.circle(1.0, 32)
    g = geo.first_fundamental_form(M)
    strain = geo.pullback_metric(radial_samples(M, R), M) - g
    np.testing.assert_allclose(geo.fiber_norm_sq(strain, g), (R * R - 1) ** 2, rtol=1e-13)


def test_fiber_norm_independent_of_frame_order():
    rng = np.random.default_rng(0)
    S = geo.sphere(1.0, 6, 8)
    g = geo.first_fundamental_form(S)
    raw = rng.normal(size=g.components.shape)
    b = geo.CovariantTensorField(2, raw + np.swapaxes(raw, -1, -2), S)
    a = geo.fiber_norm_sq(b, g, frame_order=(0, 1))
    c = geo.fiber_norm_sq(b, g, frame_order=(1, 0))
    np.testing.assert_allclose(a, c, rtol=1e-10)


def test_fiber_norm_reparametrization_invariance():
    # |II|^2 is the squared curvature whatever the parametrization of the ellipse
    a, b, amp = 2.0, 1.0, 0.4

    def warped(u):
        th = u[0] + amp * np.sin(u[0])
        return np.stack([a * np.cos(th), b * np.sin(th)], -1)

    plain = geo.ellipse(a, b, 128)
    other = geo.from_parametrization(warped, geo.ParamGrid.circle(128))
    for m, th in ((plain, plain.grid.coords()[0]), (other, other.grid.coords()[0] + amp * np.sin(other.grid.coords()[0]))):
        kappa = a * b / (a * a * np.sin(th) ** 2 + b * b * np.cos(th) ** 2) ** 1.5
        val = geo.fiber_norm_sq(geo.second_fundamental_form(m), geo.first_fundamental_form(m))
        np.testing.assert_allclose(val, kappa**2, rtol=1e-6)


@given(
    st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    st.floats(0.05, 3.0),
)
def test_norm_equivalence_random_tensors(lower, sym, scale):
    # random SPD metric L L^T and random symmetric tensor at a single node
    S = geo.sphere(1.0, 2, 2)
    L = np.array([[scale + abs(lower[0]), 0.0], [lower[1], scale + abs(lower[2])]])
    g = geo.CovariantTensorField(2, np.broadcast_to(L @ L.T, (2, 2, 2, 2)).copy(), S)
    B = np.array([[sym[0], sym[1]], [sym[1], sym[2]]])
    b = geo.CovariantTensorField(2, np.broadcast_to(B, (2, 2, 2, 2)).copy(), S)
    full = np.sqrt(geo.fiber_norm_sq(b, g))
    mx = geo.max_norm(b, g)
    assert np.all(full / 2 <= mx * (1 + 1e-9) + 1e-12)
    assert np.all(mx <= full * (1 + 1e-9) + 1e-12)


@given(st.floats(0.2, 5.0), st.floats(-3, 3))
def test_fiber_norm_nonnegative_and_homogeneous(scale, c):
    M = geo.circle(scale, 8)
    g = geo.first_fundamental_form(M)
    b = g * c
    val = geo.fiber_norm_sq(b, g)
    assert np.all(val >= 0)
    np.testing.assert_allclose(val, c * c, rtol=1e-12, atol=1e-300)


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------


def test_circle_length():
    assert geo.integrate(np.ones(64), geo.circle(1.0, 64)) == pytest.approx(2 * math.pi, abs=1e-10)


def test_sphere_area():
    R = 1.5
    S = geo.sphere(R, 128, 256)
    assert geo.integrate(np.ones(S.grid.shape), S) == pytest.approx(4 * math.pi * R * R, rel=1e-6)


def test_interval_quadrature_order():
    # trapezoid on an interval: doubling the node count cuts the error by about 4
    errs = []
    for n in (17, 33, 65):
        L = geo.segment((0.0, 0.0), (1.0, 0.0), n)
        x = L.grid.coords()[0]
        errs.append(abs(geo.integrate(np.cos(x) ** 2, L) - (0.5 + math.sin(2.0) / 4)))
    assert errs[0] / errs[1] >= 3.9
    assert errs[1] / errs[2] >= 3.9


def test_sphere_integral_of_polynomial():
    S = geo.sphere(1.0, 64, 128)
    z = S.positions[..., 2]
    assert geo.integrate(z**2, S) == pytest.approx(4 * math.pi / 3, rel=1e-8)


def test_integrate_rejects_nan():
    M = geo.circle(1.0, 8)
    with pytest.raises(NonFiniteInput):
        geo.integrate(np.full(8, np.nan), M)


# ---------------------------------------------------------------------------
# serialisation and projection
# ---------------------------------------------------------------------------


def test_json_round_trip(tmp_path):
    S = geo.sphere(1.0, 6, 12)
    g = geo.first_fundamental_form(S)
    path = tmp_path / "s.json"
    geo.save_json(path, S, {"g": g})
    S2, fields = geo.load_json(path)
    assert S2.grid == S.grid
    np.testing.assert_array_equal(S2.positions, S.positions)
    np.testing.assert_array_equal(fields["g"].components, g.components)


def test_projection_onto_ellipse():
    E = geo.ellipse(2.0, 1.0, 64)
    th = np.array([0.1, 1.3, 4.0])
    pts = np.stack([2 * np.cos(th), np.sin(th)], -1)
    u, dist = E.project(pts)
    np.testing.assert_allclose(dist, 0.0, atol=1e-12)
    np.testing.assert_allclose(np.mod(u[0], 2 * np.pi), th, atol=1e-10)
