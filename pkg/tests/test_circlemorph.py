import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morphforge.circlemorph import (
    A_from_P,
    CircleProblem,
    G_functional,
    J_functional,
    RadiusFunction,
    bump_identity_norm_sq,
    f_mu,
    hamiltonian_residual,
    optimality_probe,
    profile_integrals,
    radius_ivp,
    solve_circle,
    solve_multipliers,
    u_prime,
    u_profile,
)
from morphforge.errors import Infeasible, ValidationError

LN2_SQ = math.log(2.0) ** 2

# independent reference: scipy quad for I1, I2 and brentq on T(psi) = t / sqrt(lambda), R = 2
ORACLE = {
    0.001: (1.5629643453255035, 0.30606740274898414, 1.0554330208235028),
    500.0: (0.4804564721903964, 1045.5753218689533, 1.4132271630465767),
}


@pytest.fixture(scope="module")
def sol():
    return solve_circle(2.0, 0.5)


# ---------------------------------------------------------------------------
# profile and multipliers
# ---------------------------------------------------------------------------


def test_profile_values():
    assert u_profile(1.0) == 0.0
    assert u_profile(2.0) == 10.0
    s = np.linspace(1.0, 3.0, 9)
    h = 1e-6
    np.testing.assert_allclose((u_profile(s + h) - u_profile(s - h)) / (2 * h), u_prime(s), rtol=1e-8, atol=1e-8)


@pytest.mark.parametrize("mu", sorted(ORACLE))
def test_multipliers_match_oracle(mu):
    f_ref, lam_ref, psi_half = ORACLE[mu]
    assert f_mu(mu, 2.0) == pytest.approx(f_ref, rel=1e-10)
    _, i2 = profile_integrals(mu, 2.0)
    lam = 1.0 / i2**2
    assert lam == pytest.approx(lam_ref, rel=1e-10)
    assert RadiusFunction(mu, lam, 2.0)(0.5) == pytest.approx(psi_half, rel=1e-10)


def test_f_decreasing_towards_log_squared():
    mus = np.logspace(-3, 4, 15)
    vals = np.array([f_mu(m, 2.0) for m in mus])
    assert np.all(np.diff(vals) < 0)
    assert np.all(vals > LN2_SQ)
    assert vals[-1] - LN2_SQ < 1e-6


@settings(max_examples=15)
@given(st.floats(-3, 3))
def test_multipliers_roundtrip(log_mu):
    mu = 10.0**log_mu
    A = f_mu(mu, 2.0)
    got, lam = solve_multipliers(CircleProblem(2.0, A))
    assert got == pytest.approx(mu, rel=1e-6)
    assert RadiusFunction(got, lam, 2.0).total == pytest.approx(1 / math.sqrt(lam), rel=1e-10)


def test_companion_to_large_mu():
    # A given to full precision pins mu = 500 even though f is nearly flat there
    mu, lam = solve_multipliers(CircleProblem(2.0, ORACLE[500.0][0]))
    assert mu == pytest.approx(500.0, rel=1e-4)
    assert lam == pytest.approx(ORACLE[500.0][1], rel=1e-4)


def test_infeasible_below_log_squared():
    with pytest.raises(Infeasible):
        solve_circle(2.0, 0.4)
    assert not CircleProblem(2.0, LN2_SQ).feasible


@pytest.mark.parametrize("R, A", [(1.0, 1.0), (0.5, 1.0), (2.0, 0.0), (2.0, -1.0)])
def test_problem_validation(R, A):
    with pytest.raises(ValidationError):
        CircleProblem(R, A)


# ---------------------------------------------------------------------------
# radius function and functionals
# ---------------------------------------------------------------------------


def test_functionals_on_simple_paths():
    line = lambda t: 1.0 + t
    assert J_functional(line) == pytest.approx(43 / 15, rel=1e-13)
    assert G_functional(line, lambda t: np.ones_like(t), 0.5) == pytest.approx(0.0, abs=1e-13)
    geometric = lambda t: 2.0**t
    dgeo = lambda t: math.log(2.0) * 2.0**t
    assert G_functional(geometric, dgeo, 0.5) == pytest.approx(LN2_SQ - 0.5, rel=1e-13)


def test_solution_endpoints_and_monotone(sol):
    assert sol.psi[0] == 1.0
    assert sol.psi[-1] == pytest.approx(2.0, abs=1e-10)
    assert np.all(np.diff(sol.psi) > 0)
    assert sol.route_gap < 1e-8


def test_solution_diagnostics(sol):
    assert abs(sol.G_value) < 1e-6
    assert sol.hamiltonian_residual < 1e-6 * (1 + sol.mu)
    # both simple paths are admissible at A = 1/2, so the minimum is below them
    assert sol.J_value < J_functional(lambda t: 2.0**t)
    assert sol.J_value < 43 / 15


def test_ivp_matches_inversion(sol):
    t = np.linspace(0, 1, 11)
    np.testing.assert_allclose(radius_ivp(sol.mu, sol.lam, t, 512), sol.psi_at(t), atol=1e-10)


def test_multiplier_relation(sol):
    t = np.linspace(0.05, 0.95, 7)
    cheb = sol.radius.chebyshev
    np.testing.assert_allclose(cheb.deriv()(t), sol.dpsi_at(t), rtol=1e-7)
    assert hamiltonian_residual(sol.psi_at, sol.dpsi_at, sol.mu, sol.lam) < 1e-10


def test_radius_function_domain(sol):
    with pytest.raises(ValidationError):
        sol.psi_at(1.5)


def test_optimality_probe(sol):
    rep = optimality_probe(sol)
    assert rep["passed"]
    assert any(c["status"] == "increase" for c in rep["cases"])
    with pytest.raises(ValidationError):
        optimality_probe(sol, perturbations=[lambda t: np.cos(t)])


def test_to_dict(sol):
    d = sol.to_dict()
    assert d["mu"] == sol.mu and d["lambda"] == sol.lam
    assert len(d["psi"]) == 101


# ---------------------------------------------------------------------------
# norm bound to constraint level
# ---------------------------------------------------------------------------


def test_bump_identity_norm():
    val, err = bump_identity_norm_sq(2.0)
    # spectral value at n = 1025
    assert val == pytest.approx(1.2358527702e11, rel=1e-4)
    assert err < 0.1 * val


def test_A_from_P_scales_quadratically():
    a1 = A_from_P(1e5, 2.0, k=2)
    a2 = A_from_P(2e5, 2.0, k=2)
    assert a2 == pytest.approx(4 * a1, rel=1e-14)
    with pytest.raises(ValidationError):
        A_from_P(0.0, 2.0)
