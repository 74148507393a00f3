"""Minimal-distortion morph between the unit circle and a circle of radius R.

Among radial morphs ``H(p, t) = psi(t) p`` the energy reduces to

    J(psi) = int_0^1 (psi^2 - 1)^2 + (psi - 1)^2 dt = int_0^1 u(psi) dt

under the constraint ``G(psi) = int_0^1 (psi'/psi)^2 dt - A <= 0``.  The
minimizer satisfies ``lambda psi'^2 / psi^2 = u(psi) + mu`` with multipliers
determined by

    f(mu) = I1(mu) I2(mu) = A,    lambda = I2(mu)^-2,

    I1 = int_1^R sqrt(mu + u(s)) / s ds,   I2 = int_1^R ds / (s sqrt(mu + u(s))).

All integrals over ``[1, R]`` use ``s = 1 + exp(sigma)``, which resolves the
boundary layer of width ``~sqrt(mu)`` at ``s = 1`` for small ``mu``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Chebyshev

from .errors import BracketFailure, Infeasible, ValidationError
from .quadrature import _leggauss, adaptive_gauss_legendre

log = logging.getLogger(__name__)

QUAD_RTOL = 1e-10
CROSS_TOL = 1e-5
MU_MAX = 1e12
MU_MIN = 1e-30
CHEB_DEGREE = 128


def u_profile(s):
    """``u(s) = (s^2 - 1)^2 + (s - 1)^2``."""
    s = np.asarray(s, dtype=float)
    return (s * s - 1.0) ** 2 + (s - 1.0) ** 2


def u_prime(s):
    s = np.asarray(s, dtype=float)
    return 4.0 * s * (s * s - 1.0) + 2.0 * (s - 1.0)


def _check_R(R: float) -> None:
    if not R > 1:
        raise ValidationError(f"target radius must satisfy R > 1, got R={R}")


def _layer_cut(mu: float) -> float:
    """``s - 1`` below which the integrands are replaced by their value at ``s = 1``."""
    return 1e-12 * min(1.0, math.sqrt(mu))


def _integral_over_profile(g: Callable, mu: float, R: float, rtol: float) -> float:
    """``int_1^R g(s) ds`` via ``s = 1 + e^sigma`` plus a first-order tail."""
    eps = _layer_cut(mu)

    def integrand(sig):
        e = np.exp(sig)
        return g(1.0 + e) * e

    body = adaptive_gauss_legendre(integrand, math.log(eps), math.log(R - 1.0), rtol=rtol)
    return body + eps * float(g(np.array(1.0)))


def profile_integrals(mu: float, R: float, rtol: float = QUAD_RTOL) -> tuple[float, float]:
    """``(I1, I2)`` for the multiplier ``mu > 0``."""
    if not mu > 0:
        raise ValidationError(f"mu must be positive, got {mu}")
    _check_R(R)
    i1 = _integral_over_profile(lambda s: np.sqrt(mu + u_profile(s)) / s, mu, R, rtol)
    i2 = _integral_over_profile(lambda s: 1.0 / (s * np.sqrt(mu + u_profile(s))), mu, R, rtol)
    return i1, i2


def f_mu(mu: float, R: float, rtol: float = QUAD_RTOL) -> float:
    """``f(mu) = I1(mu) I2(mu)``; strictly decreasing with limit ``log(R)^2``."""
    i1, i2 = profile_integrals(mu, R, rtol)
    return i1 * i2


# ---------------------------------------------------------------------------
# problem and multipliers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CircleProblem:
    """Target radius ``R`` and constraint level ``A``.

    ``A`` may instead be derived from a norm bound ``P`` through
    ``A = P^2 / ||rho id||^2_{W^{k,2}}`` (see :func:`A_from_P`).
    """

    R: float
    A: float

    def __post_init__(self):
        _check_R(self.R)
        if not self.A > 0:
            raise ValidationError(f"constraint level must satisfy A > 0, got A={self.A}")

    @property
    def feasible(self) -> bool:
        return self.A > math.log(self.R) ** 2


def bump_identity_norm_sq(R: float, k: int = 5, n: int = 513, method: str = "spectral") -> tuple[float, float]:
    """``||rho id||^2_{W^{k,2}(Omega)}`` and its error estimate.

    ``Omega`` is the ball of radius ``R + 2`` and ``rho`` the smooth-step
    bump with plateau ``R + 1`` and support ``R + 2``.  Second-order finite
    differences need impractically fine grids at ``k = 5`` (the bump's high
    derivatives are large), hence the spectral default.
    """
    from .flow import Ball, BumpFunction, scaled_identity_field, sobolev_norm_sq

    _check_R(R)
    field_ = scaled_identity_field(lambda t: 1.0, BumpFunction(R + 1.0, R + 2.0), Ball((0.0, 0.0), R + 2.0))
    return sobolev_norm_sq(field_, k, t_nodes=[0.0], n=n, return_error=True, method=method)


def A_from_P(P: float, R: float, k: int = 5, n: int = 513, method: str = "spectral") -> float:
    """Constraint level ``A = P^2 / ||rho id||^2`` implied by the norm bound ``P``."""
    if not P > 0:
        raise ValidationError("P must be positive")
    norm_sq, _ = bump_identity_norm_sq(R, k, n, method)
    return P * P / norm_sq


def solve_multipliers(p: CircleProblem, rtol: float = QUAD_RTOL) -> tuple[float, float]:
    """Solve ``f(mu) = A`` by bracketed bisection in ``log(mu)``; ``lambda = I2^-2``.

    Raises
    ------
    Infeasible
        If ``A <= log(R)^2``.
    BracketFailure
        If no sign change is found for ``mu`` in ``[1e-30, 1e12]``.
    """
    if not p.feasible:
        raise Infeasible(f"A={p.A} does not exceed log(R)^2={math.log(p.R) ** 2}")
    A, R = p.A, p.R
    lo, hi = 1e-6, 1.0
    f_lo = f_mu(lo, R, rtol)
    while f_lo < A:
        hi, lo = lo, lo / 10.0
        if lo < MU_MIN:
            raise BracketFailure(f"f(mu) stays below A={A} down to mu={MU_MIN}")
        f_lo = f_mu(lo, R, rtol)
    f_hi = f_mu(hi, R, rtol)
    while f_hi > A:
        lo, f_lo = hi, f_hi
        hi *= 10.0
        if hi > MU_MAX:
            raise BracketFailure(f"f(mu) stays above A={A} up to mu_max={MU_MAX:g}")
        f_hi = f_mu(hi, R, rtol)
    a, b = math.log(lo), math.log(hi)
    mid = 0.5 * (a + b)
    for _ in range(200):
        mid = 0.5 * (a + b)
        fm = f_mu(math.exp(mid), R, rtol)
        if abs(fm - A) <= 1e-12 * A or b - a < 1e-15 * max(1.0, abs(mid)):
            break
        if fm > A:
            a = mid
        else:
            b = mid
    mu = math.exp(mid)
    _, i2 = profile_integrals(mu, R, rtol)
    return mu, 1.0 / (i2 * i2)


# ---------------------------------------------------------------------------
# radius function
# ---------------------------------------------------------------------------


class RadiusFunction:
    """``psi(t)`` by inverting ``T(psi) = t / sqrt(lambda)``.

    ``T(x) = int_1^x ds / (s sqrt(mu + u(s)))`` is tabulated on uniform
    panels in ``sigma = log(s - 1)`` with Gauss-Legendre sums, and each
    inversion is a Newton iteration inside one panel.
    """

    def __init__(self, mu: float, lam: float, R: float, panels: int = 320, order: int = 20):
        _check_R(R)
        if not (mu > 0 and lam > 0):
            raise ValidationError("multipliers must be positive")
        self.mu, self.lam, self.R = float(mu), float(lam), float(R)
        self._x, self._w = _leggauss(order)
        self._eps = _layer_cut(mu)
        self._edges = np.linspace(math.log(self._eps), math.log(R - 1.0), panels + 1)
        tail = self._eps / math.sqrt(mu)
        parts = np.array([self._partial(self._edges[i], self._edges[i + 1]) for i in range(panels)])
        self._cum = tail + np.concatenate([[0.0], np.cumsum(parts)])

    def _dT(self, sig):
        e = np.exp(sig)
        s = 1.0 + e
        return e / (s * np.sqrt(self.mu + u_profile(s)))

    def _partial(self, a, b):
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        half = 0.5 * (b - a)
        nodes = 0.5 * (a + b)[..., None] + half[..., None] * self._x
        return half * np.sum(self._w * self._dT(nodes), axis=-1)

    @property
    def total(self) -> float:
        """``T(R)``; equals ``1/sqrt(lambda)`` when the multipliers are consistent."""
        return float(self._cum[-1])

    def T(self, x) -> np.ndarray:
        """``T(x)`` for ``x`` in ``[1, R]``."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        above = x - 1.0 > self._eps
        out[~above] = (x[~above] - 1.0) / math.sqrt(self.mu)
        sig = np.log(x[above] - 1.0)
        k = np.clip(np.searchsorted(self._edges, sig) - 1, 0, len(self._edges) - 2)
        out[above] = self._cum[k] + self._partial(self._edges[k], sig)
        return out

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any((t < 0) | (t > 1)):
            raise ValidationError("radius function is defined on [0, 1]")
        tau = np.atleast_1d(t / math.sqrt(self.lam))
        out = np.empty_like(tau)
        low = tau <= self._cum[0]
        out[low] = 1.0 + tau[low] * math.sqrt(self.mu)
        tt = tau[~low]
        k = np.clip(np.searchsorted(self._cum, tt) - 1, 0, len(self._edges) - 2)
        a, b = self._edges[k], self._edges[k + 1]
        span = self._cum[k + 1] - self._cum[k]
        sig = a + (b - a) * np.clip((tt - self._cum[k]) / span, 0.0, 1.0)
        for _ in range(50):
            res = self._cum[k] + self._partial(a, sig) - tt
            step = res / self._dT(sig)
            sig = np.clip(sig - step, a, b + 1e-12 * (b - a))
            if np.max(np.abs(step), initial=0.0) < 1e-15 * (1 + np.max(np.abs(sig))):
                break
        out[~low] = 1.0 + np.exp(sig)
        out = np.where(t.reshape(-1) == 0, 1.0, out) if out.size else out
        return out.reshape(t.shape)

    @cached_property
    def chebyshev(self) -> Chebyshev:
        return Chebyshev.interpolate(lambda s: self(s), CHEB_DEGREE, domain=[0.0, 1.0])


def radius_ivp(mu: float, lam: float, t_grid, steps_per_interval: int = 64) -> np.ndarray:
    """RK4 for ``psi' = psi sqrt(mu + u(psi)) / sqrt(lambda)``, ``psi(0) = 1``."""
    t_grid = np.asarray(t_grid, dtype=float)
    rate = 1.0 / math.sqrt(lam)

    def rhs(p):
        return p * np.sqrt(mu + u_profile(p)) * rate

    out = np.empty_like(t_grid)
    p = 1.0
    out[0] = p
    for k in range(len(t_grid) - 1):
        h = (t_grid[k + 1] - t_grid[k]) / steps_per_interval
        for _ in range(steps_per_interval):
            k1 = rhs(p)
            k2 = rhs(p + 0.5 * h * k1)
            k3 = rhs(p + 0.5 * h * k2)
            k4 = rhs(p + h * k3)
            p = p + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = p
    return out


def solve_radius(mu: float, lam: float, R: float, t_grid, cross_tol: float = CROSS_TOL):
    """Sampled ``psi`` on ``t_grid`` by integral inversion, cross-checked by the IVP.

    Returns ``(psi, psi_ivp, gap, radius_function)``; the gap above
    ``cross_tol`` is logged, not raised, and recorded by the caller.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    rf = RadiusFunction(mu, lam, R)
    psi = rf(t_grid)
    steps = max(8, int(math.ceil(4096 / max(1, len(t_grid) - 1))))
    psi_ivp = radius_ivp(mu, lam, t_grid, steps)
    gap = float(np.max(np.abs(psi - psi_ivp)))
    if gap > cross_tol:
        log.warning("IVP and integral inversion differ by %.3e (cross_tol %.1e)", gap, cross_tol)
    return psi, psi_ivp, gap, rf


# ---------------------------------------------------------------------------
# functionals and verification
# ---------------------------------------------------------------------------


def _gauss_nodes(n: int = 96):
    x, w = _leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def J_functional(psi: Callable, n: int = 96) -> float:
    """``int_0^1 (psi^2 - 1)^2 + (psi - 1)^2 dt``."""
    t, w = _gauss_nodes(n)
    return float(np.dot(w, u_profile(psi(t))))


def G_functional(psi: Callable, dpsi: Callable, A: float, n: int = 96) -> float:
    """``int_0^1 (psi'/psi)^2 dt - A``."""
    t, w = _gauss_nodes(n)
    return float(np.dot(w, (dpsi(t) / psi(t)) ** 2)) - A


def hamiltonian_residual(psi: Callable, dpsi: Callable, mu: float, lam: float, t=None) -> float:
    """``max_t |p^2 psi^2 / (4 lambda) - u(psi) - mu|`` with ``p = 2 lambda psi' / psi^2``."""
    if t is None:
        t = np.linspace(0.0, 1.0, 513)
    ps, dp = psi(t), dpsi(t)
    p = 2.0 * lam * dp / ps**2
    return float(np.max(np.abs(p * p * ps * ps / (4.0 * lam) - u_profile(ps) - mu)))


@dataclass
class CircleMorphSolution:
    """Multipliers, sampled radius function and diagnostics."""

    R: float
    A: float
    mu: float
    lam: float
    t: np.ndarray
    psi: np.ndarray
    psi_ivp: np.ndarray
    route_gap: float
    radius: RadiusFunction = field(repr=False)
    J_value: float = float("nan")
    G_value: float = float("nan")
    hamiltonian_residual: float = float("nan")
    tolerances: dict = field(default_factory=dict)

    def psi_at(self, t):
        return self.radius(t)

    def dpsi_at(self, t):
        """``psi'`` from the multiplier relation ``psi' = psi sqrt(mu + u) / sqrt(lambda)``."""
        p = self.radius(t)
        return p * np.sqrt(self.mu + u_profile(p)) / math.sqrt(self.lam)

    def to_dict(self) -> dict:
        return {
            "R": self.R,
            "A": self.A,
            "mu": self.mu,
            "lambda": self.lam,
            "J": self.J_value,
            "G": self.G_value,
            "hamiltonian_residual": self.hamiltonian_residual,
            "route_gap": self.route_gap,
            "tolerances": self.tolerances,
            "psi": [[float(a), float(b)] for a, b in zip(self.t, self.psi)],
        }


def verify_solution(sol: CircleMorphSolution) -> dict:
    """``J``, ``G`` and the Hamiltonian residual of ``sol``.

    ``psi'`` comes from the spectral derivative of a Chebyshev interpolant of
    the inverted radius function, not from the multiplier relation, so the
    Hamiltonian check is independent of the ODE being verified.
    """
    cheb = sol.radius.chebyshev
    d = cheb.deriv()
    J = J_functional(sol.radius)
    G = G_functional(cheb, d, sol.A)
    H = hamiltonian_residual(cheb, d, sol.mu, sol.lam)
    return {
        "J": J,
        "G": G,
        "hamiltonian_residual": H,
        "G_ok": abs(G) < 1e-4,
        "hamiltonian_ok": H < 1e-6 * (1.0 + sol.mu),
    }


def solve_circle(R: float, A: float, t_samples: int = 101, rtol: float = QUAD_RTOL, cross_tol: float = CROSS_TOL) -> CircleMorphSolution:
    """Multipliers, radius function on a uniform grid and its diagnostics."""
    if t_samples < 2:
        raise ValidationError("need at least two t samples")
    prob = CircleProblem(R, A)
    mu, lam = solve_multipliers(prob, rtol)
    t = np.linspace(0.0, 1.0, t_samples)
    psi, psi_ivp, gap, rf = solve_radius(mu, lam, R, t, cross_tol)
    sol = CircleMorphSolution(
        R, A, mu, lam, t, psi, psi_ivp, gap, rf,
        tolerances={"quad_rtol": rtol, "cross_tol": cross_tol, "constraint_tol": 1e-4},
    )
    diag = verify_solution(sol)
    sol.J_value, sol.G_value, sol.hamiltonian_residual = diag["J"], diag["G"], diag["hamiltonian_residual"]
    return sol


def optimality_probe(
    sol: CircleMorphSolution,
    perturbations: Sequence[Callable] | None = None,
    eps: Sequence[float] = (0.05, -0.05, 0.01, -0.01),
    max_halvings: int = 20,
    tol: float = 1e-8,
) -> dict:
    """Local-minimality smoke test of ``J`` along ``psi + eps * delta``.

    Each ``delta`` must vanish at ``t = 0`` and ``t = 1``.  When the
    perturbed function violates ``G <= 0`` or monotonicity, ``eps`` is
    halved; if that never restores feasibility the case is skipped.
    """
    if perturbations is None:
        perturbations = [lambda t: np.sin(np.pi * t), lambda t: t * (1 - t), lambda t: np.sin(2 * np.pi * t)]
    base = sol.radius.chebyshev
    J0 = J_functional(base)
    check_t = np.linspace(0.0, 1.0, 401)
    cases = []
    for i, delta in enumerate(perturbations):
        if abs(delta(np.array(0.0))) > 1e-12 or abs(delta(np.array(1.0))) > 1e-12:
            raise ValidationError(f"perturbation {i} does not vanish at the endpoints")
        dc = Chebyshev.interpolate(delta, CHEB_DEGREE, domain=[0.0, 1.0])
        for e in eps:
            used = e
            status = "skipped"
            J = G = None
            for _ in range(max_halvings + 1):
                trial = base + used * dc
                G = G_functional(trial, trial.deriv(), sol.A)
                monotone = np.all(np.diff(trial(check_t)) > 0)
                if G <= 1e-12 and monotone:
                    J = J_functional(trial)
                    status = "increase" if J >= J0 - tol else "decrease"
                    break
                used *= 0.5
            cases.append({"perturbation": i, "eps": e, "eps_used": used if status != "skipped" else None,
                          "J": J, "G": G, "status": status})
    return {
        "J0": J0,
        "cases": cases,
        "passed": all(c["status"] != "decrease" for c in cases),
    }
