"""Deformation energy of Möbius maps between the unit sphere and a sphere of radius R.

A Möbius map ``w -> (a w + b) / (c w + d)`` acts on the stereographic
coordinate ``w = (x + i y) / (1 - x_3)``.  Modulo left composition with
sphere isometries every class has a representative ``[[1, 0], [z, r]]``;
the energy depends only on ``q = |z|`` and ``r``:

    Psi_bar(q, r) = pi - 2 pi R^2
                    + pi R^4 / (3 r^2) (1 + q^2 + (r - 1) r) (1 + q^2 + r + r^2),

minimised at ``(q, r) = (0, 1)`` with value ``pi (R^2 - 1)^2``.

``Psi`` is normalised per unit of the conformal factors ``4/(1+|w|^2)^2``;
the deformation energy of the sampled map (``energy.phi``) equals
``8 Psi`` (see :func:`psi_pullback`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .errors import DegenerateMap, DomainError, PoleHit, QuadratureFailure, ValidationError
from .quadrature import _leggauss

PHI_OVER_PSI = 8.0


@dataclass(frozen=True)
class MobiusMap:
    a: complex
    b: complex
    c: complex
    d: complex

    def __post_init__(self):
        for name in "abcd":
            object.__setattr__(self, name, complex(getattr(self, name)))
        scale = max(abs(self.a), abs(self.b), abs(self.c), abs(self.d))
        if not math.isfinite(scale):
            raise ValidationError("Möbius coefficients must be finite")
        if abs(self.det) <= 1e-12 * scale * scale:
            raise DegenerateMap(f"ad - bc = {self.det} is numerically zero")

    @classmethod
    def from_matrix(cls, m) -> "MobiusMap":
        m = np.asarray(m, dtype=complex)
        return cls(m[0, 0], m[0, 1], m[1, 0], m[1, 1])

    @classmethod
    def unitary(cls, a: complex, c: complex) -> "MobiusMap":
        """Isometry ``w -> (a w - conj(c)) / (c w + conj(a))`` after normalising ``|a|^2 + |c|^2 = 1``."""
        s = math.sqrt(abs(a) ** 2 + abs(c) ** 2)
        a, c = a / s, c / s
        return cls(a, -np.conj(c), c, np.conj(a))

    @property
    def det(self) -> complex:
        return self.a * self.d - self.b * self.c

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]], dtype=complex)

    def normalized(self) -> "MobiusMap":
        s = np.sqrt(self.det)
        return MobiusMap(self.a / s, self.b / s, self.c / s, self.d / s)

    def __matmul__(self, other: "MobiusMap") -> "MobiusMap":
        return MobiusMap.from_matrix(self.matrix @ other.matrix)

    def __call__(self, w):
        w = np.asarray(w, dtype=complex)
        return (self.a * w + self.b) / (self.c * w + self.d)


@dataclass(frozen=True)
class CanonicalMobius:
    q: float
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise DomainError(f"canonical r must be positive, got {self.r}")
        if not self.q >= 0:
            raise DomainError(f"canonical q must be nonnegative, got {self.q}")

    def as_map(self) -> MobiusMap:
        return MobiusMap(1.0, 0.0, self.q, self.r)


def reduce(m: MobiusMap) -> CanonicalMobius:
    """Canonical ``(q, r)`` of the class of ``m`` modulo left isometries.

    With ``m`` normalised to unit determinant, the isometry with ``a = delta``,
    ``c = conj(beta)`` brings it to ``[[1, 0], [z, r]]`` where
    ``z = conj(beta) alpha + conj(delta) gamma`` and
    ``r = |beta|^2 + |delta|^2``.
    """
    n = m.normalized()
    z = np.conj(n.b) * n.a + np.conj(n.d) * n.c
    r = abs(n.b) ** 2 + abs(n.d) ** 2
    return CanonicalMobius(float(abs(z)), float(r))


# ---------------------------------------------------------------------------
# closed form, gradient, Hessian
# ---------------------------------------------------------------------------


def _check_r(r):
    if np.any(np.asarray(r) <= 0):
        raise DomainError("r must be positive")


def psi_bar_closed(q, r, R):
    _check_r(r)
    q2 = np.asarray(q, dtype=float) ** 2
    r = np.asarray(r, dtype=float)
    return math.pi - 2 * math.pi * R**2 + math.pi * R**4 / (3 * r**2) * (1 + q2 + (r - 1) * r) * (1 + q2 + r + r * r)


def min_value(R: float) -> float:
    """``pi (R^2 - 1)^2``."""
    return math.pi * (R * R - 1.0) ** 2


@dataclass(frozen=True)
class HessianReport:
    hessian: np.ndarray
    gradient: np.ndarray
    det_entrywise: float
    det_formula: float
    positive_definite: bool


def hessian_F(q: float, r: float, R: float) -> HessianReport:
    """Hessian and gradient of ``F(q, r) = Psi_bar(q, r)``; definiteness by leading minors."""
    _check_r(r)
    k = math.pi * R**4
    h11 = 4 * k * (1 + 3 * q * q + r * r) / (3 * r * r)
    h12 = -8 * k * q * (1 + q * q) / (3 * r**3)
    h22 = 2 * k * (3 + 6 * q * q + 3 * q**4 + r**4) / (3 * r**4)
    H = np.array([[h11, h12], [h12, h22]])
    s = q * q
    det_formula = (
        8 * math.pi**2 * R**8 / (9 * r**6)
        * (3 + s**3 + 3 * r * r + r**4 + r**6 + s * s * (5 + 3 * r * r) + s * (7 + 6 * r * r + 3 * r**4))
    )
    grad = np.array([
        4 * k * q * (s + r * r + 1) / (3 * r * r),
        -2 * k * (s - r * r + 1) * (s + r * r + 1) / (3 * r**3),
    ])
    det = h11 * h22 - h12 * h12
    return HessianReport(H, grad, float(det), float(det_formula), bool(h11 > 0 and det > 0))


# ---------------------------------------------------------------------------
# quadrature route
# ---------------------------------------------------------------------------


def inner_integrals(xi, eta) -> tuple[np.ndarray, np.ndarray]:
    """``int_0^{2pi} (xi + eta cos phi)^-k dphi`` for ``k = 2, 4``."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if np.any(xi <= np.abs(eta)):
        raise DomainError("inner integrals need xi > |eta|")
    disc = xi * xi - eta * eta
    i2 = 2 * math.pi * xi / disc**1.5
    i4 = math.pi * xi * (2 * xi * xi + 3 * eta * eta) / disc**3.5
    return i2, i4


def periodic_trapezoid(f, n: int = 128, rtol: float = 1e-13, max_n: int = 1 << 18) -> float:
    """Trapezoid rule on ``[0, 2 pi)``, doubling ``n`` until successive values agree."""
    prev = None
    while n <= max_n:
        phi = 2 * math.pi * np.arange(n) / n
        val = float(np.sum(f(phi)) * 2 * math.pi / n)
        if prev is not None and abs(val - prev) <= rtol * abs(val):
            return val
        prev = val
        n *= 2
    raise QuadratureFailure("periodic trapezoid did not converge")


def inner_integrals_quadrature(xi: float, eta: float, rtol: float = 1e-13) -> tuple[float, float]:
    if xi <= abs(eta):
        raise DomainError("inner integrals need xi > |eta|")
    i2 = periodic_trapezoid(lambda p: (xi + eta * np.cos(p)) ** -2, rtol=rtol)
    i4 = periodic_trapezoid(lambda p: (xi + eta * np.cos(p)) ** -4, rtol=rtol)
    return i2, i4


def psi_bar_quadrature(
    q: float, r: float, R: float, panels: int = 64, order: int = 16, n_phi: int = 128, rtol: float = 1e-12
) -> float:
    """Double integral in polar coordinates with ``rho = tan(sigma)``.

    Composite Gauss-Legendre in ``sigma`` on ``(0, pi/2)``; periodic
    trapezoid in ``phi`` with ``n_phi`` doubled until the result changes by
    less than ``rtol`` relative.
    """
    _check_r(r)
    x, w = _leggauss(order)
    edges = np.linspace(0.0, math.pi / 2, panels + 1)
    half = 0.5 * np.diff(edges)[:, None]
    sig = (0.5 * (edges[:-1] + edges[1:]))[:, None] + half * x
    wts = (half * w).ravel()
    sig = sig.ravel()
    rho = np.tan(sig)
    jac = 1.0 / np.cos(sig) ** 2
    xi = rho * rho * (1 + q * q) + r * r
    eta = 2 * rho * q * r
    rr = (R * r) ** 2
    base = 1.0 / (1 + rho * rho) ** 2

    def evaluate(n):
        phi = 2 * math.pi * np.arange(n) / n
        den = (xi[:, None] + eta[:, None] * np.cos(phi)) ** 2
        integrand = (rr / den - base[:, None]) ** 2
        inner = integrand.sum(axis=1) * (2 * math.pi / n)
        K = inner * (1 + rho * rho) ** 2 * rho
        return float(np.sum(wts * K * jac))

    prev = evaluate(n_phi)
    while n_phi < 1 << 14:
        n_phi *= 2
        val = evaluate(n_phi)
        if abs(val - prev) <= rtol * max(abs(val), 1e-300):
            return val
        prev = val
    raise QuadratureFailure("angular quadrature did not converge")


def psi_bar_from_inner(q: float, r: float, R: float, panels: int = 64, order: int = 16) -> float:
    """Radial quadrature of the inner integral expressed through :func:`inner_integrals`."""
    _check_r(r)
    x, w = _leggauss(order)
    edges = np.linspace(0.0, math.pi / 2, panels + 1)
    half = 0.5 * np.diff(edges)[:, None]
    sig = ((0.5 * (edges[:-1] + edges[1:]))[:, None] + half * x).ravel()
    wts = (half * w).ravel()
    rho = np.tan(sig)
    xi = rho * rho * (1 + q * q) + r * r
    eta = 2 * rho * q * r
    i2, i4 = inner_integrals(xi, eta)
    s = 1 + rho * rho
    K = ((R * r) ** 4 * i4 - 2 * (R * r) ** 2 * i2 / s**2 + 2 * math.pi / s**4) * rho * s**2
    return float(np.sum(wts * K / np.cos(sig) ** 2))


# ---------------------------------------------------------------------------
# Möbius maps on embedded spheres
# ---------------------------------------------------------------------------


def pullback_metric_mobius(m: MobiusMap, z, R: float = 1.0):
    """Conformal factor of ``h^* g_N`` in the stereographic coordinate ``z``."""
    z = np.asarray(z, dtype=complex)
    if not np.all(np.isfinite(z)):
        raise PoleHit("evaluation at z = infinity")
    cz_d = m.c * z + m.d
    if np.any(np.abs(cz_d) <= 1e-14 * (abs(m.c) * np.abs(z) + abs(m.d))):
        raise PoleHit("evaluation at the pole of the Möbius map")
    return 4 * R * R * abs(m.det) ** 2 / (np.abs(m.a * z + m.b) ** 2 + np.abs(cz_d) ** 2) ** 2


def stereographic(w) -> np.ndarray:
    """Unit-sphere point for the stereographic coordinate ``w``."""
    w = np.asarray(w, dtype=complex)
    n = 1 + np.abs(w) ** 2
    return np.stack([2 * w.real / n, 2 * w.imag / n, (np.abs(w) ** 2 - 1) / n], axis=-1)


def _projective_point(W1, W2):
    n = np.abs(W1) ** 2 + np.abs(W2) ** 2
    p = 2 * W1 * np.conj(W2)
    return np.stack([p.real, p.imag, np.abs(W1) ** 2 - np.abs(W2) ** 2], axis=-1) / n[..., None], n


def _projective_derivative(W1, W2, dW1, dW2):
    pt, n = _projective_point(W1, W2)
    dn = 2 * np.real(np.conj(W1) * dW1 + np.conj(W2) * dW2)
    dp = 2 * (dW1 * np.conj(W2) + W1 * np.conj(dW2))
    dnum = np.stack([dp.real, dp.imag, 2 * np.real(np.conj(W1) * dW1 - np.conj(W2) * dW2)], axis=-1)
    return dnum / n[..., None] - pt * (dn / n)[..., None]


def mobius_sphere_map(m: MobiusMap, M: geo.EmbeddedManifold, R: float) -> geo.MapDifferentialSamples:
    """Samples of the map ``M = S^2 -> R S^2`` whose stereographic form is ``m``.

    Works in homogeneous coordinates ``(Z1, Z2) = (cos(theta/2) e^{i phi},
    sin(theta/2))`` so neither the north pole nor the pole of ``m`` needs a
    chart change.  ``M`` must be a unit sphere on the ``(theta, phi)`` grid.
    """
    th, ph = M.grid.coords()
    e = np.exp(1j * ph)
    Z1, Z2 = np.cos(th / 2) * e, np.sin(th / 2) + 0j
    dZ1_t, dZ2_t = -0.5 * np.sin(th / 2) * e, 0.5 * np.cos(th / 2) + 0j
    dZ1_p, dZ2_p = 1j * Z1, np.zeros_like(Z2)

    def act(x1, x2):
        return m.a * x1 + m.b * x2, m.c * x1 + m.d * x2

    W1, W2 = act(Z1, Z2)
    img, _ = _projective_point(W1, W2)
    d_t = _projective_derivative(W1, W2, *act(dZ1_t, dZ2_t))
    d_p = _projective_derivative(W1, W2, *act(dZ1_p, dZ2_p))
    return geo.MapDifferentialSamples(R * img, R * np.stack([d_t, d_p], axis=-2))


def psi_pullback(m: MobiusMap, R: float, n_theta: int = 256, n_phi: int = 512) -> float:
    """``Psi`` of ``m`` from the deformation energy of the sampled sphere map (``Phi / 8``)."""
    from .energy import phi

    M = geo.sphere(1.0, n_theta, n_phi)
    N = geo.sphere(R, 8, 16)
    return phi(mobius_sphere_map(m, M, R), M, N) / PHI_OVER_PSI


def sphere_report(c: CanonicalMobius, R: float, quadrature: bool = False) -> dict:
    """Closed form, optional quadrature, derivatives and the reference minimum."""
    hr = hessian_F(c.q, c.r, R)
    return {
        "canonical": {"q": c.q, "r": c.r},
        "psi_bar_closed": float(psi_bar_closed(c.q, c.r, R)),
        "psi_bar_quadrature": psi_bar_quadrature(c.q, c.r, R) if quadrature else None,
        "gradient": hr.gradient.tolist(),
        "hessian": hr.hessian.tolist(),
        "positive_definite": hr.positive_definite,
        "min_value_reference": min_value(R),
    }
