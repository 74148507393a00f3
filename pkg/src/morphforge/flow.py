"""Time-dependent velocity fields and their evolution operators.

A :class:`VelocityField` evaluates ``v(x, t)`` for a batch of points
``x`` of shape ``(P, d)`` together with its spatial Jacobian
``jac[p, i, j] = dv_i/dx_j`` and Hessian ``hess[p, i, j, k]``.
:func:`evolve` integrates ``dq/dt = v(q, t)`` with classical RK4 and
transports first and second spatial derivatives alongside the points.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import GridTooCoarse, InverseFailure, LeftDomain, NoConvergence, ValidationError

log = logging.getLogger(__name__)

DEFAULT_RK_TOL = 1e-9


# ---------------------------------------------------------------------------
# domains and bump functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius > 0:
            raise ValidationError("domain radius must be positive")

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def contains(self, x: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.asarray(x) - np.asarray(self.center), axis=-1) < self.radius

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius


@dataclass(frozen=True)
class Box:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(c) for c in self.lower))
        object.__setattr__(self, "upper", tuple(float(c) for c in self.upper))
        if not all(u > l for l, u in zip(self.lower, self.upper)):
            raise ValidationError("box upper corner must exceed lower corner")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(np.subtract(self.upper, self.lower)))

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        return np.all((x > np.asarray(self.lower)) & (x < np.asarray(self.upper)), axis=-1)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.lower), np.asarray(self.upper)


def _e(s):
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def smooth_step(s, order: int = 0):
    """``S(s) = e(s) / (e(s) + e(1 - s))`` with ``e(s) = exp(-1/s)`` for ``s > 0``.

    Returns the value (``order=0``) or the tuple ``(S, S', S'')`` (``order=2``).
    """
    s = np.asarray(s, dtype=float)
    a, b = _e(s), _e(1.0 - s)
    val = a / (a + b)
    if order == 0:
        return val
    inside = (s > 0) & (s < 1)
    si = np.where(inside, s, 0.5)
    ti = 1.0 - si
    ea, eb = np.exp(-1.0 / si), np.exp(-1.0 / ti)
    da = ea / si**2
    db = -eb / ti**2
    dda = ea * (1.0 / si**4 - 2.0 / si**3)
    ddb = eb * (1.0 / ti**4 - 2.0 / ti**3)
    den = ea + eb
    num = da * eb - ea * db
    d1 = num / den**2
    d2 = (dda * eb - ea * ddb) / den**2 - 2.0 * num * (da + db) / den**3
    d1 = np.where(inside, d1, 0.0)
    d2 = np.where(inside, d2, 0.0)
    return val, d1, d2


@dataclass(frozen=True)
class BumpFunction:
    """Radial cutoff: 1 on ``|x - c| <= r1``, 0 on ``|x - c| >= r2``, smooth between."""

    r1: float
    r2: float
    center: tuple[float, ...] | None = None

    def __post_init__(self):
        if not 0 <= self.r1 < self.r2:
            raise ValidationError(f"bump radii must satisfy 0 <= r1 < r2, got {self.r1}, {self.r2}")

    def _offset(self, x):
        x = np.asarray(x, dtype=float)
        return x if self.center is None else x - np.asarray(self.center)

    def __call__(self, x) -> np.ndarray:
        return bump_eval(self, x)

    def derivatives(self, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return bump_eval(self, x, order=2)


def bump_eval(bump: BumpFunction, x, order: int = 0):
    """Value of the bump at ``x`` (``order=0``) or ``(rho, grad, hess)`` (``order=2``)."""
    if order not in (0, 1, 2):
        raise ValidationError("bump derivatives are available up to order 2")
    y = bump._offset(x)
    lead, d = y.shape[:-1], y.shape[-1]
    y = y.reshape(-1, d)
    r = np.linalg.norm(y, axis=-1)
    val = (r <= bump.r1).astype(float)
    grad = np.zeros(y.shape) if order >= 1 else None
    hess = np.zeros(y.shape + (d,)) if order == 2 else None
    shell = (r > bump.r1) & (r < bump.r2)
    if np.any(shell):
        width = bump.r2 - bump.r1
        rs, ys = r[shell], y[shell]
        s = (bump.r2 - rs) / width
        if order == 0:
            val[shell] = smooth_step(s)
        else:
            v0, d1, d2 = smooth_step(s, order=2)
            val[shell] = v0
            unit = ys / rs[:, None]
            grad[shell] = (-d1 / width)[:, None] * unit
            if order == 2:
                outer = unit[:, :, None] * unit[:, None, :]
                hess[shell] = (d2 / width**2)[:, None, None] * outer + (-d1 / width / rs)[:, None, None] * (
                    np.eye(d) - outer
                )
    val = val.reshape(lead)
    if order == 0:
        return val
    grad = grad.reshape(lead + (d,))
    if order == 1:
        return val, grad
    return val, grad, hess.reshape(lead + (d, d))


# ---------------------------------------------------------------------------
# velocity fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VelocityField:
    """A time-dependent vector field on a domain.

    ``jac``/``hess`` may be omitted; derivatives then fall back to central
    differences with step ``fd_step`` (default ``1e-4`` times the domain
    diameter).
    """

    v: Callable[[np.ndarray, float], np.ndarray]
    domain: Ball | Box
    jac: Callable | None = None
    hess: Callable | None = None
    fd_step: float | None = None
    name: str = "custom"

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def derivative_mode(self) -> str:
        return "analytic" if self.jac is not None and self.hess is not None else "finite-difference"

    @property
    def step(self) -> float:
        return self.fd_step if self.fd_step is not None else 1e-4 * self.domain.diameter

    def __call__(self, x, t: float) -> np.ndarray:
        return self.v(np.asarray(x, dtype=float), float(t))

    def jacobian(self, x, t: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.jac is not None:
            return self.jac(x, float(t))
        return self._fd(lambda y: self.v(y, float(t)), x)

    def hessian(self, x, t: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.hess is not None:
            return self.hess(x, float(t))
        return self._fd(lambda y: self.jacobian(y, t), x)

    def _fd(self, fn, x):
        h = self.step
        cols = []
        for j in range(x.shape[-1]):
            e = np.zeros(x.shape[-1])
            e[j] = h
            cols.append((fn(x + e) - fn(x - e)) / (2 * h))
        return np.stack(cols, axis=-1)


def _bumped(w, dw, d2w, bump: BumpFunction | None, domain, name) -> VelocityField:
    """``v = rho * w`` with product-rule derivatives."""
    if bump is None:
        return VelocityField(w, domain, dw, d2w, name=name)

    def v(x, t):
        return bump(x)[..., None] * w(x, t)

    def jac(x, t):
        rho, g = bump_eval(bump, x, order=1)
        return rho[..., None, None] * dw(x, t) + w(x, t)[..., :, None] * g[..., None, :]

    def hess(x, t):
        rho, g, hh = bump_eval(bump, x, order=2)
        dwx = dw(x, t)
        out = rho[..., None, None, None] * d2w(x, t)
        out = out + dwx[..., :, :, None] * g[..., None, None, :]
        out = out + dwx[..., :, None, :] * g[..., None, :, None]
        out = out + w(x, t)[..., :, None, None] * hh[..., None, :, :]
        return out

    return VelocityField(v, domain, jac, hess, name=name)


def zero_field(domain) -> VelocityField:
    d = domain.dim
    return VelocityField(
        lambda x, t: np.zeros_like(x),
        domain,
        lambda x, t: np.zeros(x.shape + (d,)),
        lambda x, t: np.zeros(x.shape + (d, d)),
        name="zero",
    )


def scaled_identity_field(rate: Callable[[float], float], bump: BumpFunction | None, domain, name="scaled") -> VelocityField:
    """``v(x, t) = rate(t) * rho(x) * x``."""
    d = domain.dim

    def w(x, t):
        return rate(t) * x

    def dw(x, t):
        return rate(t) * np.broadcast_to(np.eye(d), x.shape + (d,)).copy()

    def d2w(x, t):
        return np.zeros(x.shape + (d, d))

    return _bumped(w, dw, d2w, bump, domain, name)


def radial_field(R: float, bump: BumpFunction | None, domain) -> VelocityField:
    """Field whose flow is ``F(p, t) = (1 + (R - 1) t) p`` on the bump plateau."""
    return scaled_identity_field(lambda t: (R - 1.0) / (1.0 + (R - 1.0) * t), bump, domain, name=f"radial(R={R})")


def radius_morph_field(psi: Callable, dpsi: Callable, bump: BumpFunction | None, domain) -> VelocityField:
    """``v = (psi'/psi)(t) rho(x) x``; generates ``H(p, t) = psi(t) p`` for ``psi(0) = 1``."""
    return scaled_identity_field(lambda t: dpsi(t) / psi(t), bump, domain, name="radius_morph")


def linear_field(matrix, domain, bump: BumpFunction | None = None) -> VelocityField:
    a = np.asarray(matrix, dtype=float)
    d = a.shape[0]
    return _bumped(
        lambda x, t: x @ a.T,
        lambda x, t: np.broadcast_to(a, x.shape + (d,)).copy(),
        lambda x, t: np.zeros(x.shape + (d, d)),
        bump,
        domain,
        "linear",
    )


def constant_field(c, domain, bump: BumpFunction | None = None) -> VelocityField:
    c = np.asarray(c, dtype=float)
    d = c.size
    return _bumped(
        lambda x, t: np.broadcast_to(c, x.shape).copy(),
        lambda x, t: np.zeros(x.shape + (d,)),
        lambda x, t: np.zeros(x.shape + (d, d)),
        bump,
        domain,
        "constant",
    )


def expression_field(components: Sequence[str], domain, bump: BumpFunction | None = None) -> VelocityField:
    """Field from sympy expressions in ``x0, x1, ...`` and ``t``; derivatives are symbolic."""
    import sympy as sp

    d = domain.dim
    if len(components) != d:
        raise ValidationError(f"expected {d} component expressions")
    xs = sp.symbols(f"x0:{d}")
    t = sp.Symbol("t")
    try:
        exprs = [sp.sympify(c, locals={**{str(s): s for s in xs}, "t": t}) for c in components]
    except (sp.SympifyError, TypeError) as exc:
        raise ValidationError(f"cannot parse velocity expression: {exc}") from exc
    allowed = set(xs) | {t}
    for e in exprs:
        if not e.free_symbols <= allowed:
            raise ValidationError(f"unknown symbols {e.free_symbols - allowed} in velocity expression")
    jac = [[sp.diff(e, x) for x in xs] for e in exprs]
    hess = [[[sp.diff(e, x, y) for y in xs] for x in xs] for e in exprs]
    fv = sp.lambdify((xs, t), exprs, "numpy")
    fj = sp.lambdify((xs, t), jac, "numpy")
    fh = sp.lambdify((xs, t), hess, "numpy")

    def _arr(fn, x, t_, tail):
        cols = [x[..., i] for i in range(d)]
        out = np.asarray(np.broadcast_arrays(*_flat(fn(cols, t_)), cols[0])[:-1], dtype=float)
        out = out.reshape(tail + x.shape[:-1])
        return np.moveaxis(out, tuple(range(len(tail))), tuple(range(-len(tail), 0)))

    return _bumped(
        lambda x, t_: _arr(fv, x, t_, (d,)),
        lambda x, t_: _arr(fj, x, t_, (d, d)),
        lambda x, t_: _arr(fh, x, t_, (d, d, d)),
        bump,
        domain,
        "expression",
    )


def _flat(nested):
    if isinstance(nested, (list, tuple)):
        out = []
        for item in nested:
            out.extend(_flat(item))
        return out
    return [nested]


# ---------------------------------------------------------------------------
# evolution
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MorphTrajectory:
    """Sampled flow ``F(p, t)`` with transported derivatives.

    ``positions[k, p]`` is ``F(p, t_k)``; ``DF[k, p]`` is the ``(d, m)``
    matrix of transported tangent columns and ``D2F[k, p]`` the ``(d, m, m)``
    transported second derivatives (or ``None``).
    """

    times: np.ndarray
    positions: np.ndarray
    DF: np.ndarray
    D2F: np.ndarray | None
    substeps: int
    refinement_history: list = field(default_factory=list)

    @property
    def min_singular_value(self) -> float:
        return float(np.min(np.linalg.svd(self.DF, compute_uv=False)))

    def jacobian_determinant(self) -> np.ndarray:
        d, m = self.DF.shape[-2:]
        if d == m:
            return np.linalg.det(self.DF)
        return np.sqrt(np.linalg.det(np.einsum("...ai,...aj->...ij", self.DF, self.DF)))

    def to_csv(self, path) -> None:
        d = self.positions.shape[-1]
        det = self.jacobian_determinant()
        try:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["p_index", "t"] + [f"x{i}" for i in range(d)] + ["det_DF"])
                for k, t in enumerate(self.times):
                    for p in range(self.positions.shape[1]):
                        w.writerow([p, repr(float(t))] + [repr(float(c)) for c in self.positions[k, p]] + [repr(float(det[k, p]))])
        except OSError as exc:
            raise OSError(f"cannot write trajectory CSV to {path}: {exc}") from exc


def _rk4_run(v: VelocityField, q, J, K, times, substeps, second, domain_check):
    def rhs(t, q, J, K):
        dq = v(q, t)
        if J is None:
            return dq, None, None
        dv = v.jacobian(q, t)
        dJ = dv @ J
        dK = None
        if second:
            d2v = v.hessian(q, t)
            dK = np.einsum("pabc,pbi,pcj->paij", d2v, J, J) + np.einsum("pab,pbij->paij", dv, K)
        return dq, dJ, dK

    def axpy(state, k, h):
        q, J, K = state
        return q + h * k[0], (J + h * k[1]) if J is not None else None, (K + h * k[2]) if second else None

    nt = len(times)
    qs = np.empty((nt,) + q.shape)
    Js = np.empty((nt,) + J.shape) if J is not None else None
    Ks = np.empty((nt,) + K.shape) if second else None
    state = (q, J, K)
    qs[0] = q
    if J is not None:
        Js[0] = J
    if second:
        Ks[0] = K
    for k in range(nt - 1):
        t0, t1 = times[k], times[k + 1]
        h = (t1 - t0) / substeps
        for s in range(substeps):
            t = t0 + s * h
            k1 = rhs(t, *state)
            k2 = rhs(t + h / 2, *axpy(state, k1, h / 2))
            k3 = rhs(t + h / 2, *axpy(state, k2, h / 2))
            k4 = rhs(t + h, *axpy(state, k3, h))
            q, J, K = state
            q = q + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            if J is not None:
                J = J + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            if second:
                K = K + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
            state = (q, J, K)
            if domain_check and not np.all(v.domain.contains(q)):
                raise LeftDomain(f"trajectory left the domain near t={t + h:.6g}")
        qs[k + 1] = state[0]
        if J is not None:
            Js[k + 1] = state[1]
        if second:
            Ks[k + 1] = state[2]
    return qs, Js, Ks


def evolve(
    v: VelocityField,
    seeds,
    times,
    order: int = 1,
    *,
    jets: tuple | None = None,
    rk_tol: float = DEFAULT_RK_TOL,
    max_refinements: int = 14,
    substeps: int = 1,
    check_domain: bool = True,
) -> MorphTrajectory:
    """Integrate ``dq/dt = v(q, t)`` from every seed over the time grid.

    ``order=0`` integrates positions only.  The first transport
    (``order >= 1``) solves ``dJ/dt = Dv J`` and, for ``order=2``, the
    second solves ``dK/dt = D2v[J, J] + Dv K``.  By default ``J(0) = I`` and
    ``K(0) = 0`` so that ``J = DF`` and ``K = D2F``; passing
    ``jets=(dr, d2r)`` (shapes ``(P, d, m)`` and ``(P, d, m, m)``) instead
    transports the derivatives of ``F(r(u), t)`` with respect to the
    parameters ``u`` of a seed parametrization ``r``.

    RK4 substeps per output interval are doubled until two successive runs
    differ by less than ``rk_tol`` everywhere.
    """
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise ValidationError("time grid needs at least two nodes")
    if order not in (0, 1, 2):
        raise ValidationError("transport order must be 0, 1 or 2")
    P, d = seeds.shape
    if d != v.dim:
        raise ValidationError(f"seed dimension {d} does not match field dimension {v.dim}")
    if check_domain and not np.all(v.domain.contains(seeds)):
        raise LeftDomain("seed points must lie inside the domain")
    if jets is None:
        J0 = np.broadcast_to(np.eye(d), (P, d, d)).copy()
        K0 = np.zeros((P, d, d, d))
    else:
        J0 = np.asarray(jets[0], dtype=float)
        m = J0.shape[-1]
        K0 = np.asarray(jets[1], dtype=float) if jets[1] is not None else np.zeros((P, d, m, m))
    second = order == 2
    if order == 0:
        J0 = None

    history = []
    prev = _rk4_run(v, seeds, J0, K0, times, substeps, second, check_domain)
    for _ in range(max_refinements):
        substeps *= 2
        cur = _rk4_run(v, seeds, J0, K0, times, substeps, second, check_domain)
        diff = max(float(np.max(np.abs(a - b))) for a, b in zip(cur, prev) if a is not None and a.size)
        history.append({"substeps": substeps, "max_diff": diff})
        log.debug("evolve: %d substeps, max diff %.3e", substeps, diff)
        prev = cur
        if diff < rk_tol:
            qs, Js, Ks = cur
            return MorphTrajectory(times, qs, Js, Ks, substeps, history)
    raise NoConvergence(f"RK4 step halving did not reach rk_tol={rk_tol} after {max_refinements} refinements")


# ---------------------------------------------------------------------------
# field from morph
# ---------------------------------------------------------------------------


def _newton_inverse(F, jac, x, t, tol=1e-13, max_iter=60):
    p = x.copy()
    scale = max(1.0, float(np.max(np.abs(x)))) if x.size else 1.0
    res = F(p, t) - x
    for _ in range(max_iter):
        err = np.linalg.norm(res, axis=-1)
        if not np.any(err > tol * scale):
            return p
        step = np.linalg.solve(jac(p, t), res[..., None])[..., 0]
        damp = np.ones(p.shape[0])
        for _ in range(30):
            trial = p - damp[:, None] * step
            new_res = F(trial, t) - x
            worse = np.linalg.norm(new_res, axis=-1) > err
            if not np.any(worse & (err > tol * scale)):
                break
            damp = np.where(worse, 0.5 * damp, damp)
        p, res = trial, new_res
    raise InverseFailure("Newton inversion of the morph did not converge")


def field_from_morph(
    F: Callable[[np.ndarray, float], np.ndarray],
    dFdt: Callable[[np.ndarray, float], np.ndarray],
    bump: BumpFunction,
    domain,
    *,
    inverse: Callable | None = None,
    jac: Callable | None = None,
    fd_step: float = 1e-6,
) -> VelocityField:
    """``w(x, t) = rho(x) * dF/dt(F^{-1}(x, t), t)``.

    The inverse is either supplied or found by damped Newton started at
    ``x`` itself, using ``jac`` (spatial Jacobian of ``F``) or central
    differences.
    """
    if jac is None:
        def jac(p, t):
            cols = []
            for j in range(p.shape[-1]):
                e = np.zeros(p.shape[-1])
                e[j] = fd_step
                cols.append((F(p + e, t) - F(p - e, t)) / (2 * fd_step))
            return np.stack(cols, axis=-1)

    def w(x, t):
        x = np.atleast_2d(x)
        out = np.zeros_like(x)
        rho = bump(x)
        live = rho > 0
        if np.any(live):
            xs = x[live]
            p = inverse(xs, t) if inverse is not None else _newton_inverse(F, jac, xs, t)
            out[live] = rho[live, None] * dFdt(p, t)
        return out

    return VelocityField(w, domain, name="from_morph")


# ---------------------------------------------------------------------------
# Sobolev norms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxGrid:
    """Endpoint-inclusive uniform grid with ``n`` nodes per axis on a box."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    n: int

    @classmethod
    def covering(cls, domain, n: int) -> "BoxGrid":
        lo, hi = domain.bounds()
        return cls(tuple(lo), tuple(hi), n)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(l, u, self.n) for l, u in zip(self.lower, self.upper)]

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def coarsened(self) -> "BoxGrid":
        if self.n % 2 == 0:
            raise ValidationError("Richardson estimate needs an odd node count")
        return BoxGrid(self.lower, self.upper, (self.n + 1) // 2)


def _trapz_weights(n, h):
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    return w


def _spectral_gradient(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    n = f.shape[axis]
    ik = 1j * 2 * np.pi * np.fft.fftfreq(n, h)
    if n % 2 == 0:
        ik[n // 2] = 0.0  # Nyquist mode has no real derivative
    shape = [1] * f.ndim
    shape[axis] = n
    return np.fft.ifft(np.fft.fft(f, axis=axis) * ik.reshape(shape), axis=axis).real


def _sum_sq_derivatives(vals: np.ndarray, spacings, k: int, weights, method: str = "fd") -> float:
    """``sum_{|alpha| <= k} int (D^alpha f)^2`` with iterated derivatives along each axis."""
    ndim = len(spacings)
    if method == "spectral":
        # drop the closing node of every axis: the field vanishes there and the rest is one period
        vals = vals[(slice(0, -1),) * ndim]
        weights = np.prod(spacings)

        def grad(g, axis):
            return _spectral_gradient(g, spacings[axis], axis)
    else:
        def grad(g, axis):
            return np.gradient(g, spacings[axis], axis=axis, edge_order=2)

    def rec(f, axis, budget):
        if axis == ndim:
            w = weights
            return float(np.sum(np.sum(f**2, axis=-1) * w))
        total = 0.0
        g = f
        for a in range(budget + 1):
            total += rec(g, axis + 1, budget - a)
            if a < budget:
                g = grad(g, axis)
        return total

    return rec(vals, 0, k)


def _sobolev_on_grid(v: VelocityField, k: int, grid: BoxGrid, t_nodes, method: str = "fd") -> float:
    pts = grid.points()
    flat = pts.reshape(-1, pts.shape[-1])
    spacings = [(u - l) / (grid.n - 1) for l, u in zip(grid.lower, grid.upper)]
    w = _trapz_weights(grid.n, spacings[0])
    for h in spacings[1:]:
        w = np.multiply.outer(w, _trapz_weights(grid.n, h))
    inside = v.domain.contains(flat)
    per_t = []
    for t in t_nodes:
        vals = np.zeros_like(flat)
        if np.any(inside):
            vals[inside] = v(flat[inside], t)
        per_t.append(_sum_sq_derivatives(vals.reshape(pts.shape), spacings, k, w, method))
    per_t = np.asarray(per_t)
    if len(t_nodes) == 1:
        return float(per_t[0])
    return float(np.trapezoid(per_t, t_nodes))


def sobolev_norm_sq(
    v: VelocityField,
    k: int,
    grid: BoxGrid | None = None,
    t_nodes=None,
    *,
    n: int = 129,
    return_error: bool = False,
    check: bool = True,
    method: str = "fd",
):
    """``int_0^1 sum_i sum_{|alpha|<=k} int (D^alpha v_i)^2 dx dt`` on a grid.

    With ``method="fd"`` spatial derivatives are iterated second-order
    centred differences (one-sided at the box edge); ``method="spectral"``
    differentiates the zero-extended field as a periodic function by FFT,
    which converges much faster for smooth compactly supported fields.
    Integrals use the trapezoid rule in ``x`` and ``t``.  The error is
    estimated from the same quantity on the grid with every other node
    (Richardson for second order, the plain difference for spectral).

    Raises
    ------
    GridTooCoarse
        If the error estimate exceeds 10% of the value (when ``check``).
    """
    if k < 0:
        raise ValidationError("Sobolev order k must be nonnegative")
    if method not in ("fd", "spectral"):
        raise ValidationError(f"unknown differentiation method {method!r}")
    if k >= 4 and method == "fd":
        warnings.warn(
            f"finite-difference accuracy degrades for k={k}; inspect the error estimate",
            RuntimeWarning,
            stacklevel=2,
        )
    if grid is None:
        grid = BoxGrid.covering(v.domain, n)
    if t_nodes is None:
        t_nodes = np.linspace(0.0, 1.0, 9)
    t_nodes = np.atleast_1d(np.asarray(t_nodes, dtype=float))
    fine = _sobolev_on_grid(v, k, grid, t_nodes, method)
    coarse = _sobolev_on_grid(v, k, grid.coarsened(), t_nodes, method)
    err = abs(fine - coarse) / (3.0 if method == "fd" else 1.0)
    if check and err > 0.1 * abs(fine) and err > 1e-300:
        raise GridTooCoarse(f"estimated discretization error {err:.3e} exceeds 10% of the value {fine:.3e}")
    return (fine, err) if return_error else fine


# ---------------------------------------------------------------------------
# admissibility
# ---------------------------------------------------------------------------


@dataclass
class AdmissibilityReport:
    match_residual: float
    coverage_residual: float
    tol_match: float
    norm: float
    norm_error: float
    bound: float
    maps_onto_target: bool
    norm_within_bound: bool

    @property
    def admissible(self) -> bool:
        return self.maps_onto_target and self.norm_within_bound

    def to_dict(self) -> dict:
        return {
            "match_residual": self.match_residual,
            "coverage_residual": self.coverage_residual,
            "tol_match": self.tol_match,
            "norm": self.norm,
            "norm_error": self.norm_error,
            "P": self.bound,
            "maps_onto_target": self.maps_onto_target,
            "norm_within_bound": self.norm_within_bound,
            "admissible": self.admissible,
        }


def admissibility_check(
    v: VelocityField,
    M,
    N,
    P: float,
    k: int,
    *,
    grid: BoxGrid | None = None,
    t_nodes=None,
    n_time: int = 16,
    tol_match: float | None = None,
    rk_tol: float = DEFAULT_RK_TOL,
) -> AdmissibilityReport:
    """Does the time-one map of ``v`` carry ``M`` onto ``N`` with ``||v|| <= P``?

    ``match_residual`` is the largest distance from an evolved node of ``M``
    to ``N``; ``coverage_residual`` the largest distance from a node of ``N``
    to the nearest evolved node (sampling-limited, reported only).
    """
    seeds = M.positions.reshape(-1, M.ambient_dim)
    traj = evolve(v, seeds, np.linspace(0.0, 1.0, n_time + 1), rk_tol=rk_tol)
    img = traj.positions[-1]
    match = float(np.max(N.distance_to(img)))
    from scipy.spatial import cKDTree

    coverage = float(np.max(cKDTree(img).query(N.positions.reshape(-1, N.ambient_dim))[0]))
    if tol_match is None:
        tol_match = 1e-6 * N.diameter
    norm_sq, err = sobolev_norm_sq(v, k, grid, t_nodes, return_error=True)
    norm = float(np.sqrt(norm_sq))
    norm_err = float(err / (2 * norm)) if norm > 0 else float(np.sqrt(err))
    return AdmissibilityReport(
        match_residual=match,
        coverage_residual=coverage,
        tol_match=float(tol_match),
        norm=norm,
        norm_error=norm_err,
        bound=float(P),
        maps_onto_target=match <= tol_match,
        norm_within_bound=norm <= P,
    )


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_FIELD_KEYS = {"family", "params", "bump", "domain"}


def field_from_config(cfg: dict) -> VelocityField:
    """Build a field from ``{"family", "params", "bump", "domain"}``."""
    unknown = set(cfg) - _FIELD_KEYS
    if unknown:
        raise ValidationError(f"unknown velocity-field keys: {sorted(unknown)}")
    if "family" not in cfg or "domain" not in cfg:
        raise ValidationError("velocity field config needs 'family' and 'domain'")
    dom = cfg["domain"]
    if set(dom) - {"center", "radius"}:
        raise ValidationError(f"unknown domain keys: {sorted(set(dom) - {'center', 'radius'})}")
    domain = Ball(tuple(dom["center"]), float(dom["radius"]))
    bump = None
    if cfg.get("bump") is not None:
        b = cfg["bump"]
        if set(b) - {"r1", "r2"}:
            raise ValidationError(f"unknown bump keys: {sorted(set(b) - {'r1', 'r2'})}")
        bump = BumpFunction(float(b["r1"]), float(b["r2"]), tuple(domain.center))
    params = cfg.get("params", {})
    family = cfg["family"]
    if family == "radial":
        R = float(params["R"])
        if not R > 0:
            raise ValidationError("radial family needs R > 0")
        return radial_field(R, bump, domain)
    if family == "constant":
        return constant_field(params["c"], domain, bump)
    if family == "linear":
        return linear_field(params["matrix"], domain, bump)
    if family == "custom-expression":
        return expression_field(params["components"], domain, bump)
    raise ValidationError(f"unknown velocity family {family!r}")
