"""Distortion energies of sampled maps and morphs.

``phi`` and ``lambda_energy`` act on a sampled map ``h: M -> N``;
``bending_energy_E`` and ``morphing_energy`` act on a velocity field and
obtain the map (or the whole morph) from :func:`morphforge.flow.evolve`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from . import geometry as geo
from .errors import DegenerateIntermediate, SingularMetric, ValidationError
from .flow import DEFAULT_RK_TOL, VelocityField, evolve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnergyWeights:
    B1: float = 1.0
    B2: float = 1.0

    def __post_init__(self):
        if not (self.B1 >= 0 and self.B2 >= 0):
            raise ValidationError("energy weights B1, B2 must be nonnegative")


@dataclass
class EnergyReport:
    """Value of an energy together with its two terms and quadrature data."""

    kind: str
    value: float
    metric_term: float
    second_form_term: float | None
    weights: EnergyWeights | None = None
    t_nodes: int | None = None
    space_nodes: int | None = None
    refinement_history: list = field(default_factory=list)
    trace: dict | None = None

    def __float__(self) -> float:
        return self.value

    def to_dict(self) -> dict:
        out = {
            self.kind: self.value,
            "terms": {"metric": self.metric_term, "second_form": self.second_form_term},
            "weights": None if self.weights is None else {"B1": self.weights.B1, "B2": self.weights.B2},
            "quadrature": {"t_nodes": self.t_nodes, "space_nodes": self.space_nodes},
            "refinement_history": self.refinement_history,
        }
        return out


def _strain_integral(a: geo.CovariantTensorField, b: geo.CovariantTensorField, g_M: geo.CovariantTensorField) -> float:
    return geo.integrate(geo.fiber_norm_sq(a - b, g_M), g_M.base)


def energy_terms(h: geo.MapDifferentialSamples, M: geo.EmbeddedManifold, N: geo.EmbeddedManifold, second: bool = True):
    """``(int ||h*g_N - g_M||^2, int ||h*II_N - II_M||^2)`` over ``M``."""
    N.check_on_manifold(h.image.reshape(-1, N.ambient_dim))
    g_M = geo.first_fundamental_form(M)
    metric = _strain_integral(geo.pullback_metric(h, M), g_M, g_M)
    if not second:
        return metric, None
    ii = _strain_integral(geo.pullback_second_form(h, M, N), geo.second_fundamental_form(M), g_M)
    return metric, ii


def phi(h: geo.MapDifferentialSamples, M: geo.EmbeddedManifold, N: geo.EmbeddedManifold) -> float:
    """Deformation energy ``int_M ||h*g_N - g_M||^2 omega_M``."""
    return energy_terms(h, M, N, second=False)[0]


def lambda_energy(h: geo.MapDifferentialSamples, M: geo.EmbeddedManifold, N: geo.EmbeddedManifold) -> float:
    """Deformation energy plus the second-fundamental-form term."""
    a, b = energy_terms(h, M, N)
    return a + b


# ---------------------------------------------------------------------------
# energies of velocity fields
# ---------------------------------------------------------------------------


def _seed_jets(M: geo.EmbeddedManifold, precompose: geo.MapDifferentialSamples | None):
    if precompose is None:
        r, dr, d2r = M.jets
    else:
        if precompose.d2 is None:
            raise ValidationError("precomposed map needs its second differential")
        M.check_on_manifold(precompose.image.reshape(-1, M.ambient_dim))
        r, dr, d2r = precompose.image, precompose.d1, precompose.d2
    A = M.ambient_dim
    m = M.dim
    seeds = r.reshape(-1, A)
    J0 = np.swapaxes(dr.reshape(-1, m, A), -1, -2)  # (P, A, m)
    K0 = np.moveaxis(d2r.reshape(-1, m, m, A), -1, 1)  # (P, A, m, m)
    return seeds, J0, K0


def _samples_from_transport(traj, k: int, M: geo.EmbeddedManifold) -> geo.MapDifferentialSamples:
    shape = M.grid.shape
    A, m = M.ambient_dim, M.dim
    img = traj.positions[k].reshape(shape + (A,))
    d1 = np.swapaxes(traj.DF[k], -1, -2).reshape(shape + (m, A))
    d2 = None
    if traj.D2F is not None:
        d2 = np.moveaxis(traj.D2F[k], 1, -1).reshape(shape + (m, m, A))
    return geo.MapDifferentialSamples(img, d1, d2)


def bending_energy_E(
    v: VelocityField,
    M: geo.EmbeddedManifold,
    N: geo.EmbeddedManifold,
    w: EnergyWeights = EnergyWeights(),
    precompose: geo.MapDifferentialSamples | None = None,
    *,
    n_time: int = 16,
    rk_tol: float = DEFAULT_RK_TOL,
) -> EnergyReport:
    """Bending distortion energy of the time-one map of ``v`` (optionally after ``precompose``).

    The differentials of the time-one map come from the second-order
    variational transport, seeded with the jets of ``M`` (or of the
    precomposed map).
    """
    seeds, J0, K0 = _seed_jets(M, precompose)
    traj = evolve(v, seeds, np.linspace(0.0, 1.0, n_time + 1), order=2, jets=(J0, K0), rk_tol=rk_tol)
    h = _samples_from_transport(traj, -1, M)
    metric, second = energy_terms(h, M, N)
    return EnergyReport(
        "E",
        w.B1 * metric + w.B2 * second,
        metric,
        second,
        w,
        t_nodes=n_time + 1,
        space_nodes=int(np.prod(M.grid.shape)),
        refinement_history=traj.refinement_history,
    )


def _intermediate_forms_grid(M: geo.EmbeddedManifold, positions: np.ndarray):
    Mt = M.with_positions(positions, name="intermediate")
    _collision_check(Mt)
    try:
        g = geo.first_fundamental_form(Mt).components
        ii = geo.second_fundamental_form(Mt).components
    except SingularMetric as exc:
        raise DegenerateIntermediate(f"intermediate state is degenerate: {exc}") from exc
    return g, ii


def _intermediate_forms_transport(M: geo.EmbeddedManifold, h: geo.MapDifferentialSamples):
    _collision_check(M.with_positions(h.image, name="intermediate"))
    g = np.einsum("...ia,...ja->...ij", h.d1, h.d1)
    if np.any(np.linalg.det(g) <= 0):
        raise DegenerateIntermediate("transported tangents are linearly dependent")
    nu = geo._unit_normal(h.d1, M.orientation_sign)
    ii = np.einsum("...a,...ija->...ij", nu, h.d2)
    return g, ii


def _collision_check(Mt: geo.EmbeddedManifold, ratio: float = 1e-3) -> None:
    """Coarse self-intersection guard: no node may nearly coincide with another."""
    pts = Mt.positions.reshape(-1, Mt.ambient_dim)
    if pts.shape[0] < 2:
        return
    nn = cKDTree(pts).query(pts, k=2)[0][:, 1]
    typical = float(np.median(nn))
    if typical == 0 or float(np.min(nn)) < ratio * typical:
        raise DegenerateIntermediate("intermediate state has colliding nodes (possible self-intersection)")


def _slice_terms(frames, g_M, ii_M, vw, g, ii):
    def nsq(diff):
        c = np.einsum("...ia,...jb,...ij->...ab", frames, frames, diff)
        return np.sum(c**2, axis=(-2, -1))

    return float(np.sum(nsq(g - g_M) * vw)), float(np.sum(nsq(ii - ii_M) * vw))


def _states_at(v, M, t_nodes, route, G, rk_tol):
    """Yield ``(k, g_t, II_t)`` in ``M``'s coordinates for each time node."""
    order = 2 if route == "transport" else 0
    if G is None:
        seeds, J0, K0 = _seed_jets(M, None)
        traj = evolve(v, seeds, t_nodes, order=order, jets=(J0, K0), rk_tol=rk_tol)
        for k in range(len(t_nodes)):
            if route == "grid":
                pos = traj.positions[k].reshape(M.positions.shape)
                yield k, _intermediate_forms_grid(M, pos)
            else:
                yield k, _intermediate_forms_transport(M, _samples_from_transport(traj, k, M))
        return
    coords = M.grid.coords()
    for k, t in enumerate(t_nodes):
        if route == "grid":
            start = G(coords, float(t)).reshape(-1, M.ambient_dim)
            jets = None
        else:
            chart = geo.chart_from_parametrization(lambda u, t=t: G(u, float(t)), M.dim)
            r, dr, d2r = chart(coords)
            pre = geo.MapDifferentialSamples(r, dr, d2r)
            start, J0, K0 = _seed_jets(M, pre)
            jets = (J0, K0)
        if t == 0:
            if route == "grid":
                yield k, _intermediate_forms_grid(M, start.reshape(M.positions.shape))
            else:
                yield k, _intermediate_forms_transport(M, pre)
            continue
        n_sub = max(2, int(np.ceil(16 * abs(t))))
        traj = evolve(v, start, np.linspace(0.0, t, n_sub + 1), order=order, jets=jets, rk_tol=rk_tol)
        if route == "grid":
            yield k, _intermediate_forms_grid(M, traj.positions[-1].reshape(M.positions.shape))
        else:
            yield k, _intermediate_forms_transport(M, _samples_from_transport(traj, -1, M))


def _morphing_on_grid(v, M, t_nodes, route, G, rk_tol):
    g_M = geo.first_fundamental_form(M).components
    ii_M = geo.second_fundamental_form(M).components
    frames = geo._orthonormal_frames(g_M)
    vw = M.volume_weights
    metric = np.empty(len(t_nodes))
    second = np.empty(len(t_nodes))
    for k, (g, ii) in _states_at(v, M, t_nodes, route, G, rk_tol):
        metric[k], second[k] = _slice_terms(frames, g_M, ii_M, vw, g, ii)
    return metric, second


def morphing_energy(
    v: VelocityField,
    M: geo.EmbeddedManifold,
    N: geo.EmbeddedManifold | None = None,
    w: EnergyWeights = EnergyWeights(),
    time_quadrature=None,
    isotopy: Callable | None = None,
    *,
    route: str = "grid",
    n_time: int = 16,
    rtol: float = 1e-6,
    max_doublings: int = 10,
    rk_tol: float = DEFAULT_RK_TOL,
) -> EnergyReport:
    """Morphing distortion energy of the morph generated by ``v``.

    Each intermediate state is either the pushed-forward sample grid with
    fundamental forms from finite differences (``route="grid"``) or the
    transported jets (``route="transport"``).  Because ``M`` and each
    intermediate state share one parametrization, the pull-back of the
    state's forms by ``F(., t)`` has the state's own components.

    With ``time_quadrature`` (an explicit increasing grid on ``[0, 1]``) the
    trapezoid rule is applied once.  Otherwise the uniform grid with
    ``n_time`` intervals is doubled until the value changes by less than
    ``rtol`` relative.

    ``isotopy(u, t)`` returns points of ``M`` (ambient coordinates) for the
    chart coordinates ``u``; the morph is then ``F(G(p, t), t)``.

    ``N``, when given, is checked against the time-one state.
    """
    if route not in ("grid", "transport"):
        raise ValidationError(f"unknown intermediate-state route {route!r}")
    history = []

    def run(t_nodes):
        metric, second = _morphing_on_grid(v, M, t_nodes, route, isotopy, rk_tol)
        a = float(np.trapezoid(metric, t_nodes))
        b = float(np.trapezoid(second, t_nodes))
        return a, b, metric, second

    if time_quadrature is not None:
        t_nodes = np.asarray(time_quadrature, dtype=float)
        if t_nodes[0] != 0 or t_nodes[-1] != 1 or np.any(np.diff(t_nodes) <= 0):
            raise ValidationError("time quadrature must increase from 0 to 1")
        a, b, metric, second = run(t_nodes)
        history.append({"t_nodes": len(t_nodes), "value": w.B1 * a + w.B2 * b})
    else:
        n = n_time
        t_nodes = np.linspace(0.0, 1.0, n + 1)
        a, b, metric, second = run(t_nodes)
        value = w.B1 * a + w.B2 * b
        history.append({"t_nodes": n + 1, "value": value})
        for _ in range(max_doublings):
            n *= 2
            t_nodes = np.linspace(0.0, 1.0, n + 1)
            a, b, metric, second = run(t_nodes)
            new = w.B1 * a + w.B2 * b
            history.append({"t_nodes": n + 1, "value": new})
            log.debug("morphing energy: %d nodes -> %.12g", n + 1, new)
            converged = abs(new - value) <= rtol * max(abs(new), 1e-300) or new == value
            value = new
            if converged:
                break
        else:
            log.warning("morphing energy time quadrature did not reach rtol=%g", rtol)
    if N is not None:
        seeds = M.positions.reshape(-1, M.ambient_dim)
        # the quadrature's own grid: a coarse grid could step over a short burst of motion
        end = evolve(v, seeds, t_nodes, order=0, rk_tol=rk_tol).positions[-1] if isotopy is None else None
        if end is not None:
            N.check_on_manifold(end)
    return EnergyReport(
        "Script_E",
        w.B1 * a + w.B2 * b,
        a,
        b,
        w,
        t_nodes=len(t_nodes),
        space_nodes=int(np.prod(M.grid.shape)),
        refinement_history=history,
        trace={"t": t_nodes, "metric_term": metric, "second_form_term": second},
    )
