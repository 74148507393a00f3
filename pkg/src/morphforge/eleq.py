"""Euler-Lagrange machinery for the deformation energy.

With ``alpha = g_M`` and ``beta = h^* g_N`` the critical-point condition
reads, in components,

    res^m = d_k B^{km} + Gamma^p_{kp} B^{km} + Gamma_bar^m_{kp} B^{kp} = 0,

    B^{km} = (beta_ij - alpha_ij) alpha^{ik} alpha^{jm},

where ``Gamma`` and ``Gamma_bar`` are the Levi-Civita symbols of ``alpha``
and ``beta``.  All index derivatives are 4th-order finite differences on the
parameter grid; across the poles of a sphere grid each component picks up a
factor ``-1`` per polar index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Callable

import numpy as np

from . import geometry as geo
from .errors import SingularMetric, ValidationError

# ---------------------------------------------------------------------------
# derivatives of component arrays
# ---------------------------------------------------------------------------


def _index_parity(grid: geo.ParamGrid, rank: int) -> np.ndarray:
    """``(-1)^(number of polar indices)`` for every component of a rank-``rank`` array."""
    dim = grid.dim
    polar = [ax for ax, k in enumerate(grid.kinds) if k == "polar"]
    par = np.ones((dim,) * rank)
    for idx in product(range(dim), repeat=rank):
        par[idx] = (-1.0) ** sum(i in polar for i in idx)
    return par


def component_gradient(comp: np.ndarray, grid: geo.ParamGrid, rank: int) -> np.ndarray:
    """``out[..., l, I] = d_l comp[..., I]`` for component arrays of tensor rank ``rank``."""
    parity = _index_parity(grid, rank) if rank else 1.0
    return np.stack([grid.derivative(comp, ax, parity=parity) for ax in range(grid.dim)], axis=grid.dim)


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ChristoffelField:
    """``components[..., i, j, k] = Gamma^i_{jk}``."""

    components: np.ndarray
    base: geo.EmbeddedManifold

    def __post_init__(self):
        c = self.components
        scale = max(1.0, float(np.max(np.abs(c))))
        if np.max(np.abs(c - np.swapaxes(c, -1, -2))) > 1e-10 * scale:
            raise ValidationError("Christoffel symbols must be symmetric in the lower indices")

    @property
    def contracted(self) -> np.ndarray:
        """``Gamma^p_{kp}`` indexed by ``k``."""
        return np.einsum("...pkp->...k", self.components)


@dataclass(frozen=True, eq=False)
class RaisedStrain:
    """``components[..., k, m] = B^{km}``."""

    components: np.ndarray
    base: geo.EmbeddedManifold


@dataclass
class ELResidual:
    components: np.ndarray
    max: float
    l2: float
    base: geo.EmbeddedManifold

    def to_dict(self) -> dict:
        return {"residual_max": self.max, "residual_l2": self.l2}


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def _inverse(g: np.ndarray) -> np.ndarray:
    geo._check_spd(g)
    return np.linalg.inv(g)


def christoffels(metric: geo.CovariantTensorField) -> ChristoffelField:
    """Levi-Civita symbols ``1/2 g^{il} (d_j g_lk + d_k g_lj - d_l g_jk)``."""
    g = metric.components
    ginv = _inverse(g)
    dg = component_gradient(g, metric.base.grid, 2)  # dg[..., l, j, k] = d_l g_jk
    lower = 0.5 * (np.swapaxes(dg, -3, -2) + np.moveaxis(dg, -3, -1) - dg)
    # lower[..., l, j, k] = 1/2 (d_j g_lk + d_k g_lj - d_l g_jk)
    gamma = np.einsum("...il,...ljk->...ijk", ginv, lower)
    gamma = 0.5 * (gamma + np.swapaxes(gamma, -1, -2))
    return ChristoffelField(gamma, metric.base)


def raised_strain(alpha: geo.CovariantTensorField, beta: geo.CovariantTensorField) -> RaisedStrain:
    """``B^{km} = (beta_ij - alpha_ij) alpha^{ik} alpha^{jm}``."""
    _check_shared(alpha, beta)
    ainv = _inverse(alpha.components)
    B = np.einsum("...ij,...ik,...jm->...km", beta.components - alpha.components, ainv, ainv)
    return RaisedStrain(0.5 * (B + np.swapaxes(B, -1, -2)), alpha.base)


def _check_shared(alpha, beta):
    if alpha.base is not beta.base and alpha.base.grid != beta.base.grid:
        raise ValidationError("alpha and beta must live on the same manifold")


def _vector_norms(vec: np.ndarray, metric: np.ndarray, base: geo.EmbeddedManifold) -> tuple[float, float]:
    sq = np.einsum("...m,...mn,...n->...", vec, metric, vec)
    sq = np.maximum(sq, 0.0)
    return float(np.sqrt(np.max(sq))), float(math.sqrt(geo.integrate(sq, base)))


def el_residual(alpha: geo.CovariantTensorField, beta: geo.CovariantTensorField) -> ELResidual:
    """Component residual of the Euler-Lagrange equation; norms measured in ``alpha``."""
    _check_shared(alpha, beta)
    B = raised_strain(alpha, beta).components
    grid = alpha.base.grid
    dB = component_gradient(B, grid, 2)  # dB[..., l, k, m] = d_l B^{km}
    div = np.einsum("...kkm->...m", dB)
    gam = christoffels(alpha)
    gbar = christoffels(beta)
    res = div + np.einsum("...k,...km->...m", gam.contracted, B) + np.einsum("...mkp,...kp->...m", gbar.components, B)
    mx, l2 = _vector_norms(res, alpha.components, alpha.base)
    return ELResidual(res, mx, l2, alpha.base)


def divergence(X: np.ndarray, metric: geo.CovariantTensorField) -> np.ndarray:
    """``div X = (1/sqrt|g|) d_k (sqrt|g| X^k)`` for vector components ``X[..., k]``."""
    g = metric.components
    geo._check_spd(g)
    sq = np.sqrt(np.linalg.det(g))
    grid = metric.base.grid
    dens = sq[..., None] * X
    par = _index_parity(grid, 1)
    total = np.zeros(g.shape[:-2])
    polar = [ax for ax, k in enumerate(grid.kinds) if k == "polar"]
    for k in range(grid.dim):
        # sqrt|g| changes sign with the polar coordinate on the extended grid
        p = par[k] * (-1.0 if polar else 1.0)
        total += grid.derivative(dens[..., k], k, parity=p)
    return total / sq


def observed_order(errors, spacings) -> list[float]:
    """Convergence orders ``log(e_i / e_{i+1}) / log(h_i / h_{i+1})``."""
    out = []
    for (e0, e1), (h0, h1) in zip(zip(errors, errors[1:]), zip(spacings, spacings[1:])):
        if e0 == 0 or e1 == 0:
            out.append(float("inf"))
        else:
            out.append(math.log(e0 / e1) / math.log(h0 / h1))
    return out


# ---------------------------------------------------------------------------
# first variation
# ---------------------------------------------------------------------------


@dataclass
class FirstVariation:
    analytic: float
    finite_difference: float
    eps: float

    @property
    def rel_err(self) -> float:
        scale = max(abs(self.analytic), abs(self.finite_difference))
        return 0.0 if scale == 0 else abs(self.analytic - self.finite_difference) / scale

    def to_dict(self) -> dict:
        return {"analytic": self.analytic, "finite_difference": self.finite_difference, "rel_err": self.rel_err, "eps": self.eps}


def _composed_samples(hfn, M: geo.EmbeddedManifold, u: np.ndarray, Du: np.ndarray) -> geo.MapDifferentialSamples:
    """Samples of ``h o phi`` from ``phi`` values ``u`` (``(dim, *S)``) and ``D phi``."""
    r, dr, _ = geo.chart_from_parametrization(hfn, M.dim, step=1e-3)(u)
    # dr[..., j, a] = dh_a/du^j at phi(p); Du[..., j, i] = d phi^j / d p^i
    d1 = np.einsum("...ji,...ja->...ia", Du, dr)
    return geo.MapDifferentialSamples(r, d1)


def _flow_on_parameters(Y: Callable, M: geo.EmbeddedManifold, eps: float, steps: int = 8):
    """Flow of ``du/ds = Y(u)`` on the chart for time ``eps`` with its Jacobian."""
    from .flow import Box, VelocityField, evolve

    dim = M.dim
    big = 1e3
    field = VelocityField(
        lambda x, t: np.moveaxis(Y(np.moveaxis(x, -1, 0)), 0, -1),
        Box((-big,) * dim, (big,) * dim),
        fd_step=1e-5,
    )
    seeds = np.moveaxis(M.grid.coords(), 0, -1).reshape(-1, dim)
    traj = evolve(field, seeds, np.linspace(0.0, eps, steps + 1), order=1, rk_tol=1e-13)
    u = np.moveaxis(traj.positions[-1], -1, 0).reshape((dim,) + M.grid.shape)
    Du = traj.DF[-1].reshape(M.grid.shape + (dim, dim))
    return u, Du


def first_variation(
    hfn: Callable[[np.ndarray], np.ndarray],
    Y: Callable[[np.ndarray], np.ndarray],
    M: geo.EmbeddedManifold,
    N: geo.EmbeddedManifold,
    eps: float = 1e-4,
    pairing: str = "beta",
) -> FirstVariation:
    """First variation of the deformation energy along ``h o phi_s``.

    ``hfn(u)`` evaluates the map on chart coordinates ``u`` (``(dim, *S)``)
    and ``Y(u)`` returns the chart components of a vector field on ``M``
    (same layout); ``phi_s`` is its flow.

    The analytic value is ``-4 int <res, Y> omega_M``.  The pairing of the
    residual with ``Y`` lowers the index with ``beta = h^* g_N``
    (``pairing="beta"``, the default); ``pairing="alpha"`` uses ``g_M``
    instead.  The finite-difference reference is
    ``[Phi(h o phi_eps) - Phi(h o phi_-eps)] / (2 eps)``.
    """
    from .energy import phi

    if pairing not in ("beta", "alpha"):
        raise ValidationError("pairing must be 'beta' or 'alpha'")
    coords = M.grid.coords()
    h0 = _composed_samples(hfn, M, coords, np.broadcast_to(np.eye(M.dim), M.grid.shape + (M.dim, M.dim)))
    alpha = geo.first_fundamental_form(M)
    beta = geo.pullback_metric(h0, M)
    res = el_residual(alpha, beta).components
    y = np.moveaxis(np.asarray(Y(coords), dtype=float), 0, -1)
    lower = beta.components if pairing == "beta" else alpha.components
    analytic = -4.0 * geo.integrate(np.einsum("...m,...mn,...n->...", res, lower, y), M)

    values = []
    for s in (eps, -eps):
        u, Du = _flow_on_parameters(Y, M, s)
        values.append(phi(_composed_samples(hfn, M, u, Du), M, N))
    fd = (values[0] - values[1]) / (2 * eps)
    return FirstVariation(float(analytic), float(fd), eps)
