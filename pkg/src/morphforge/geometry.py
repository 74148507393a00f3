"""Discrete differential geometry of embedded hypersurfaces.

Curves in R^2 and surfaces in R^3 are sampled on a uniform parameter grid.
Everything per node is stored "grid axes first", e.g. a metric on a
``(n_theta, n_phi)`` grid has components of shape ``(n_theta, n_phi, 2, 2)``.

Sign convention for the second fundamental form: the unit normal of a curve
is the unit tangent rotated by +90 degrees, the unit normal of a surface is
``r_v x r_u`` normalised, both multiplied by ``orientation_sign``.  With the
default sign a counter-clockwise unit circle and the standard ``(theta, phi)``
unit sphere both get ``II = +g`` (inward normal, positive curvature).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from itertools import product
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from . import _fd
from .errors import (
    DegenerateNormal,
    NonFiniteInput,
    OffManifold,
    SingularMetric,
    ValidationError,
)
from .quadrature import fejer_polar_weights

AXIS_KINDS = ("periodic", "interval", "polar")
OFF_MANIFOLD_RTOL = 1e-6

Chart = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]]


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamGrid:
    """Uniform tensor-product grid over a parameter domain.

    ``kinds[i]`` is one of ``"periodic"`` (nodes ``origin + i*h``, period
    ``n*h``), ``"interval"`` (endpoint-inclusive nodes ``origin + i*h``) or
    ``"polar"`` (cell-centred nodes ``(i + 1/2) h`` on ``[0, pi]``, which
    needs a periodic partner axis with an even node count).
    """

    shape: tuple[int, ...]
    origin: tuple[float, ...]
    spacing: tuple[float, ...]
    kinds: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "origin", tuple(float(s) for s in self.origin))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "kinds", tuple(self.kinds))
        d = len(self.shape)
        if not (len(self.origin) == len(self.spacing) == len(self.kinds) == d):
            raise ValidationError("grid shape/origin/spacing/kinds lengths differ")
        if d not in (1, 2):
            raise ValidationError(f"grid dimension must be 1 or 2, got {d}")
        for n, h, kind in zip(self.shape, self.spacing, self.kinds):
            if kind not in AXIS_KINDS:
                raise ValidationError(f"unknown axis kind {kind!r}")
            if not (np.isfinite(h) and h > 0):
                raise ValidationError("grid spacing must be strictly positive")
            if n < 2:
                raise ValidationError("every axis needs at least 2 nodes")
        for ax, kind in enumerate(self.kinds):
            if kind == "polar":
                if abs(self.shape[ax] * self.spacing[ax] - np.pi) > 1e-12 or self.origin[ax] != 0.0:
                    raise ValidationError("polar axes must cover [0, pi] with cell-centred nodes")
                partner = self.partner(ax)
                if self.shape[partner] % 2:
                    raise ValidationError("polar axis partner needs an even node count")

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def periodic(self) -> tuple[bool, ...]:
        return tuple(k == "periodic" for k in self.kinds)

    def period(self, axis: int) -> float:
        return self.shape[axis] * self.spacing[axis]

    def partner(self, axis: int) -> int:
        others = [a for a in range(self.dim) if a != axis and self.kinds[a] == "periodic"]
        if not others:
            raise ValidationError("polar axis needs a periodic partner axis")
        return others[0]

    def axes(self) -> list[np.ndarray]:
        out = []
        for n, o, h, kind in zip(self.shape, self.origin, self.spacing, self.kinds):
            shift = 0.5 if kind == "polar" else 0.0
            out.append(o + (np.arange(n) + shift) * h)
        return out

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(dim, *shape)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"))

    def axis_weights(self, axis: int) -> np.ndarray:
        n, h, kind = self.shape[axis], self.spacing[axis], self.kinds[axis]
        if kind == "periodic":
            return np.full(n, h)
        if kind == "interval":
            w = np.full(n, h)
            w[0] = w[-1] = 0.5 * h
            return w
        return fejer_polar_weights(n)

    def weights(self) -> np.ndarray:
        w = self.axis_weights(0)
        for ax in range(1, self.dim):
            w = np.multiply.outer(w, self.axis_weights(ax))
        return w

    def derivative(self, f: np.ndarray, axis: int, order: int = 1, parity=1.0) -> np.ndarray:
        kind = self.kinds[axis]
        partner = self.partner(axis) if kind == "polar" else None
        return _fd.derivative(
            f, self.spacing[axis], axis, kind, order, partner_axis=partner, parity=parity
        )

    def to_dict(self) -> dict:
        return {
            "shape": list(self.shape),
            "origin": list(self.origin),
            "spacing": list(self.spacing),
            "periodic": list(self.periodic),
            "kinds": list(self.kinds),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParamGrid":
        kinds = d.get("kinds")
        if kinds is None:
            kinds = ["periodic" if p else "interval" for p in d["periodic"]]
        return cls(tuple(d["shape"]), tuple(d["origin"]), tuple(d["spacing"]), tuple(kinds))

    @classmethod
    def circle(cls, n: int) -> "ParamGrid":
        return cls((n,), (0.0,), (2 * np.pi / n,), ("periodic",))

    @classmethod
    def interval(cls, n: int, a: float = 0.0, b: float = 1.0) -> "ParamGrid":
        return cls((n,), (a,), ((b - a) / (n - 1),), ("interval",))

    @classmethod
    def sphere(cls, n_theta: int, n_phi: int) -> "ParamGrid":
        return cls(
            (n_theta, n_phi), (0.0, 0.0), (np.pi / n_theta, 2 * np.pi / n_phi), ("polar", "periodic")
        )


def interpolate(values: np.ndarray, grid: ParamGrid, coords: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of grid data at ``coords`` (shape ``(dim, *S)``).

    Periodic axes wrap; interval and polar axes clamp to the end nodes.
    """
    coords = np.asarray(coords, dtype=float)
    lo_idx, frac = [], []
    for ax in range(grid.dim):
        n, h, o, kind = grid.shape[ax], grid.spacing[ax], grid.origin[ax], grid.kinds[ax]
        s = (coords[ax] - o) / h
        if kind == "polar":
            s = s - 0.5
        if kind == "periodic":
            s = np.mod(s, n)
            i0 = np.floor(s).astype(int)
            fr = s - i0
            i0 = np.mod(i0, n)
            i1 = np.mod(i0 + 1, n)
        else:
            s = np.clip(s, 0.0, n - 1)
            i0 = np.minimum(np.floor(s).astype(int), n - 2)
            fr = s - i0
            i1 = i0 + 1
        lo_idx.append((i0, i1))
        frac.append(fr)
    out = 0.0
    for corner in product((0, 1), repeat=grid.dim):
        weight = 1.0
        idx = []
        for ax, c in enumerate(corner):
            idx.append(lo_idx[ax][c])
            weight = weight * (frac[ax] if c else 1.0 - frac[ax])
        tail = (None,) * (values.ndim - grid.dim)
        out = out + weight[(...,) + tail] * values[tuple(idx)]
    return out


# ---------------------------------------------------------------------------
# manifolds
# ---------------------------------------------------------------------------


def _unit_normal(tangents: np.ndarray, sign: float) -> np.ndarray:
    """Unit normal from coordinate tangents of shape ``(..., dim, A)``."""
    dim = tangents.shape[-2]
    if dim == 1:
        t = tangents[..., 0, :]
        nvec = np.stack([-t[..., 1], t[..., 0]], axis=-1)
        scale = np.linalg.norm(t, axis=-1)
        ref = scale
    else:
        nvec = np.cross(tangents[..., 1, :], tangents[..., 0, :])
        scale = np.linalg.norm(nvec, axis=-1)
        ref = np.linalg.norm(tangents[..., 0, :], axis=-1) * np.linalg.norm(tangents[..., 1, :], axis=-1)
    if np.any(~(scale > 1e-12 * np.maximum(ref, 1e-300))) or np.any(ref == 0):
        raise DegenerateNormal("coordinate tangents are linearly dependent at some node")
    return sign * nvec / scale[..., None]


@dataclass(frozen=True, eq=False)
class EmbeddedManifold:
    """A sampled curve in R^2 or surface in R^3.

    Parameters
    ----------
    grid : ParamGrid
    positions : ndarray, shape ``grid.shape + (dim + 1,)``
    orientation_sign : +1 or -1, flips the normal (and the sign of II).
    chart : callable, optional
        ``chart(u) -> (r, dr, d2r)`` for coordinates ``u`` of shape
        ``(dim, *S)``; ``dr`` has shape ``S + (dim, A)`` and ``d2r`` shape
        ``S + (dim, dim, A)``.  When absent, derivatives come from 4th-order
        differences of the tabulated positions.
    distance_fn : callable, optional
        Exact distance from ambient points ``(..., A)`` to the manifold.
    """

    grid: ParamGrid
    positions: np.ndarray
    orientation_sign: int = 1
    chart: Chart | None = None
    distance_fn: Callable | None = None
    name: str = "tabulated"

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        object.__setattr__(self, "positions", pos)
        if pos.shape[: self.grid.dim] != self.grid.shape:
            raise ValidationError(f"positions shape {pos.shape} does not match grid {self.grid.shape}")
        if pos.ndim != self.grid.dim + 1 or pos.shape[-1] != self.grid.dim + 1:
            raise ValidationError("ambient dimension must equal dim + 1")
        if not np.all(np.isfinite(pos)):
            raise NonFiniteInput("non-finite manifold positions")
        if self.orientation_sign not in (1, -1):
            raise ValidationError("orientation_sign must be +1 or -1")
        if self.chart is not None:
            self._check_closure(pos)

    def _check_closure(self, pos: np.ndarray) -> None:
        u = self.grid.coords()
        scale = max(1.0, float(np.max(np.abs(pos))))
        for ax, kind in enumerate(self.grid.kinds):
            if kind != "periodic":
                continue
            shifted = u.copy()
            shifted[ax] += self.grid.period(ax)
            r = self.chart(shifted)[0]
            if np.max(np.abs(r - pos)) > 1e-10 * scale:
                raise ValidationError(f"parametrization is not periodic along axis {ax}")

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def ambient_dim(self) -> int:
        return self.positions.shape[-1]

    @cached_property
    def jets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(r, dr, d2r)`` at the grid nodes."""
        if self.chart is not None:
            return self.chart(self.grid.coords())
        pos = self.positions
        d = self.dim
        dr = np.stack([self.grid.derivative(pos, ax) for ax in range(d)], axis=-2)
        d2r = np.empty(pos.shape[:d] + (d, d, pos.shape[-1]))
        for i in range(d):
            d2r[..., i, i, :] = self.grid.derivative(pos, i, order=2)
            for j in range(i + 1, d):
                mixed = self.grid.derivative(dr[..., j, :], i)
                d2r[..., i, j, :] = d2r[..., j, i, :] = mixed
        return pos, dr, d2r

    def jets_at(self, coords: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.chart is not None:
            return self.chart(np.asarray(coords, dtype=float))
        return tuple(interpolate(a, self.grid, coords) for a in self.jets)

    @cached_property
    def normal(self) -> np.ndarray:
        return _unit_normal(self.jets[1], self.orientation_sign)

    @cached_property
    def volume_weights(self) -> np.ndarray:
        g = first_fundamental_form(self).components
        return self.grid.weights() * np.sqrt(np.linalg.det(g))

    @cached_property
    def _tree(self) -> cKDTree:
        return cKDTree(self.positions.reshape(-1, self.ambient_dim))

    @cached_property
    def diameter(self) -> float:
        flat = self.positions.reshape(-1, self.ambient_dim)
        c = flat.mean(axis=0)
        return 2.0 * float(np.max(np.linalg.norm(flat - c, axis=-1)))

    def nearest_node(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Distance to and flat index of the nearest grid node."""
        pts = np.asarray(points, dtype=float)
        dist, idx = self._tree.query(pts.reshape(-1, self.ambient_dim))
        return dist.reshape(pts.shape[:-1]), idx.reshape(pts.shape[:-1])

    def project(self, points: np.ndarray, iterations: int = 20) -> tuple[np.ndarray, np.ndarray]:
        """Closest-point parameter coordinates and distances for ambient points.

        Starts from the nearest node and refines by damped Gauss-Newton on the
        chart (or on interpolated jets for tabulated manifolds).
        """
        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(-1, self.ambient_dim)
        _, idx = self._tree.query(flat)
        u = self.grid.coords().reshape(self.dim, -1)[:, idx]
        damping = 1e-12
        for _ in range(iterations):
            r, dr, _ = self.jets_at(u)
            res = flat - r
            jtj = np.einsum("pia,pja->pij", dr, dr)
            rhs = np.einsum("pia,pa->pi", dr, res)
            jtj = jtj + damping * np.trace(jtj, axis1=-2, axis2=-1)[:, None, None] * np.eye(self.dim)
            step = np.linalg.solve(jtj, rhs[..., None])[..., 0]
            u = u + step.T
            if np.max(np.abs(step)) < 1e-15:
                break
        r = self.jets_at(u)[0]
        dist = np.linalg.norm(flat - r, axis=-1)
        return u.reshape((self.dim,) + pts.shape[:-1]), dist.reshape(pts.shape[:-1])

    def distance_to(self, points: np.ndarray) -> np.ndarray:
        if self.distance_fn is not None:
            return np.asarray(self.distance_fn(np.asarray(points, dtype=float)))
        return self.project(points)[1]

    def check_on_manifold(self, points: np.ndarray, rtol: float = OFF_MANIFOLD_RTOL) -> float:
        """Max distance from ``points`` to this manifold; raises :class:`OffManifold`."""
        dist = float(np.max(self.distance_to(points)))
        if dist > rtol * self.diameter:
            raise OffManifold(
                f"image point lies {dist:.3e} from {self.name} (tolerance {rtol * self.diameter:.3e})"
            )
        return dist

    def with_positions(self, positions: np.ndarray, name: str = "tabulated") -> "EmbeddedManifold":
        return EmbeddedManifold(self.grid, positions, self.orientation_sign, name=name)


# ---------------------------------------------------------------------------
# factories
# ---------------------------------------------------------------------------


def _circle_chart(radius: float, center) -> Chart:
    c = np.asarray(center, dtype=float)

    def chart(u):
        th = u[0]
        cs = np.stack([np.cos(th), np.sin(th)], axis=-1)
        tg = np.stack([-np.sin(th), np.cos(th)], axis=-1)
        return c + radius * cs, radius * tg[..., None, :], -radius * cs[..., None, None, :]

    return chart


def circle(radius: float = 1.0, n: int = 256, center=(0.0, 0.0)) -> EmbeddedManifold:
    chart = _circle_chart(radius, center)
    grid = ParamGrid.circle(n)
    c = np.asarray(center, dtype=float)
    return EmbeddedManifold(
        grid,
        chart(grid.coords())[0],
        chart=chart,
        distance_fn=lambda x: np.abs(np.linalg.norm(x - c, axis=-1) - radius),
        name=f"circle(R={radius})",
    )


def warped_circle(radius: float = 1.0, n: int = 256, amp: float = 0.3) -> EmbeddedManifold:
    """Circle of ``radius`` with the non-uniform angle ``theta = u + amp*sin(u)``."""
    if not abs(amp) < 1:
        raise ValidationError("warp amplitude must satisfy |amp| < 1")

    def chart(u):
        s = u[0]
        th = s + amp * np.sin(s)
        d1 = 1 + amp * np.cos(s)
        d2 = -amp * np.sin(s)
        cs = np.stack([np.cos(th), np.sin(th)], axis=-1)
        tg = np.stack([-np.sin(th), np.cos(th)], axis=-1)
        r = radius * cs
        dr = radius * tg * d1[..., None]
        d2r = -radius * cs * (d1**2)[..., None] + radius * tg * d2[..., None]
        return r, dr[..., None, :], d2r[..., None, None, :]

    grid = ParamGrid.circle(n)
    return EmbeddedManifold(
        grid,
        chart(grid.coords())[0],
        chart=chart,
        distance_fn=lambda x: np.abs(np.linalg.norm(x, axis=-1) - radius),
        name=f"warped_circle(R={radius}, amp={amp})",
    )


def ellipse(a: float, b: float, n: int = 256) -> EmbeddedManifold:
    def chart(u):
        th = u[0]
        r = np.stack([a * np.cos(th), b * np.sin(th)], axis=-1)
        dr = np.stack([-a * np.sin(th), b * np.cos(th)], axis=-1)
        return r, dr[..., None, :], -r[..., None, None, :]

    grid = ParamGrid.circle(n)
    return EmbeddedManifold(grid, chart(grid.coords())[0], chart=chart, name=f"ellipse({a}, {b})")


def segment(p0, p1, n: int = 64) -> EmbeddedManifold:
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)

    def chart(u):
        s = u[0][..., None]
        r = p0 + s * (p1 - p0)
        dr = np.broadcast_to(p1 - p0, r.shape)[..., None, :]
        return r, dr, np.zeros(r.shape[:-1] + (1, 1, 2))

    grid = ParamGrid.interval(n)
    return EmbeddedManifold(grid, chart(grid.coords())[0], chart=chart, name="segment")


def _sphere_chart(radius: float, center) -> Chart:
    c = np.asarray(center, dtype=float)

    def chart(u):
        th, ph = u[0], u[1]
        st, ct, sp, cp = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
        zero = np.zeros_like(th)
        p = np.stack([st * cp, st * sp, ct], axis=-1)
        r_t = np.stack([ct * cp, ct * sp, -st], axis=-1)
        r_p = np.stack([-st * sp, st * cp, zero], axis=-1)
        r_tp = np.stack([-ct * sp, ct * cp, zero], axis=-1)
        r_pp = np.stack([-st * cp, -st * sp, zero], axis=-1)
        dr = np.stack([r_t, r_p], axis=-2)
        d2r = np.stack([np.stack([-p, r_tp], axis=-2), np.stack([r_tp, r_pp], axis=-2)], axis=-3)
        return c + radius * p, radius * dr, radius * d2r

    return chart


def sphere(radius: float = 1.0, n_theta: int = 64, n_phi: int = 128, center=(0.0, 0.0, 0.0)) -> EmbeddedManifold:
    """Sphere in ``(theta, phi)`` coordinates, cell-centred in ``theta`` (no pole nodes)."""
    chart = _sphere_chart(radius, center)
    grid = ParamGrid.sphere(n_theta, n_phi)
    c = np.asarray(center, dtype=float)
    return EmbeddedManifold(
        grid,
        chart(grid.coords())[0],
        chart=chart,
        distance_fn=lambda x: np.abs(np.linalg.norm(x - c, axis=-1) - radius),
        name=f"sphere(R={radius})",
    )


def warped_sphere(
    radius: float = 1.0, n_theta: int = 64, n_phi: int = 128, amp_theta: float = 0.2, amp_phi: float = 0.2
) -> EmbeddedManifold:
    """Sphere in the non-uniform chart ``theta = s + a sin 2s``, ``phi = p + b sin 2p``.

    Both warps commute with the pole reflection ``(s, p) -> (-s, p + pi)``,
    so the polar ghost-node rule of the grid stays valid.
    """
    if not (abs(amp_theta) < 0.5 and abs(amp_phi) < 0.5):
        raise ValidationError("warp amplitudes must satisfy |amp| < 1/2")
    base = _sphere_chart(radius, (0.0, 0.0, 0.0))

    def chart(u):
        s, p = u[0], u[1]
        th, ph = s + amp_theta * np.sin(2 * s), p + amp_phi * np.sin(2 * p)
        j = np.stack([1 + 2 * amp_theta * np.cos(2 * s), 1 + 2 * amp_phi * np.cos(2 * p)], axis=-1)
        jj = np.stack([-4 * amp_theta * np.sin(2 * s), -4 * amp_phi * np.sin(2 * p)], axis=-1)
        r, dr0, d2r0 = base(np.stack([th, ph]))
        dr = dr0 * j[..., :, None]
        d2r = d2r0 * (j[..., :, None] * j[..., None, :])[..., None]
        d2r[..., 0, 0, :] += dr0[..., 0, :] * jj[..., 0, None]
        d2r[..., 1, 1, :] += dr0[..., 1, :] * jj[..., 1, None]
        return r, dr, d2r

    grid = ParamGrid.sphere(n_theta, n_phi)
    return EmbeddedManifold(
        grid,
        chart(grid.coords())[0],
        chart=chart,
        distance_fn=lambda x: np.abs(np.linalg.norm(x, axis=-1) - radius),
        name=f"warped_sphere(R={radius})",
    )


def chart_from_parametrization(fn: Callable[[np.ndarray], np.ndarray], dim: int, step: float = 2e-3) -> Chart:
    """Build a chart from a position-only callable by 4th-order central differences.

    ``fn(u)`` maps coordinates of shape ``(dim, *S)`` to points ``S + (A,)``.
    """
    w1 = _fd._CENTERED[1]
    w2 = _fd._CENTERED[2]
    offs = (-2, -1, 0, 1, 2)

    def chart(u):
        u = np.asarray(u, dtype=float)
        r = fn(u)

        def at(shift):
            v = u.copy()
            for ax, k in shift.items():
                v[ax] = v[ax] + k * step
            return fn(v)

        dr = np.stack(
            [sum(w * at({i: k}) for k, w in zip(offs, w1) if w) / step for i in range(dim)], axis=-2
        )
        d2r = np.empty(r.shape[:-1] + (dim, dim, r.shape[-1]))
        for i in range(dim):
            d2r[..., i, i, :] = sum(w * at({i: k}) for k, w in zip(offs, w2) if w) / step**2
            for j in range(i + 1, dim):
                mixed = sum(
                    wa * wb * at({i: ka, j: kb})
                    for ka, wa in zip(offs, w1)
                    for kb, wb in zip(offs, w1)
                    if wa and wb
                ) / step**2
                d2r[..., i, j, :] = d2r[..., j, i, :] = mixed
        return r, dr, d2r

    return chart


def from_parametrization(
    fn: Callable[[np.ndarray], np.ndarray], grid: ParamGrid, orientation_sign: int = 1, name: str = "param"
) -> EmbeddedManifold:
    chart = chart_from_parametrization(fn, grid.dim)
    return EmbeddedManifold(grid, fn(grid.coords()), orientation_sign, chart=chart, name=name)


# ---------------------------------------------------------------------------
# tensor fields and maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CovariantTensorField:
    """Components of a ``(0, order)`` tensor field in the base manifold's chart.

    ``evaluator(coords) -> components`` evaluates the field exactly at
    arbitrary parameter coordinates; without it :meth:`at` interpolates.
    """

    order: int
    components: np.ndarray
    base: EmbeddedManifold
    evaluator: Callable | None = None
    name: str = ""

    def __post_init__(self):
        comp = np.asarray(self.components, dtype=float)
        object.__setattr__(self, "components", comp)
        if self.order not in (1, 2):
            raise ValidationError("only tensor orders 1 and 2 are supported")
        expected = self.base.grid.shape + (self.base.dim,) * self.order
        if comp.shape != expected:
            raise ValidationError(f"components shape {comp.shape}, expected {expected}")

    def at(self, coords: np.ndarray) -> np.ndarray:
        if self.evaluator is not None:
            return self.evaluator(coords)
        return interpolate(self.components, self.base.grid, coords)

    def is_symmetric(self, rtol: float = 1e-12) -> bool:
        if self.order != 2:
            return True
        c = self.components
        scale = max(float(np.max(np.abs(c))), 1e-300)
        return bool(np.max(np.abs(c - np.swapaxes(c, -1, -2))) <= rtol * scale)

    def _like(self, comp, name=""):
        return CovariantTensorField(self.order, comp, self.base, name=name)

    def __add__(self, other):
        return self._like(self.components + other.components)

    def __sub__(self, other):
        return self._like(self.components - other.components)

    def __mul__(self, scalar):
        return self._like(self.components * scalar)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class MapDifferentialSamples:
    """Samples of a map ``h: M -> R^{n+1}`` at the nodes of ``M``.

    ``d1[..., i, :] = dh/du^i`` and ``d2[..., i, j, :] = d2h/du^i du^j``.
    ``target_coords`` (shape ``(dim, *grid)``), when known, are the chart
    coordinates of the image points on the target manifold.
    """

    image: np.ndarray
    d1: np.ndarray
    d2: np.ndarray | None = None
    target_coords: np.ndarray | None = None

    def __post_init__(self):
        for name in ("image", "d1", "d2", "target_coords"):
            val = getattr(self, name)
            if val is not None:
                val = np.asarray(val, dtype=float)
                object.__setattr__(self, name, val)
                if not np.all(np.isfinite(val)):
                    raise NonFiniteInput(f"non-finite map samples in {name}")
        if self.d2 is not None:
            scale = max(float(np.max(np.abs(self.d2))), 1.0)
            if np.max(np.abs(self.d2 - np.swapaxes(self.d2, -2, -3))) > 1e-8 * scale:
                raise ValidationError("second differential is not symmetric")


def identity_map(m: EmbeddedManifold) -> MapDifferentialSamples:
    r, dr, d2r = m.jets
    return MapDifferentialSamples(r, dr, d2r, target_coords=m.grid.coords())


def ambient_map(
    m: EmbeddedManifold,
    fn: Callable,
    jac: Callable,
    hess: Callable | None = None,
) -> MapDifferentialSamples:
    """Restrict an ambient map ``F`` to ``m`` by the chain rule.

    ``jac(x)[..., a, b] = dF_a/dx_b`` and ``hess(x)[..., a, b, c]`` likewise.
    """
    r, dr, d2r = m.jets
    jx = jac(r)
    d1 = np.einsum("...ab,...ib->...ia", jx, dr)
    d2 = None
    if hess is not None:
        hx = hess(r)
        d2 = np.einsum("...abc,...ib,...jc->...ija", hx, dr, dr) + np.einsum("...ab,...ijb->...ija", jx, d2r)
    return MapDifferentialSamples(fn(r), d1, d2)


def param_map(m: EmbeddedManifold, fn: Callable[[np.ndarray], np.ndarray], step: float = 2e-3) -> MapDifferentialSamples:
    """Samples of a map given in source coordinates, ``fn(u) -> points``."""
    r, dr, d2r = chart_from_parametrization(fn, m.dim, step)(m.grid.coords())
    return MapDifferentialSamples(r, dr, d2r)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def _check_spd(g: np.ndarray, what: str = "metric") -> None:
    det = np.linalg.det(g)
    if not np.all(np.isfinite(det)):
        raise NonFiniteInput(f"non-finite {what}")
    if np.any(det <= 0):
        raise SingularMetric(f"{what} is singular (det <= 0) at {int(np.sum(det <= 0))} nodes")


def first_fundamental_form(m: EmbeddedManifold) -> CovariantTensorField:
    dr = m.jets[1]
    g = np.einsum("...ia,...ja->...ij", dr, dr)
    _check_spd(g)
    evaluator = None
    if m.chart is not None:
        def evaluator(coords):
            d = m.chart(coords)[1]
            return np.einsum("...ia,...ja->...ij", d, d)
    return CovariantTensorField(2, g, m, evaluator, name="g")


def second_fundamental_form(m: EmbeddedManifold) -> CovariantTensorField:
    _check_spd(first_fundamental_form(m).components)
    nvec = m.normal
    ii = np.einsum("...a,...ija->...ij", nvec, m.jets[2])
    evaluator = None
    if m.chart is not None:
        def evaluator(coords):
            _, d, dd = m.chart(coords)
            return np.einsum("...a,...ija->...ij", _unit_normal(d, m.orientation_sign), dd)
    return CovariantTensorField(2, ii, m, evaluator, name="II")


def pullback(
    tensor_on_target: CovariantTensorField,
    h: MapDifferentialSamples,
    source: EmbeddedManifold,
) -> CovariantTensorField:
    """``(h^* b)(X, Y) = b(Dh X, Dh Y)`` per node of ``source``.

    Image points are located on the target (``h.target_coords`` or
    closest-point projection), the differential is expressed in target
    coordinates through the target's coordinate tangents, and the target
    tensor is evaluated there (exactly or by interpolation).
    """
    target = tensor_on_target.base
    flat_img = h.image.reshape(-1, target.ambient_dim)
    if h.target_coords is not None:
        coords = h.target_coords.reshape(target.dim, -1)
        dist = np.linalg.norm(target.jets_at(coords)[0] - flat_img, axis=-1)
    else:
        coords, dist = target.project(flat_img)
    if dist.size and float(np.max(dist)) > OFF_MANIFOLD_RTOL * target.diameter:
        raise OffManifold(f"image point lies {float(np.max(dist)):.3e} from {target.name}")
    dr_t = target.jets_at(coords)[1]
    gram = np.einsum("pia,pja->pij", dr_t, dr_t)
    d1 = h.d1.reshape(-1, source.dim, target.ambient_dim)
    rhs = np.einsum("pka,pia->pki", dr_t, d1)
    c = np.linalg.solve(gram, rhs)  # c[p, k, i]: target coordinate k of Dh e_i
    b = tensor_on_target.at(coords)
    if tensor_on_target.order == 1:
        out = np.einsum("pki,pk->pi", c, b)
    else:
        out = np.einsum("pki,plj,pkl->pij", c, c, b)
    out = out.reshape(source.grid.shape + (source.dim,) * tensor_on_target.order)
    return CovariantTensorField(tensor_on_target.order, out, source, name="pullback")


def pullback_metric(h: MapDifferentialSamples, source: EmbeddedManifold) -> CovariantTensorField:
    """``h^* g_N`` for a target with the induced Euclidean metric: ``<dh_i, dh_j>``."""
    g = np.einsum("...ia,...ja->...ij", h.d1, h.d1)
    return CovariantTensorField(2, g, source, name="h*g")


def pullback_second_form(
    h: MapDifferentialSamples, source: EmbeddedManifold, target: EmbeddedManifold
) -> CovariantTensorField:
    """``h^* II_N = <nu_N(h(p)), d2h>`` with ``nu_N`` the target's oriented normal.

    The normal line comes from ``Dh``; its sign is matched to the target's
    normal at the nearest target node, so orientation-reversing maps are
    handled correctly.
    """
    if h.d2 is None:
        raise ValidationError("second differential required for the II pull-back")
    nu = _unit_normal(h.d1, 1.0)
    _, idx = target.nearest_node(h.image)
    ref = target.normal.reshape(-1, target.ambient_dim)[idx]
    sign = np.where(np.sum(nu * ref, axis=-1) >= 0, 1.0, -1.0)
    ii = np.einsum("...a,...ija->...ij", nu * sign[..., None], h.d2)
    return CovariantTensorField(2, ii, source, name="h*II")


def _orthonormal_frames(metric: np.ndarray, frame_order=None) -> np.ndarray:
    """Gram-Schmidt frames ``E`` (columns in coordinates) with ``E^T g E = I``."""
    dim = metric.shape[-1]
    perm = np.arange(dim) if frame_order is None else np.asarray(frame_order)
    gp = metric[..., perm[:, None], perm[None, :]]
    try:
        chol = np.linalg.cholesky(gp)
    except np.linalg.LinAlgError as exc:
        raise SingularMetric("metric is not positive definite") from exc
    e_perm = np.swapaxes(np.linalg.inv(chol), -1, -2)
    frames = np.empty_like(e_perm)
    frames[..., perm, :] = e_perm
    return frames


def frame_components(tensor: CovariantTensorField, metric: CovariantTensorField, frame_order=None) -> np.ndarray:
    if tensor.base is not metric.base and tensor.base.grid != metric.base.grid:
        raise ValidationError("tensor and metric live on different manifolds")
    _check_spd(metric.components)
    e = _orthonormal_frames(metric.components, frame_order)
    if tensor.order == 1:
        return np.einsum("...ia,...i->...a", e, tensor.components)
    return np.einsum("...ia,...jb,...ij->...ab", e, e, tensor.components)


def fiber_norm_sq(tensor: CovariantTensorField, metric: CovariantTensorField, frame_order=None) -> np.ndarray:
    """Squared fiber norm: sum of squared components in a ``metric``-orthonormal frame."""
    comp = frame_components(tensor, metric, frame_order)
    axes = tuple(range(-tensor.order, 0))
    return np.sum(comp**2, axis=axes)


def max_norm(tensor: CovariantTensorField, metric: CovariantTensorField) -> np.ndarray:
    """``max |b(v_1, ..., v_s)|`` over unit vectors (operator norm in an orthonormal frame)."""
    comp = frame_components(tensor, metric)
    if tensor.order == 1:
        return np.linalg.norm(comp, axis=-1)
    return np.linalg.norm(comp, ord=2, axis=(-2, -1))


def integrate(values: np.ndarray, m: EmbeddedManifold) -> float:
    """Integral of a nodal scalar field against the Riemannian volume form of ``m``."""
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise NonFiniteInput("integrand is not finite")
    return float(np.sum(values * m.volume_weights))


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------


def to_json(m: EmbeddedManifold, fields: dict[str, CovariantTensorField] | None = None) -> dict:
    doc = {
        "dim": m.dim,
        "grid": m.grid.to_dict(),
        "positions": m.positions.ravel().tolist(),
        "orientation_sign": m.orientation_sign,
        "fields": {},
    }
    for name, f in (fields or {}).items():
        doc["fields"][name] = {"order": f.order, "components": f.components.ravel().tolist()}
    return doc


def from_json(doc: dict) -> tuple[EmbeddedManifold, dict[str, CovariantTensorField]]:
    grid = ParamGrid.from_dict(doc["grid"])
    dim = int(doc["dim"])
    if dim != grid.dim:
        raise ValidationError("dim does not match grid")
    pos = np.asarray(doc["positions"], dtype=float).reshape(grid.shape + (dim + 1,))
    m = EmbeddedManifold(grid, pos, int(doc.get("orientation_sign", 1)))
    fields = {}
    for name, f in doc.get("fields", {}).items():
        order = int(f["order"])
        comp = np.asarray(f["components"], dtype=float).reshape(grid.shape + (dim,) * order)
        fields[name] = CovariantTensorField(order, comp, m, name=name)
    return m, fields


def save_json(path, m: EmbeddedManifold, fields=None) -> None:
    Path(path).write_text(json.dumps(to_json(m, fields)))


def load_json(path):
    return from_json(json.loads(Path(path).read_text()))
