"""Fourth-order finite differences on uniform parameter grids.

Axis kinds follow :class:`morphforge.geometry.ParamGrid`:

``periodic``  nodes ``origin + i*h``, wrap-around stencils.
``interval``  endpoint-inclusive nodes, one-sided stencils at the ends.
``polar``     cell-centred nodes on ``[0, pi]``; ghost nodes across each pole
              come from the partner periodic axis shifted by half a period,
              with a sign ``parity`` (``-1`` per polar tensor index).
"""

from __future__ import annotations

from functools import lru_cache
from math import factorial

import numpy as np

_CENTERED = {
    1: np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0,
    2: np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0,
}


@lru_cache(maxsize=None)
def fd_weights(offsets: tuple[float, ...], m: int) -> np.ndarray:
    """Weights ``w`` with ``sum(w * f(x + o*h)) ~ h**m * f^(m)(x)``."""
    off = np.asarray(offsets, dtype=float)
    n = off.size
    vander = np.vander(off, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[m] = factorial(m)
    return np.linalg.solve(vander, rhs)


def _apply_centered(padded: np.ndarray, axis: int, n: int, w: np.ndarray) -> np.ndarray:
    out = np.zeros_like(np.take(padded, np.arange(n), axis=axis))
    for k, wk in enumerate(w):
        if wk != 0.0:
            out += wk * np.take(padded, np.arange(k, k + n), axis=axis)
    return out


def derivative(
    f: np.ndarray,
    spacing: float,
    axis: int,
    kind: str,
    order: int = 1,
    *,
    partner_axis: int | None = None,
    parity=1.0,
) -> np.ndarray:
    """Derivative of ``order`` (1 or 2) of ``f`` along grid ``axis``.

    ``f`` has the grid axes first; any trailing axes are components.
    """
    f = np.asarray(f, dtype=float)
    n = f.shape[axis]
    w = _CENTERED[order]
    scale = spacing**order
    if kind == "periodic":
        out = np.zeros_like(f)
        for k, wk in zip(range(-2, 3), w):
            if wk != 0.0:
                out += wk * np.roll(f, -k, axis=axis)
        return out / scale
    if kind == "polar":
        if partner_axis is None:
            raise ValueError("polar axis needs a periodic partner axis")
        m = f.shape[partner_axis]
        if m % 2:
            raise ValueError("polar ghost nodes need an even partner axis count")
        flipped = np.asarray(parity) * np.roll(f, m // 2, axis=partner_axis)
        lower = np.flip(np.take(flipped, [0, 1], axis=axis), axis=axis)
        upper = np.flip(np.take(flipped, [n - 2, n - 1], axis=axis), axis=axis)
        padded = np.concatenate([lower, f, upper], axis=axis)
        return _apply_centered(padded, axis, n, w) / scale
    if kind != "interval":
        raise ValueError(f"unknown axis kind {kind!r}")
    if n < 6:
        raise ValueError("interval axes need at least 6 nodes for 4th-order stencils")
    out = np.zeros_like(f)
    if n > 4:
        inner = _apply_centered(f, axis, n - 4, w)
        idx = [slice(None)] * f.ndim
        idx[axis] = slice(2, n - 2)
        out[tuple(idx)] = inner
    for node in (0, 1, n - 2, n - 1):
        if node < 2:
            offs = tuple(float(j - node) for j in range(6))
            cols = list(range(6))
        else:
            offs = tuple(float(j - node) for j in range(n - 6, n))
            cols = list(range(n - 6, n))
        wk = fd_weights(offs, order)
        vals = np.tensordot(np.take(f, cols, axis=axis), wk, axes=([axis], [0]))
        idx = [slice(None)] * f.ndim
        idx[axis] = node
        out[tuple(idx)] = vals
    return out / scale
