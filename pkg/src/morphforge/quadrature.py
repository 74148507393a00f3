"""Quadrature primitives: adaptive Gauss-Legendre and Fejer's first rule."""

from __future__ import annotations

from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import QuadratureFailure


@lru_cache(maxsize=None)
def _leggauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


def gauss_legendre(f: Callable, a: float, b: float, n: int = 20) -> float:
    """Fixed ``n``-point Gauss-Legendre rule on ``[a, b]`` (``f`` vectorised)."""
    x, w = _leggauss(n)
    half = 0.5 * (b - a)
    return float(half * np.dot(w, f(0.5 * (a + b) + half * x)))


def composite_gauss_legendre(f: Callable, edges: np.ndarray, n: int = 16) -> float:
    """Gauss-Legendre on every panel ``[edges[i], edges[i+1]]``, one vectorised call."""
    x, w = _leggauss(n)
    edges = np.asarray(edges, dtype=float)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    nodes = 0.5 * (lo + hi) + half * x
    vals = f(nodes.ravel()).reshape(nodes.shape)
    return float(np.sum(half * vals * w))


def adaptive_gauss_legendre(
    f: Callable,
    a: float,
    b: float,
    rtol: float = 1e-10,
    atol: float = 0.0,
    n: int = 10,
    max_intervals: int = 20000,
) -> float:
    """Globally adaptive Gauss-Legendre quadrature.

    Each panel is estimated with an ``n``-point rule and with the same rule
    on its two halves; the panel with the largest discrepancy is split until
    the summed discrepancy falls below ``max(atol, rtol*|I|)``.

    Raises
    ------
    QuadratureFailure
        If the tolerance is not met within ``max_intervals`` panels or the
        integrand is not finite.
    """
    x, w = _leggauss(n)

    def panel(lo: float, hi: float) -> tuple[float, float]:
        mid = 0.5 * (lo + hi)
        whole = 0.5 * (hi - lo) * np.dot(w, f(mid + 0.5 * (hi - lo) * x))
        left = 0.5 * (mid - lo) * np.dot(w, f(0.5 * (lo + mid) + 0.5 * (mid - lo) * x))
        right = 0.5 * (hi - mid) * np.dot(w, f(0.5 * (mid + hi) + 0.5 * (hi - mid) * x))
        fine = left + right
        return float(fine), float(abs(fine - whole))

    panels = [(a, b, *panel(a, b))]
    for _ in range(max_intervals):
        total = sum(p[2] for p in panels)
        err = sum(p[3] for p in panels)
        if not np.isfinite(total):
            raise QuadratureFailure("non-finite integrand value")
        if err <= max(atol, rtol * abs(total)):
            return total
        k = max(range(len(panels)), key=lambda i: panels[i][3])
        lo, hi, _, _ = panels.pop(k)
        mid = 0.5 * (lo + hi)
        panels.append((lo, mid, *panel(lo, mid)))
        panels.append((mid, hi, *panel(mid, hi)))
    raise QuadratureFailure(
        f"adaptive Gauss-Legendre did not reach rtol={rtol} in {max_intervals} panels"
    )


@lru_cache(maxsize=None)
def fejer_polar_weights(n: int) -> np.ndarray:
    """Weights ``c_k`` for cell-centred nodes ``theta_k = (k + 1/2) pi / n``.

    ``sum(c_k * f(theta_k))`` integrates ``f`` over ``[0, pi]`` exactly when
    ``f(theta) = sin(theta) * p(cos(theta))`` with ``p`` a polynomial of degree
    below ``n`` (Fejer's first rule divided by ``sin``).  This is the shape of
    every area integrand on a sphere-like chart, so the rule is spectrally
    accurate where the plain midpoint rule is only second order.
    """
    theta = (np.arange(n) + 0.5) * np.pi / n
    j = np.arange(1, n // 2 + 1)
    w = (2.0 / n) * (
        1.0 - 2.0 * np.sum(np.cos(2.0 * np.outer(theta, j)) / (4.0 * j**2 - 1.0), axis=1)
    )
    return w / np.sin(theta)
