"""Quadrature grids on a truncated half-line ``[0, T]``.

Two rules are provided.  ``trapezoid`` uses ``n`` equispaced nodes including
both endpoints.  ``gauss`` splits ``[0, T]`` into ``n // order`` equal panels
carrying ``order`` Gauss-Legendre nodes each.

Integrals over sub-intervals ``[lo, hi]`` are approximated from node values by
integrating the local interpolant exactly: piecewise linear for the
trapezoid rule and the panel Lagrange polynomial for the Gauss rule.  This is
what makes Volterra-type rows (integration from ``x`` to ``T``) accurate when
``x`` falls inside a panel.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

RULES = ("gauss", "trapezoid", "custom")


@lru_cache(maxsize=64)
def _legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    t, w = np.polynomial.legendre.leggauss(order)
    t.setflags(write=False)
    w.setflags(write=False)
    return t, w


def _barycentric_weights(t: np.ndarray) -> np.ndarray:
    diff = t[:, None] - t[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / diff.prod(axis=1)


def lagrange_matrix(t: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``L[k, j] = l_j(u_k)`` for the Lagrange basis on nodes ``t``."""
    lam = _barycentric_weights(t)
    d = u[:, None] - t[None, :]
    exact = np.isclose(d, 0.0, atol=1e-15)
    d = np.where(exact, 1.0, d)
    terms = lam[None, :] / d
    L = terms / terms.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    if rows.any():
        L[rows] = exact[rows].astype(float)
    return L


def make_nodes(T: float, n: int, rule: str = "gauss", order: int = 8):
    """Return ``(nodes, weights)`` for the requested rule on ``[0, T]``."""
    if T <= 0:
        raise ValueError("grid upper bound T must be positive")
    if rule == "trapezoid":
        if n < 2:
            raise ValueError("trapezoid rule needs at least 2 nodes")
        nodes = np.linspace(0.0, T, n)
        h = T / (n - 1)
        weights = np.full(n, h)
        weights[[0, -1]] = h / 2
        return nodes, weights
    if rule == "gauss":
        if n % order:
            raise ValueError(f"gauss rule needs n divisible by order ({n} % {order} != 0)")
        panels = n // order
        t, w = _legendre(order)
        edges = np.linspace(0.0, T, panels + 1)
        half = np.diff(edges) / 2
        mid = (edges[:-1] + edges[1:]) / 2
        nodes = (mid[:, None] + half[:, None] * t[None, :]).ravel()
        weights = (half[:, None] * w[None, :]).ravel()
        return nodes, weights
    raise ValueError(f"unknown quadrature rule {rule!r}")


def interval_weights(
    nodes: np.ndarray, rule: str, T: float, order: int, lo: float, hi: float
) -> np.ndarray:
    """Weights ``w`` with ``sum(w * phi(nodes)) ~ int_lo^hi phi(y) dy``."""
    lo = max(lo, 0.0)
    hi = min(hi, T)
    n = len(nodes)
    w = np.zeros(n)
    if hi <= lo:
        return w
    if rule == "gauss":
        panels = n // order
        width = T / panels
        t, gw = _legendre(order)
        p_lo = min(int(lo / width), panels - 1)
        p_hi = min(int(hi / width), panels - 1)
        for p in range(p_lo, p_hi + 1):
            a, b = p * width, (p + 1) * width
            u, v = max(a, lo), min(b, hi)
            if v <= u:
                continue
            sl = slice(p * order, (p + 1) * order)
            half = (b - a) / 2
            if u == a and v == b:
                w[sl] += half * gw
                continue
            # exact integral of the degree order-1 interpolant over [u, v]
            tu, tv = (u - a) / half - 1.0, (v - a) / half - 1.0
            q = (tv - tu) / 2 * t + (tu + tv) / 2
            L = lagrange_matrix(t, q)
            w[sl] += half * ((tv - tu) / 2 * gw) @ L
        return w
    # piecewise-linear interpolant on the node list
    a, b = nodes[:-1], nodes[1:]
    u, v = np.maximum(a, lo), np.minimum(b, hi)
    live = v > u
    u, v = np.where(live, u, a), np.where(live, v, a)
    h = b - a
    # integrals of the two hat pieces over [u, v]
    w[:-1] += np.where(live, ((b - u) ** 2 - (b - v) ** 2) / (2 * h), 0.0)
    w[1:] += np.where(live, ((v - a) ** 2 - (u - a) ** 2) / (2 * h), 0.0)
    return w


def gauss_interval(lo: float, hi: float, points: int = 16, piece: float = 0.5):
    """Composite Gauss-Legendre abscissae/weights on ``[lo, hi]``."""
    if hi <= lo:
        return np.zeros(0), np.zeros(0)
    m = max(1, int(np.ceil((hi - lo) / piece)))
    t, w = _legendre(points)
    edges = np.linspace(lo, hi, m + 1)
    half = np.diff(edges) / 2
    mid = (edges[:-1] + edges[1:]) / 2
    y = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    wy = (half[:, None] * w[None, :]).ravel()
    return y, wy
