"""Central finite differences on manifold-valued variables."""
from __future__ import annotations

from math import factorial
from typing import Callable

import numpy as np

# first-derivative central stencils, offsets -m..m
_FIRST = {
    3: np.array([-0.5, 0.0, 0.5]),
    5: np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0,
}


def stencil_weights(order: int, points: int) -> np.ndarray:
    """Weights ``c`` with ``f^(order)(0) ~= sum c_m f(m h) / h^order``.

    Offsets are the integers ``-(points//2) .. points//2``; solved from the
    Vandermonde moment conditions.
    """
    if points % 2 == 0 or points <= order:
        raise ValueError("need an odd number of points larger than the order")
    m = points // 2
    x = np.arange(-m, m + 1, dtype=float)
    V = np.vander(x, points, increasing=True).T
    rhs = np.zeros(points)
    rhs[order] = factorial(order)
    return np.linalg.solve(V, rhs)


def derivative(fun: Callable[[float], np.ndarray], order: int, h: float, points: int | None = None) -> np.ndarray:
    """``order``-th derivative of ``fun`` at 0 by a central stencil."""
    points = points or (order + 1 + (order + 1) % 2 + 2)
    w = stencil_weights(order, points)
    m = points // 2
    acc = None
    for c, s in zip(w, range(-m, m + 1)):
        if c == 0.0:
            continue
        term = c * np.asarray(fun(s * h), dtype=float)
        acc = term if acc is None else acc + term
    return acc / h**order


def jacobian(fun: Callable[[np.ndarray], np.ndarray], dim: int, h: float = 1e-5, points: int = 5) -> np.ndarray:
    """Jacobian at ``delta = 0`` of ``fun(delta)``, column by column."""
    w = _FIRST[points]
    m = points // 2
    cols = []
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = h
        col = sum(c * np.asarray(fun(s * e), dtype=float) for c, s in zip(w, range(-m, m + 1)) if c != 0.0)
        cols.append(col / h)
    return np.column_stack(cols)
