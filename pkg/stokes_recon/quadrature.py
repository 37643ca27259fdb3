"""
Gauss rules on the reference triangle and the unit interval.

Triangle rules are tensor Gauss rules on the unit square collapsed onto the
reference triangle (0,0)-(1,0)-(0,1) by the Duffy map; the collapsed
direction uses Gauss–Jacobi points with weight (1 - t) so that the Jacobian
of the map is absorbed exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

logger = logging.getLogger(__name__)

__all__ = ["QuadRule", "triangle_rule", "edge_rule", "MAX_TRIANGLE_DEGREE"]

MAX_TRIANGLE_DEGREE = 30
MAX_EDGE_DEGREE = 80


@dataclass(frozen=True)
class QuadRule:
    """
    Quadrature rule on the reference triangle or the unit edge.

    ``points`` holds barycentric coordinates: shape (n, 3) on the triangle
    (lambda_0 = 1 - x - y, lambda_1 = x, lambda_2 = y) and shape (n, 2) on
    the edge (1 - t, t).  Weights sum to 1/2 on the triangle, 1 on the edge.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int
    domain: str

    @property
    def xy(self) -> np.ndarray:
        """Reference coordinates (n, 2) of a triangle rule."""
        if self.domain != "triangle":
            raise ValueError("xy is only defined for triangle rules")
        return self.points[:, 1:]

    @property
    def t(self) -> np.ndarray:
        """Edge parameter in [0, 1] of an edge rule."""
        if self.domain != "edge":
            raise ValueError("t is only defined for edge rules")
        return self.points[:, 1]

    def __len__(self) -> int:
        return len(self.weights)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadRule:
    """Collapsed Gauss rule integrating polynomials of total ``degree`` exactly.

    Parameters
    ----------
    degree
        Polynomial degree to integrate exactly, ``0 <= degree <= 30``.

    Returns
    -------
    QuadRule
        ``(degree // 2 + 1)**2`` points with barycentric coordinates.
    """
    if not isinstance(degree, (int, np.integer)) or degree < 0 or degree > MAX_TRIANGLE_DEGREE:
        raise ValueError(
            f"Triangle quadrature degree must be an integer in [0, {MAX_TRIANGLE_DEGREE}], got {degree!r}"
        )
    n = int(degree) // 2 + 1

    # s along the collapsed direction, t across it; x = s (1 - t), y = t
    s, ws = roots_legendre(n)
    t, wt = roots_jacobi(n, 1.0, 0.0)
    s = (s + 1.0) / 2.0
    ws = ws / 2.0
    t = (t + 1.0) / 2.0
    wt = wt / 4.0

    x = np.outer(1.0 - t, s).ravel()
    y = np.repeat(t, n)
    w = np.outer(wt, ws).ravel()

    points = np.column_stack([1.0 - x - y, x, y])
    logger.debug("Built triangle rule of degree %d with %d points", degree, len(w))
    return QuadRule(points=_frozen(points), weights=_frozen(w), degree=int(degree), domain="triangle")


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> QuadRule:
    """Gauss–Legendre rule on [0, 1] exact for polynomials of ``degree``."""
    if not isinstance(degree, (int, np.integer)) or degree < 0 or degree > MAX_EDGE_DEGREE:
        raise ValueError(f"Edge quadrature degree must be an integer in [0, {MAX_EDGE_DEGREE}], got {degree!r}")
    n = int(degree) // 2 + 1
    t, w = roots_legendre(n)
    t = (t + 1.0) / 2.0
    w = w / 2.0
    points = np.column_stack([1.0 - t, t])
    return QuadRule(points=_frozen(points), weights=_frozen(w), degree=int(degree), domain="edge")
