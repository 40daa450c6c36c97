"""Quadrature rules on the reference triangle and on edges.

Triangle rules use a collapsed Gauss-Legendre x Gauss-Jacobi product,
which has positive weights and is exact to any requested polynomial
degree; the Jacobi weight absorbs the Duffy map Jacobian.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_TRIANGLE_DEGREE = 64


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (n, 2) reference coordinates
    weights: np.ndarray  # (n,)
    degree: int


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Rule on {xi, eta >= 0, xi + eta <= 1} exact for polynomials of
    total degree <= degree."""
    if degree < 0:
        raise ValueError("quadrature degree must be nonnegative")
    if degree > MAX_TRIANGLE_DEGREE:
        raise ValueError(f"quadrature degree {degree} beyond supported table")
    n = max(1, (degree + 2) // 2)
    xu, wu = roots_legendre(n)
    u = 0.5 * (xu + 1.0)
    wu = 0.5 * wu
    xv, wv = roots_jacobi(n, 1.0, 0.0)
    v = 0.5 * (xv + 1.0)
    wv = 0.25 * wv
    uu, vv = np.meshgrid(u, v, indexing="ij")
    xi = (uu * (1.0 - vv)).ravel()
    eta = vv.ravel()
    w = np.outer(wu, wv).ravel()
    pts = np.column_stack([xi, eta])
    return QuadratureRule(points=pts, weights=w, degree=degree)


@lru_cache(maxsize=None)
def gauss_rule_01(degree: int):
    """Gauss-Legendre nodes and weights on [0, 1], exact to the degree."""
    n = max(1, (degree + 2) // 2)
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w
