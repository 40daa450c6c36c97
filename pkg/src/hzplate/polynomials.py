"""Barycentric coordinates and the Legendre-type polynomial kernels used
by every finite element space in the package.

All recurrences are the classical normalised three-term ones, evaluated
iteratively.  ``scaled_integrated_legendre`` satisfies the homogeneity
identity L_s^p(x, t) = t^p L^p(x / t) for t > 0 and extends smoothly to
t = 0 through the recurrence.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_DEGREE = 32


@dataclass(frozen=True)
class PolyKernel:
    """Descriptor of a scalar polynomial kernel family member."""

    family: str  # "legendre" | "integrated" | "scaled-integrated" | "barycentric"
    degree: int

    def __post_init__(self):
        if not 0 <= self.degree <= MAX_DEGREE:
            raise ValueError(f"degree {self.degree} outside supported range [0, {MAX_DEGREE}]")


def barycentric(xi, eta):
    """Barycentric coordinates of the reference triangle.

    lambda1 = 1 - xi - eta, lambda2 = eta, lambda3 = xi; they sum to one
    everywhere in the plane.
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    return 1.0 - xi - eta, eta, xi


def legendre_all(p: int, x):
    """Legendre polynomials P_0 .. P_p at x, shape (p+1,) + x.shape."""
    x = np.asarray(x, dtype=float)
    out = np.empty((p + 1,) + x.shape)
    out[0] = 1.0
    if p >= 1:
        out[1] = x
    for k in range(2, p + 1):
        out[k] = ((2 * k - 1) * x * out[k - 1] - (k - 1) * out[k - 2]) / k
    return out


def legendre(p: int, x):
    """Classical Legendre polynomial P_p(x)."""
    if p < 0:
        raise ValueError("degree must be nonnegative")
    return legendre_all(p, x)[p]


def legendre_deriv_all(p: int, x):
    """Derivatives P_0' .. P_p' at x."""
    x = np.asarray(x, dtype=float)
    vals = legendre_all(p, x)
    out = np.empty_like(vals)
    out[0] = 0.0
    if p >= 1:
        out[1] = 1.0
    for k in range(2, p + 1):
        out[k] = out[k - 2] + (2 * k - 1) * vals[k - 1]
    return out


def integrated_legendre(p: int, x):
    """L^p(x) = int_{-1}^x P_{p-1}; requires p >= 2.

    Uses the closed form (P_p - P_{p-2}) / (2p - 1).
    """
    if p < 2:
        raise ValueError("integrated Legendre polynomials start at degree 2")
    vals = legendre_all(p, x)
    return (vals[p] - vals[p - 2]) / (2 * p - 1)


def scaled_integrated_all(p: int, x, t):
    """Scaled integrated Legendre polynomials and their partials.

    Returns (L, dLdx, dLdt), arrays of shape (p+1,) + x.shape holding
    orders 0..p.  Order 0 is unused and set to zero; order 1 is x.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    x, t = np.broadcast_arrays(x, t)
    shape = (p + 1,) + x.shape
    L = np.zeros(shape)
    dx = np.zeros(shape)
    dt = np.zeros(shape)
    if p >= 1:
        L[1] = x
        dx[1] = 1.0
    if p >= 2:
        L[2] = 0.5 * (x * x - t * t)
        dx[2] = x
        dt[2] = -t
    for k in range(3, p + 1):
        a, b = 2 * k - 3, k - 3
        L[k] = (a * x * L[k - 1] - b * t * t * L[k - 2]) / k
        dx[k] = (a * (L[k - 1] + x * dx[k - 1]) - b * t * t * dx[k - 2]) / k
        dt[k] = (a * x * dt[k - 1] - b * (2 * t * L[k - 2] + t * t * dt[k - 2])) / k
    return L, dx, dt


def scaled_integrated_legendre(p: int, x, t):
    """L_s^p(x, t), homogeneous of degree p; equals t^p L^p(x/t) for t > 0."""
    if p < 1:
        raise ValueError("scaled integrated Legendre polynomials start at degree 1")
    return scaled_integrated_all(p, x, t)[0][p]
