"""Symmetric 2x2 tensor algebra, plane-stress material laws, and the
fourth-order edge transformation tensors.

Symmetric tensors are stored in an orthonormal coordinate frame of Sym(2),

    E1 = e1 x e1,   E2 = sqrt(2) sym(e1 x e2),   E3 = e2 x e2,

so that the Frobenius inner product of two tensors equals the dot product
of their coordinate vectors.  Fourth-order tensors acting on Sym(2) are
3x3 matrices in the same frame; symmetry and positive-definiteness checks
become plain matrix checks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class SymMatrix2:
    """A symmetric 2x2 matrix; only the three independent entries are stored."""

    m11: float
    m12: float
    m22: float

    @staticmethod
    def from_matrix(a) -> "SymMatrix2":
        a = np.asarray(a, dtype=float)
        if a.shape != (2, 2) or abs(a[0, 1] - a[1, 0]) > 1e-12 * (1 + abs(a).max()):
            raise ValueError("expected a symmetric 2x2 matrix")
        return SymMatrix2(a[0, 0], 0.5 * (a[0, 1] + a[1, 0]), a[1, 1])

    @staticmethod
    def from_coords(c) -> "SymMatrix2":
        c = np.asarray(c, dtype=float)
        return SymMatrix2(c[0], c[1] / _SQRT2, c[2])

    @staticmethod
    def sym_dyad(u, v) -> "SymMatrix2":
        """sym(u x v) = (u x v + v x u) / 2."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return SymMatrix2(u[0] * v[0], 0.5 * (u[0] * v[1] + u[1] * v[0]), u[1] * v[1])

    @staticmethod
    def dyad(u) -> "SymMatrix2":
        """u x u."""
        return SymMatrix2.sym_dyad(u, u)

    @staticmethod
    def zero() -> "SymMatrix2":
        return SymMatrix2(0.0, 0.0, 0.0)

    @staticmethod
    def identity() -> "SymMatrix2":
        return SymMatrix2(1.0, 0.0, 1.0)

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.m11, self.m12], [self.m12, self.m22]])

    def coords(self) -> np.ndarray:
        """Coordinates in the orthonormal Sym(2) frame."""
        return np.array([self.m11, _SQRT2 * self.m12, self.m22])

    @property
    def trace(self) -> float:
        return self.m11 + self.m22

    def dot(self, other: "SymMatrix2") -> float:
        """Frobenius inner product <A, B> = A_ij B_ij."""
        return float(self.coords() @ other.coords())

    def norm(self) -> float:
        return float(np.sqrt(self.dot(self)))

    def __add__(self, other: "SymMatrix2") -> "SymMatrix2":
        return SymMatrix2(self.m11 + other.m11, self.m12 + other.m12, self.m22 + other.m22)

    def __sub__(self, other: "SymMatrix2") -> "SymMatrix2":
        return SymMatrix2(self.m11 - other.m11, self.m12 - other.m12, self.m22 - other.m22)

    def __mul__(self, s: float) -> "SymMatrix2":
        return SymMatrix2(s * self.m11, s * self.m12, s * self.m22)

    __rmul__ = __mul__

    def __matmul__(self, v):
        """Matrix-vector product M v."""
        v = np.asarray(v, dtype=float)
        return np.array([self.m11 * v[0] + self.m12 * v[1], self.m12 * v[0] + self.m22 * v[1]])


@dataclass(frozen=True)
class Tensor4:
    """Fourth-order tensor on Sym(2), stored as a 3x3 matrix in the
    orthonormal frame.  ``apply`` realises the contraction A_ijkl B_kl."""

    mat: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mat, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("Tensor4 expects a 3x3 coordinate matrix")
        object.__setattr__(self, "mat", m)

    @staticmethod
    def identity() -> "Tensor4":
        return Tensor4(np.eye(3))

    @staticmethod
    def zero() -> "Tensor4":
        return Tensor4(np.zeros((3, 3)))

    @staticmethod
    def from_dyad(a: SymMatrix2, b: SymMatrix2) -> "Tensor4":
        """The tensor A x B with action (A x B) S = <B, S> A."""
        return Tensor4(np.outer(a.coords(), b.coords()))

    def apply(self, s: SymMatrix2) -> SymMatrix2:
        return SymMatrix2.from_coords(self.mat @ s.coords())

    def __add__(self, other: "Tensor4") -> "Tensor4":
        return Tensor4(self.mat + other.mat)

    def __mul__(self, s: float) -> "Tensor4":
        return Tensor4(s * self.mat)

    __rmul__ = __mul__


@dataclass(frozen=True)
class Material:
    """Isotropic plate material: Young's modulus E, Poisson ratio nu,
    shear correction factor ks, thickness t."""

    E: float
    nu: float
    ks: float = 5.0 / 6.0
    t: float = 0.1

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError("E must be positive")
        if not (0.0 <= self.nu < 0.5):
            raise ValueError("nu must satisfy 0 <= nu < 0.5")
        if not self.ks > 0:
            raise ValueError("ks must be positive")
        if not self.t > 0:
            raise ValueError("t must be positive")

    @property
    def mu(self) -> float:
        """Shear modulus E / (2 (1 + nu))."""
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def shear_stiffness(self) -> float:
        """ks * mu / t^2, the coefficient of the scaled shear term."""
        return self.ks * self.mu / self.t**2


def stiffness_matrix(mat: Material) -> np.ndarray:
    """Plane-stress bending stiffness (1/12) E/(1-nu^2) [nu 1x1 + (1-nu) J]
    as a 3x3 matrix in the orthonormal frame."""
    s = mat.E / (12.0 * (1.0 - mat.nu**2))
    n = mat.nu
    return s * np.array([[1.0, 0.0, n], [0.0, 1.0 - n, 0.0], [n, 0.0, 1.0]])


def compliance_matrix(mat: Material) -> np.ndarray:
    """Inverse bending stiffness (12/E) [(1+nu) J - nu 1x1] in the
    orthonormal frame."""
    s = 12.0 / mat.E
    n = mat.nu
    return s * np.array([[1.0, 0.0, -n], [0.0, 1.0 + n, 0.0], [-n, 0.0, 1.0]])


def apply_stiffness(mat: Material, eps: SymMatrix2) -> SymMatrix2:
    """Bending moment produced by a curvature strain."""
    return SymMatrix2.from_coords(stiffness_matrix(mat) @ eps.coords())


def apply_compliance(mat: Material, m: SymMatrix2) -> SymMatrix2:
    """Curvature strain produced by a bending moment."""
    return SymMatrix2.from_coords(compliance_matrix(mat) @ m.coords())


def double_contract(t4: Tensor4, s: SymMatrix2) -> SymMatrix2:
    """Full index contraction A_ijkl B_kl."""
    return t4.apply(s)


def edge_transformation(t_vec, n_vec, tau, nu_vec) -> Tensor4:
    """Composite fourth-order tensor mapping the reference edge dyads
    (tau x tau, sym(tau x nu), nu x nu) onto the physical edge dyads
    built from the tangent t and normal n.

    The reference tangent tau must be nonzero and orthogonal to nu.
    """
    tau = np.asarray(tau, dtype=float)
    nu_vec = np.asarray(nu_vec, dtype=float)
    tn2 = float(tau @ tau)
    if tn2 == 0.0:
        raise ValueError("degenerate reference edge: tau must be nonzero")
    if abs(tau @ nu_vec) > 1e-12 * np.sqrt(tn2 * (nu_vec @ nu_vec)):
        raise ValueError("reference tangent and normal must be orthogonal")
    scale = 1.0 / tn2**2
    t_tt = Tensor4.from_dyad(SymMatrix2.dyad(t_vec), SymMatrix2.dyad(tau))
    t_tn = Tensor4.from_dyad(SymMatrix2.sym_dyad(t_vec, n_vec), SymMatrix2.sym_dyad(tau, nu_vec))
    t_nn = Tensor4.from_dyad(SymMatrix2.dyad(n_vec), SymMatrix2.dyad(nu_vec))
    return scale * (t_tt + t_tn + t_nn)
