"""Direct sparse solution of the symmetric-indefinite systems and the
log-log slope fit used by the convergence studies."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


@dataclass
class FactoredSystem:
    """Reusable LU factorization of a sparse square matrix."""

    lu: object
    matrix: sp.csc_matrix
    n: int


def factor(matrix) -> FactoredSystem:
    """Factor a square, structurally symmetric sparse matrix.

    Uses sparse LU with partial pivoting and a fixed fill-reducing column
    ordering, which handles the indefinite saddle-point structure.  Singular
    matrices are reported with the offending pivot index.
    """
    if sp.issparse(matrix):
        mat = matrix.tocsc()
    else:
        mat = sp.csc_matrix(np.atleast_2d(matrix))
    if mat.shape[0] != mat.shape[1]:
        raise ValueError("matrix must be square")
    try:
        lu = spla.splu(mat, permc_spec="COLAMD",
                       options={"SymmetricMode": False})
    except RuntimeError as exc:
        raise np.linalg.LinAlgError(f"singular matrix: {exc}") from exc
    du = np.abs(lu.U.diagonal())
    if du.min() == 0.0 or not np.all(np.isfinite(du)):
        pivot = int(np.argmin(du))
        raise np.linalg.LinAlgError(f"singular matrix at pivot {pivot}")
    return FactoredSystem(lu, mat, mat.shape[0])


def solve(fact: FactoredSystem, rhs, check: bool = True) -> np.ndarray:
    """Back-substitution with a scaled-residual audit.

    Deterministic: repeated calls with the same data return bitwise
    identical results.
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != fact.n:
        raise ValueError(f"rhs dimension {rhs.shape[0]} != system size {fact.n}")
    x = fact.lu.solve(rhs)
    if check:
        r = fact.matrix @ x - rhs
        scale = np.abs(fact.matrix).sum(axis=1).max() * max(
            np.abs(x).max(), 1e-300
        ) + np.abs(rhs).max()
        if np.linalg.norm(r, np.inf) > 1e-6 * scale:
            raise np.linalg.LinAlgError(
                f"backward residual {np.linalg.norm(r, np.inf) / scale:.2e} "
                "exceeds tolerance"
            )
    return x


def solve_system(matrix, rhs) -> np.ndarray:
    return solve(factor(matrix), rhs)


def fit_slope(points, window: int = 3) -> float:
    """Least-squares slope of log(error) vs log(h) over the last
    min(window, n) points."""
    pts = [(float(h), float(e)) for h, e in points]
    if len(pts) < 2:
        raise ValueError("need at least two points to fit a slope")
    if any(h <= 0 or e <= 0 for h, e in pts):
        raise ValueError("slope fit requires positive h and error values")
    pts = pts[-min(window, len(pts)):]
    x = np.log([h for h, _ in pts])
    y = np.log([e for _, e in pts])
    xbar, ybar = x.mean(), y.mean()
    return float(((x - xbar) @ (y - ybar)) / ((x - xbar) @ (x - xbar)))
