"""Reference bases and global degree-of-freedom maps for the four finite
element families: continuous Lagrange, discontinuous Legendre, Raviart-
Thomas, and the symmetric-stress triangle element built from the polytopal
template (Cartesian tensors on vertices and cells, tangent/normal dyads on
edges, hierarchical scaled-integrated-Legendre kernels).

Orientation: every edge-based scalar kernel is written in the argument
lambda_j - lambda_i of its edge.  Element-local evaluation always uses the
local vertex order; the per-element ``signs`` table folds in the parity
factor (-1)^degree for edges whose local direction opposes the global
(ascending vertex index) direction, which makes shared functions agree
pointwise across elements.  Tensor dyads built from t = J tau and
n = R t are invariant under tau -> -tau, so they need no sign.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .mesh import LOCAL_EDGES, Mesh, cof2
from .polynomials import (
    PolyKernel,
    legendre_all,
    legendre_deriv_all,
    scaled_integrated_all,
)
from .quadrature import triangle_rule

REF_VERTS = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
GRAD_LAMBDA = np.array([[-1.0, -1.0], [0.0, 1.0], [1.0, 0.0]])
REF_TAU = np.array([[0.0, 1.0], [1.0, 0.0], [1.0, -1.0]])
REF_NU = np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]])

_SQRT2 = np.sqrt(2.0)

# orthonormal Sym(2) coordinates of the Cartesian template tensors
CART_COORDS = np.array([[1.0, 0.0, 0.0], [0.0, 1.0 / _SQRT2, 0.0], [0.0, 0.0, 1.0]])
CART_MATS = np.array(
    [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.5], [0.5, 0.0]], [[0.0, 0.0], [0.0, 1.0]]]
)


def _rot90(v):
    """90-degree counterclockwise rotation, applied along the last axis."""
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def dyad_coords(u, v=None):
    """Orthonormal Sym(2) coordinates of sym(u x v) (elementwise on stacks)."""
    if v is None:
        v = u
    return np.stack(
        [
            u[..., 0] * v[..., 0],
            (u[..., 0] * v[..., 1] + u[..., 1] * v[..., 0]) / _SQRT2,
            u[..., 1] * v[..., 1],
        ],
        axis=-1,
    )


def dyad_mats(u, v=None):
    """sym(u x v) as full 2x2 matrices (elementwise on stacks)."""
    if v is None:
        v = u
    off = 0.5 * (u[..., 0] * v[..., 1] + u[..., 1] * v[..., 0])
    out = np.empty(u.shape[:-1] + (2, 2))
    out[..., 0, 0] = u[..., 0] * v[..., 0]
    out[..., 0, 1] = off
    out[..., 1, 0] = off
    out[..., 1, 1] = u[..., 1] * v[..., 1]
    return out


def ref_edge_points(le: int, u):
    """Reference coordinates along local edge ``le`` at parameters u in [0,1],
    running from the first to the second local vertex."""
    a, b = LOCAL_EDGES[le]
    u = np.asarray(u, dtype=float)[:, None]
    return (1.0 - u) * REF_VERTS[a] + u * REF_VERTS[b]


# ---------------------------------------------------------------------------
# scalar kernel tables shared by the Lagrange and symmetric-stress spaces


def cell_kernel_pairs(p: int):
    """(a, c) exponent pairs of the interior kernels, a >= 2, a + c + 1 <= p."""
    return [(a, c) for a in range(2, p) for c in range(0, p - a)]


@dataclass
class KernelTables:
    lam: np.ndarray  # (3, np)
    edge: np.ndarray  # (3, p-1, np)
    dedge: np.ndarray  # (3, p-1, np, 2)
    cell: np.ndarray  # (ncell, np)
    dcell: np.ndarray  # (ncell, np, 2)
    pairs: list


def kernel_tables(p: int, pts) -> KernelTables:
    """Evaluate the vertex, edge and cell scalar kernels of degree p."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    xi, eta = pts[:, 0], pts[:, 1]
    lam = np.stack([1.0 - xi - eta, eta, xi])
    npts = len(xi)
    nk = max(p - 1, 0)
    edge = np.zeros((3, nk, npts))
    dedge = np.zeros((3, nk, npts, 2))
    for le, (i, j) in enumerate(LOCAL_EDGES):
        d = lam[j] - lam[i]
        s = lam[i] + lam[j]
        gd = GRAD_LAMBDA[j] - GRAD_LAMBDA[i]
        gs = GRAD_LAMBDA[i] + GRAD_LAMBDA[j]
        ls, dx, dt = scaled_integrated_all(p, d, s)
        for k in range(2, p + 1):
            edge[le, k - 2] = ls[k]
            dedge[le, k - 2] = dx[k][:, None] * gd + dt[k][:, None] * gs
    pairs = cell_kernel_pairs(p)
    cell = np.zeros((len(pairs), npts))
    dcell = np.zeros((len(pairs), npts, 2))
    if pairs:
        d = lam[2] - lam[0]
        s = lam[0] + lam[2]
        gd = GRAD_LAMBDA[2] - GRAD_LAMBDA[0]
        gs = GRAD_LAMBDA[0] + GRAD_LAMBDA[2]
        ls, dx, dt = scaled_integrated_all(p, d, s)
        x1 = 2.0 * xi - 1.0
        leg = legendre_all(p, x1)
        dleg = legendre_deriv_all(p, x1)
        for m, (a, c) in enumerate(pairs):
            bub = lam[1]
            grad_a = dx[a][:, None] * gd + dt[a][:, None] * gs
            cell[m] = bub * ls[a] * leg[c]
            dcell[m] = (
                GRAD_LAMBDA[1] * (ls[a] * leg[c])[:, None]
                + bub[:, None] * grad_a * leg[c][:, None]
                + (bub * ls[a] * dleg[c] * 2.0)[:, None] * np.array([1.0, 0.0])
            )
    return KernelTables(lam, edge, dedge, cell, dcell, pairs)


# ---------------------------------------------------------------------------
# basis function descriptors (reference element view)


@dataclass(frozen=True)
class BasisFunction:
    """Descriptor of one reference basis function of the symmetric-stress
    element: scalar kernel times template tensor on a polytope."""

    dof_class: str  # "vertex" | "edge-normal" | "edge-cell" | "cell"
    polytope: tuple  # ("vertex", i) | ("edge", le) | ("cell",)
    kernel: PolyKernel
    degree: int
    tensor_role: str  # "cartesian-0/1/2" | "tangent-normal" | "normal-normal" | "tangent-tangent"


def hz_local_layout(p: int):
    """Ordered descriptor list of the local symmetric-stress basis."""
    if p < 3:
        raise ValueError("the symmetric-stress element requires p >= 3")
    funcs = []
    for v in range(3):
        for c in range(3):
            funcs.append(
                BasisFunction("vertex", ("vertex", v), PolyKernel("barycentric", 1), 1,
                              f"cartesian-{c}")
            )
    for le in range(3):
        for k in range(2, p + 1):
            for role in ("tangent-normal", "normal-normal"):
                funcs.append(
                    BasisFunction("edge-normal", ("edge", le),
                                  PolyKernel("scaled-integrated", k), k, role)
                )
    for le in range(3):
        for k in range(2, p + 1):
            funcs.append(
                BasisFunction("edge-cell", ("edge", le),
                              PolyKernel("scaled-integrated", k), k, "tangent-tangent")
            )
    for a, c in cell_kernel_pairs(p):
        for comp in range(3):
            funcs.append(
                BasisFunction("cell", ("cell",),
                              PolyKernel("scaled-integrated", a), a + c + 1,
                              f"cartesian-{comp}")
            )
    return funcs


def hz_reference_basis(p: int):
    """Descriptors of the 3 (p+1)(p+2)/2 local basis functions."""
    return hz_local_layout(p)


def hz_edge_kernel(p: int, edge: int, pts):
    """Scalar edge kernel of degree p on local edge ``edge``; vanishes at
    both edge endpoints and on the two other edges."""
    if p < 2:
        raise ValueError("edge kernels start at degree 2")
    tab = kernel_tables(p, pts)
    return tab.edge[edge, p - 2]


def hz_cell_basis(p: int):
    """Descriptors of the pure-cell functions (kernel index pairs x 3
    Cartesian tensors)."""
    return [f for f in hz_local_layout(p) if f.dof_class == "cell"]


# ---------------------------------------------------------------------------
# symmetric-stress space


class HZSpace:
    """Symmetric H(div) space of order p >= 3 on a mesh.

    Degrees of freedom: 3 per vertex (shared), 2 (p-1) normal-coupling per
    edge (shared), p-1 tangent-tangent per edge per element (local), and
    3 (p-1)(p-2)/2 interior per element (local).
    """

    CLASS_VERTEX, CLASS_EDGE, CLASS_EDGE_TT, CLASS_CELL = 0, 1, 2, 3

    def __init__(self, mesh: Mesh, p: int, boundary_frames: bool = False):
        if p < 3:
            raise ValueError("the symmetric-stress element requires p >= 3")
        self.mesh = mesh
        self.p = p
        self.functions = hz_local_layout(p)
        self.nloc = len(self.functions)
        nk = p - 1
        nt, ne, nv = mesh.num_triangles, mesh.num_edges, mesh.num_vertices
        self.nvert_dofs = 3 * nv
        self.nedge_dofs = 2 * nk * ne
        self.ntt_per_elem = 3 * nk
        self.ncell_per_elem = 3 * len(cell_kernel_pairs(p))
        self.ndofs = (
            self.nvert_dofs
            + self.nedge_dofs
            + nt * (self.ntt_per_elem + self.ncell_per_elem)
        )
        self._build_dof_map()
        self._build_vertex_tensors(boundary_frames)
        self.boundary_frames = boundary_frames

    def _build_dof_map(self):
        mesh, p = self.mesh, self.p
        nk = p - 1
        nt = mesh.num_triangles
        gdof = np.empty((nt, self.nloc), dtype=np.int64)
        signs = np.ones((nt, self.nloc))
        off_edge = self.nvert_dofs
        off_local = off_edge + self.nedge_dofs
        nloc_local = self.ntt_per_elem + self.ncell_per_elem
        for t in range(nt):
            tri = mesh.triangles[t]
            col = 0
            for v in range(3):
                for c in range(3):
                    gdof[t, col] = 3 * tri[v] + c
                    col += 1
            for le in range(3):
                e = mesh.tri_edges[t, le]
                rev = mesh.edge_reversed(t, le)
                for k in range(2, p + 1):
                    s = -1.0 if (rev and k % 2 == 1) else 1.0
                    for role in range(2):
                        gdof[t, col] = off_edge + 2 * nk * e + 2 * (k - 2) + role
                        signs[t, col] = s
                        col += 1
            base = off_local + t * nloc_local
            for le in range(3):
                rev = mesh.edge_reversed(t, le)
                for k in range(2, p + 1):
                    gdof[t, col] = base + le * nk + (k - 2)
                    signs[t, col] = -1.0 if (rev and k % 2 == 1) else 1.0
                    col += 1
            for i in range(self.ncell_per_elem):
                gdof[t, col] = base + self.ntt_per_elem + i
                col += 1
        self.element_dofs = gdof
        self.signs = signs
        # global classification
        cls = np.empty(self.ndofs, dtype=np.int8)
        cls[: self.nvert_dofs] = self.CLASS_VERTEX
        cls[self.nvert_dofs : off_local] = self.CLASS_EDGE
        local = np.tile(
            np.concatenate(
                [
                    np.full(self.ntt_per_elem, self.CLASS_EDGE_TT, dtype=np.int8),
                    np.full(self.ncell_per_elem, self.CLASS_CELL, dtype=np.int8),
                ]
            ),
            nt,
        )
        cls[off_local:] = local
        self.dof_class = cls
        bmask = np.zeros(self.ndofs, dtype=bool)
        bv = np.nonzero(mesh.boundary_vertex_mask)[0]
        for c in range(3):
            bmask[3 * bv + c] = True
        be = np.nonzero(mesh.boundary_edge_mask)[0]
        for e in be:
            base = off_edge + 2 * nk * e
            bmask[base : base + 2 * nk] = True
        self.boundary_dof_mask = bmask

    def _build_vertex_tensors(self, boundary_frames):
        mesh = self.mesh
        nv = mesh.num_vertices
        coords = np.tile(CART_COORDS, (nv, 1, 1))
        mats = np.tile(CART_MATS, (nv, 1, 1, 1))
        frames = np.tile(np.eye(2), (nv, 1, 1))
        if boundary_frames:
            frames = vertex_frames(mesh)
            for v in np.nonzero(mesh.boundary_vertex_mask)[0]:
                d1, d2 = frames[v, :, 0], frames[v, :, 1]
                for c, (ua, ub) in enumerate(((d1, d1), (d1, d2), (d2, d2))):
                    coords[v, c] = dyad_coords(ua[None], ub[None])[0]
                    mats[v, c] = dyad_mats(ua[None], ub[None])[0]
        self.vertex_tensor_coords = coords
        self.vertex_tensor_mats = mats
        self.vertex_frames = frames

    # -- reference tabulation ------------------------------------------

    def ref_kernels(self, pts):
        """Scalar kernel values and gradients of every local function."""
        tab = kernel_tables(self.p, pts)
        npts = tab.lam.shape[1]
        kern = np.empty((self.nloc, npts))
        dkern = np.empty((self.nloc, npts, 2))
        col = 0
        for v in range(3):
            for _ in range(3):
                kern[col] = tab.lam[v]
                dkern[col] = GRAD_LAMBDA[v]
                col += 1
        for le in range(3):
            for ki in range(self.p - 1):
                for _ in range(2):
                    kern[col] = tab.edge[le, ki]
                    dkern[col] = tab.dedge[le, ki]
                    col += 1
        for le in range(3):
            for ki in range(self.p - 1):
                kern[col] = tab.edge[le, ki]
                dkern[col] = tab.dedge[le, ki]
                col += 1
        for m in range(len(tab.pairs)):
            for _ in range(3):
                kern[col] = tab.cell[m]
                dkern[col] = tab.dcell[m]
                col += 1
        return kern, dkern

    def _tensor_tables_from_tangents(self, tvecs, tri):
        """Tensor coordinates/matrices given the three edge tangents of one
        element (tvecs may be per-point for curved elements)."""
        nvt = self.vertex_tensor_coords
        nvm = self.vertex_tensor_mats
        base_shape = tvecs.shape[:-2]  # () or (npts,)
        tc = np.zeros(base_shape + (self.nloc, 3))
        tm = np.zeros(base_shape + (self.nloc, 2, 2))
        col = 0
        for v in range(3):
            for c in range(3):
                tc[..., col, :] = nvt[tri[v], c]
                tm[..., col, :, :] = nvm[tri[v], c]
                col += 1
        n = _rot90(tvecs)
        tn_c = 0.5 * dyad_coords(tvecs, n)
        tn_m = 0.5 * dyad_mats(tvecs, n)
        nn_c = dyad_coords(n)
        nn_m = dyad_mats(n)
        tt_c = dyad_coords(tvecs)
        tt_m = dyad_mats(tvecs)
        for le in range(3):
            for _ in range(self.p - 1):
                tc[..., col, :] = tn_c[..., le, :]
                tm[..., col, :, :] = tn_m[..., le, :, :]
                tc[..., col + 1, :] = nn_c[..., le, :]
                tm[..., col + 1, :, :] = nn_m[..., le, :, :]
                col += 2
        for le in range(3):
            for _ in range(self.p - 1):
                tc[..., col, :] = tt_c[..., le, :]
                tm[..., col, :, :] = tt_m[..., le, :, :]
                col += 1
        for _ in range(len(cell_kernel_pairs(self.p))):
            for c in range(3):
                tc[..., col, :] = CART_COORDS[c]
                tm[..., col, :, :] = CART_MATS[c]
                col += 1
        return tc, tm

    def straight_tensors(self):
        """Per-element constant tensor tables for the straight-element fast
        path: coordinates (nt, nloc, 3) and matrices (nt, nloc, 2, 2)."""
        mesh = self.mesh
        jac, _, _ = mesh.affine_jacobians()
        tvecs = np.einsum("eij,lj->eli", jac, REF_TAU)  # (nt, 3, 2)
        nt = mesh.num_triangles
        tc = np.empty((nt, self.nloc, 3))
        tm = np.empty((nt, self.nloc, 2, 2))
        for t in range(nt):
            tc[t], tm[t] = self._tensor_tables_from_tangents(tvecs[t], mesh.triangles[t])
        return tc, tm

    def element_values_divs(self, t: int, pts):
        """Physical basis values (nloc, np, 3 coords) and row-wise divergence
        (nloc, np, 2) on element t; supports curved geometry."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        kern, dkern = self.ref_kernels(pts)
        s = self.signs[t]
        tri = self.mesh.triangles[t]
        if not self.mesh.is_curved(t):
            jac, det, jinv = self.mesh.affine_jacobians()
            jac, jinv = jac[t], jinv[t]
            tvecs = jac @ REF_TAU.T  # (2, 3)
            tc, tm = self._tensor_tables_from_tangents(tvecs.T, tri)
            vals = (s[:, None] * kern)[:, :, None] * tc[:, None, :]
            gphys = np.einsum("fqk,kc->fqc", dkern, jinv)
            divs = np.einsum("fij,fqj->fqi", tm, gphys) * s[:, None, None]
            return vals, divs
        gm = self.mesh.geometry_map(t)
        _, jac, det, _ = gm.evaluate(pts)
        hess = gm.hessian(pts)  # (np, 2, 2, 2): H[c, i, k]
        jinv = np.linalg.inv(jac)
        tvecs = np.einsum("qij,lj->qli", jac, REF_TAU)  # (np, 3, 2)
        dt = np.einsum("qcik,li->qlck", hess, REF_TAU)  # (np, 3, 2, kdir)
        tc, tm = self._tensor_tables_from_tangents(tvecs, tri)  # (np, nloc, ...)
        vals = (s[:, None] * kern)[:, :, None] * np.swapaxes(tc, 0, 1)
        # dT/dxi_k per local function (np, nloc, 2, 2, k)
        npts = len(pts)
        dT = np.zeros((npts, self.nloc, 2, 2, 2))
        nvec = _rot90(tvecs)
        dn = np.stack([_rot90(dt[..., k]) for k in range(2)], axis=-1)
        col = 9
        for le in range(3):
            tle, nle = tvecs[:, le], nvec[:, le]
            dtle, dnle = dt[:, le], dn[:, le]
            for k in range(2):
                sym_tn = dyad_mats(dtle[..., k], nle) + dyad_mats(tle, dnle[..., k])
                d_nn = 2.0 * dyad_mats(dnle[..., k], nle)
                d_tt = 2.0 * dyad_mats(dtle[..., k], tle)
                for ki in range(self.p - 1):
                    dT[:, col + 2 * ki, :, :, k] = 0.5 * sym_tn
                    dT[:, col + 2 * ki + 1, :, :, k] = d_nn
                    dT[:, self.nloc - self.ncell_per_elem - 3 * (self.p - 1)
                       + le * (self.p - 1) + ki, :, :, k] = d_tt
            col += 2 * (self.p - 1)
        tmq = np.swapaxes(tm, 0, 1)  # (nloc, np, 2, 2)
        term1 = np.einsum("fqk,fqij->fqijk", dkern, tmq)
        term2 = np.einsum("fq,qfijk->fqijk", kern, dT)
        dfull = term1 + term2  # d/dxi_k of (kern * T), (nloc, np, 2, 2, k)
        divs = np.einsum("fqijk,qkj->fqi", dfull, jinv) * s[:, None, None]
        return vals, divs

    def ref_values(self, pts):
        """Reference-element basis values with the literal template dyads of
        (tau, nu); used by unit tests and the basis dump."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        kern, _ = self.ref_kernels(pts)
        tc = np.zeros((self.nloc, 3))
        col = 0
        for v in range(3):
            for c in range(3):
                tc[col] = CART_COORDS[c]
                col += 1
        for le in range(3):
            tau, nu = REF_TAU[le], REF_NU[le]
            for _ in range(self.p - 1):
                tc[col] = dyad_coords(tau[None], nu[None])[0]
                tc[col + 1] = dyad_coords(nu[None])[0]
                col += 2
        for le in range(3):
            tau = REF_TAU[le]
            for _ in range(self.p - 1):
                tc[col] = dyad_coords(tau[None])[0]
                col += 1
        for _ in cell_kernel_pairs(self.p):
            for c in range(3):
                tc[col] = CART_COORDS[c]
                col += 1
        return kern[:, :, None] * tc[:, None, :]


def vertex_frames(mesh: Mesh):
    """Orthonormal frame (d1 tangent-like, d2 normal-like) per vertex; at
    boundary vertices d2 is the normalised average of the unit outward
    normals of the two adjacent boundary edges."""
    nv = mesh.num_vertices
    frames = np.tile(np.eye(2), (nv, 1, 1))
    normals = {}
    jac, det, jinv = mesh.affine_jacobians()
    for e, t, le in mesh.boundary_edges():
        n = cof2(jac[t][None])[0] @ REF_NU[le]
        n = n / np.linalg.norm(n)
        for v in mesh.edges[e]:
            normals.setdefault(int(v), []).append(n)
    for v, ns in normals.items():
        nstar = np.sum(ns, axis=0)
        norm = np.linalg.norm(nstar)
        if norm < 1e-12:
            raise ValueError(
                f"boundary vertex {v} has antiparallel edge normals; averaged frame undefined"
            )
        d2 = nstar / norm
        d1 = np.array([d2[1], -d2[0]])  # R^T d2
        frames[v] = np.column_stack([d1, d2])
    return frames


# ---------------------------------------------------------------------------
# Raviart-Thomas space


def _fraction_nullspace(rows, ncols):
    """Nullspace basis of a small exact rational matrix (list of rows)."""
    m = [list(r) for r in rows]
    nrows = len(m)
    pivots = []
    r = 0
    for c in range(ncols):
        piv = None
        for i in range(r, nrows):
            if m[i][c] != 0:
                piv = i
                break
        if piv is None:
            continue
        m[r], m[piv] = m[piv], m[r]
        pv = m[r][c]
        m[r] = [x / pv for x in m[r]]
        for i in range(nrows):
            if i != r and m[i][c] != 0:
                f = m[i][c]
                m[i] = [a - f * b for a, b in zip(m[i], m[r])]
        pivots.append(c)
        r += 1
        if r == nrows:
            break
    free = [c for c in range(ncols) if c not in pivots]
    basis = []
    for fc in free:
        vec = [Fraction(0)] * ncols
        vec[fc] = Fraction(1)
        for ri, pc in enumerate(pivots):
            vec[pc] = -m[ri][fc]
        basis.append(vec)
    return basis, len(pivots)


@lru_cache(maxsize=None)
def _rt_span(order: int):
    """Monomial spanning set of the RT space: ([P_k]^2, comp) pairs plus the
    radial homogeneous部分 (x, y) * x^a y^(k-a)."""
    span = []
    for a in range(order + 1):
        for b in range(order + 1 - a):
            span.append(("m", a, b, 0))
            span.append(("m", a, b, 1))
    for a in range(order + 1):
        span.append(("r", a, order - a))
    return span


@lru_cache(maxsize=None)
def _rt_cell_coeffs(order: int):
    """Exact coefficients (over the monomial span) of a basis of the
    zero-normal-trace subspace, orthonormalised in L2 of the reference
    element."""
    span = _rt_span(order)
    ncols = len(span)
    samples = [Fraction(s, order + 1) for s in range(order + 2)][: order + 1]
    if order == 0:
        samples = [Fraction(0)]
    rows = []
    for le in range(3):
        for u in samples:
            row = [Fraction(0)] * ncols
            for idx, (kind, a, b, *rest) in enumerate(span):
                if le == 0:  # xi = 0, point (0, u), nu = (-1, 0): -v_x
                    if kind == "m" and rest[0] == 0:
                        row[idx] = -(u**b) if a == 0 else Fraction(0)
                elif le == 1:  # eta = 0, point (u, 0), nu = (0, -1): -v_y
                    if kind == "m" and rest[0] == 1:
                        row[idx] = -(u**a) if b == 0 else Fraction(0)
                else:  # xi + eta = 1, point (u, 1-u), nu = (1, 1)
                    val = (u**a) * ((1 - u) ** b)
                    if kind == "m":
                        row[idx] = val
                    else:
                        row[idx] = val
            rows.append(row)
    basis, rank = _fraction_nullspace(rows, ncols)
    assert rank == 3 * (order + 1), "trace map must have full rank"
    coeffs = np.array([[float(x) for x in vec] for vec in basis])
    if len(coeffs) == 0:
        return np.zeros((0, ncols))
    # L2-orthonormalise for conditioning
    rule = triangle_rule(2 * (order + 1))
    vals, _ = _rt_span_eval(order, rule.points)
    fvals = np.einsum("cs,sqi->cqi", coeffs, vals)
    gram = np.einsum("cqi,dqi,q->cd", fvals, fvals, rule.weights)
    chol = np.linalg.cholesky(gram)
    return np.linalg.solve(chol, coeffs)


def _rt_span_eval(order: int, pts):
    """Values (nspan, np, 2) and divergences (nspan, np) of the monomial
    spanning set."""
    span = _rt_span(order)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    vals = np.zeros((len(span), len(x), 2))
    divs = np.zeros((len(span), len(x)))
    for i, (kind, a, b, *rest) in enumerate(span):
        mono = x**a * y**b
        if kind == "m":
            comp = rest[0]
            vals[i, :, comp] = mono
            divs[i] = (a * x ** (a - 1) * y**b) if comp == 0 and a > 0 else divs[i]
            if comp == 1 and b > 0:
                divs[i] = b * x**a * y ** (b - 1)
        else:
            vals[i, :, 0] = x * mono
            vals[i, :, 1] = y * mono
            divs[i] = (a + b + 2) * mono
    return vals, divs


class RTSpace:
    """H(div)-conforming Raviart-Thomas space of the given order.

    Edge functions: the lowest-order rotated-Whitney function plus
    divergence-free rotated gradients of the hierarchical edge kernels;
    interior functions span the zero-normal-trace subspace.  Physical
    mapping is the contravariant Piola transform (1/det J) J v.
    """

    def __init__(self, mesh: Mesh, order: int):
        if order < 0:
            raise ValueError("order must be nonnegative")
        self.mesh = mesh
        self.order = order
        self.nedge_loc = order + 1
        self.ncell_loc = order * (order + 1)
        self.nloc = 3 * self.nedge_loc + self.ncell_loc
        nt, ne = mesh.num_triangles, mesh.num_edges
        self.ndofs = ne * self.nedge_loc + nt * self.ncell_loc
        gdof = np.empty((nt, self.nloc), dtype=np.int64)
        signs = np.ones((nt, self.nloc))
        for t in range(nt):
            col = 0
            for le in range(3):
                e = mesh.tri_edges[t, le]
                rev = mesh.edge_reversed(t, le)
                for m in range(order + 1):
                    gdof[t, col] = self.nedge_loc * e + m
                    if rev:
                        # whitney (m = 0) flips; gradient kernels of degree
                        # m + 1 carry (-1)^(m+1)
                        signs[t, col] = -1.0 if m % 2 == 0 else 1.0
                    col += 1
            base = ne * self.nedge_loc + t * self.ncell_loc
            for i in range(self.ncell_loc):
                gdof[t, col] = base + i
                col += 1
        self.element_dofs = gdof
        self.signs = signs
        bmask = np.zeros(self.ndofs, dtype=bool)
        for e in np.nonzero(mesh.boundary_edge_mask)[0]:
            bmask[self.nedge_loc * e : self.nedge_loc * (e + 1)] = True
        self.boundary_dof_mask = bmask

    def ref_tables(self, pts):
        """Reference values (nloc, np, 2) and divergences (nloc, np)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        xi, eta = pts[:, 0], pts[:, 1]
        lam = np.stack([1.0 - xi - eta, eta, xi])
        npts = len(xi)
        vals = np.zeros((self.nloc, npts, 2))
        divs = np.zeros((self.nloc, npts))
        tab = kernel_tables(self.order + 1, pts) if self.order >= 1 else None
        col = 0
        for le, (i, j) in enumerate(LOCAL_EDGES):
            w = lam[i][:, None] * GRAD_LAMBDA[j] - lam[j][:, None] * GRAD_LAMBDA[i]
            vals[col] = _rot90(w)
            divs[col] = -2.0 * (
                GRAD_LAMBDA[i, 0] * GRAD_LAMBDA[j, 1]
                - GRAD_LAMBDA[i, 1] * GRAD_LAMBDA[j, 0]
            )
            col += 1
            for m in range(1, self.order + 1):
                vals[col] = _rot90(tab.dedge[le, m - 1])
                col += 1
        if self.ncell_loc:
            coeffs = _rt_cell_coeffs(self.order)
            svals, sdivs = _rt_span_eval(self.order, pts)
            vals[col:] = np.einsum("cs,sqi->cqi", coeffs, svals)
            divs[col:] = coeffs @ sdivs
        return vals, divs

    def element_values_divs(self, t: int, pts):
        """Piola-mapped values (nloc, np, 2) and divergences (nloc, np)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        vals, divs = self.ref_tables(pts)
        s = self.signs[t]
        if not self.mesh.is_curved(t):
            jac, det, _ = self.mesh.affine_jacobians()
            jac, det = jac[t], det[t]
            pv = np.einsum("ij,fqj->fqi", jac, vals) / det
            return pv * s[:, None, None], divs * s[:, None] / det
        _, jac, det, _ = self.mesh.geometry_map(t).evaluate(pts)
        pv = np.einsum("qij,fqj->fqi", jac, vals) / det[None, :, None]
        return pv * s[:, None, None], divs * s[:, None] / det[None, :]


# ---------------------------------------------------------------------------
# scalar spaces


class LagrangeSpace:
    """C0 hierarchical scalar space of order p >= 1."""

    def __init__(self, mesh: Mesh, p: int):
        if p < 1:
            raise ValueError("Lagrange order must be >= 1")
        self.mesh = mesh
        self.p = p
        nk = max(p - 1, 0)
        self.nloc = (p + 1) * (p + 2) // 2
        nt, ne, nv = mesh.num_triangles, mesh.num_edges, mesh.num_vertices
        self.ncell_loc = len(cell_kernel_pairs(p))
        self.ndofs = nv + nk * ne + nt * self.ncell_loc
        gdof = np.empty((nt, self.nloc), dtype=np.int64)
        signs = np.ones((nt, self.nloc))
        for t in range(nt):
            tri = mesh.triangles[t]
            col = 0
            for v in range(3):
                gdof[t, col] = tri[v]
                col += 1
            for le in range(3):
                e = mesh.tri_edges[t, le]
                rev = mesh.edge_reversed(t, le)
                for k in range(2, p + 1):
                    gdof[t, col] = nv + nk * e + (k - 2)
                    signs[t, col] = -1.0 if (rev and k % 2 == 1) else 1.0
                    col += 1
            base = nv + nk * ne + t * self.ncell_loc
            for i in range(self.ncell_loc):
                gdof[t, col] = base + i
                col += 1
        self.element_dofs = gdof
        self.signs = signs
        bmask = np.zeros(self.ndofs, dtype=bool)
        bmask[np.nonzero(mesh.boundary_vertex_mask)[0]] = True
        for e in np.nonzero(mesh.boundary_edge_mask)[0]:
            bmask[nv + nk * e : nv + nk * (e + 1)] = True
        self.boundary_dof_mask = bmask

    def ref_tables(self, pts):
        tab = kernel_tables(self.p, pts)
        npts = tab.lam.shape[1]
        vals = np.empty((self.nloc, npts))
        grads = np.empty((self.nloc, npts, 2))
        col = 0
        for v in range(3):
            vals[col] = tab.lam[v]
            grads[col] = GRAD_LAMBDA[v]
            col += 1
        for le in range(3):
            for ki in range(self.p - 1):
                vals[col] = tab.edge[le, ki]
                grads[col] = tab.dedge[le, ki]
                col += 1
        for m in range(self.ncell_loc):
            vals[col] = tab.cell[m]
            grads[col] = tab.dcell[m]
            col += 1
        return vals, grads


class DGSpace:
    """Element-wise polynomial space of the given degree with an L2-
    orthonormal reference basis (pullback mapping, no coupling)."""

    def __init__(self, mesh: Mesh, degree: int):
        if degree < 0:
            raise ValueError("degree must be nonnegative")
        self.mesh = mesh
        self.degree = degree
        self.nloc = (degree + 1) * (degree + 2) // 2
        nt = mesh.num_triangles
        self.ndofs = nt * self.nloc
        self.element_dofs = np.arange(self.ndofs, dtype=np.int64).reshape(nt, self.nloc)
        self.signs = np.ones((nt, self.nloc))
        self.boundary_dof_mask = np.zeros(self.ndofs, dtype=bool)

    @staticmethod
    @lru_cache(maxsize=None)
    def _orth(degree: int):
        pairs = [(a, b) for a in range(degree + 1) for b in range(degree + 1 - a)]
        rule = triangle_rule(2 * degree + 2)
        raw = DGSpace._raw_eval(degree, rule.points)[0]
        gram = np.einsum("fq,gq,q->fg", raw, raw, rule.weights)
        return np.linalg.cholesky(gram), pairs

    @staticmethod
    def _raw_eval(degree: int, pts):
        pairs = [(a, b) for a in range(degree + 1) for b in range(degree + 1 - a)]
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x1 = 2.0 * pts[:, 0] - 1.0
        y1 = 2.0 * pts[:, 1] - 1.0
        lx, ly = legendre_all(degree, x1), legendre_all(degree, y1)
        dlx, dly = legendre_deriv_all(degree, x1), legendre_deriv_all(degree, y1)
        vals = np.empty((len(pairs), len(x1)))
        grads = np.empty((len(pairs), len(x1), 2))
        for i, (a, b) in enumerate(pairs):
            vals[i] = lx[a] * ly[b]
            grads[i, :, 0] = 2.0 * dlx[a] * ly[b]
            grads[i, :, 1] = 2.0 * lx[a] * dly[b]
        return vals, grads

    def ref_tables(self, pts):
        chol, _ = self._orth(self.degree)
        raw_v, raw_g = self._raw_eval(self.degree, pts)
        vals = np.linalg.solve(chol, raw_v)
        grads = np.linalg.solve(chol, raw_g.reshape(self.nloc, -1)).reshape(raw_g.shape)
        return vals, grads


def build_dof_map(mesh: Mesh, descriptor):
    """Construct a space (and thereby its global dof map) from a descriptor
    tuple: ("hz", p) | ("rt", order) | ("lagrange", p) | ("dg", degree)."""
    kind, arg = descriptor
    if kind == "hz":
        return HZSpace(mesh, arg)
    if kind == "rt":
        return RTSpace(mesh, arg)
    if kind == "lagrange":
        return LagrangeSpace(mesh, arg)
    if kind == "dg":
        return DGSpace(mesh, arg)
    raise ValueError(f"unknown space kind {kind!r}")
