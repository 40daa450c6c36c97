"""Global assembly machinery: field layouts over multiple spaces, chunked
element-matrix scatter, static condensation of element-local dof classes,
Dirichlet elimination, and the boundary-condition operators of the mixed
formulations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import LOCAL_EDGES, Mesh
from .quadrature import gauss_rule_01, triangle_rule
from .spaces import REF_NU, REF_TAU, HZSpace, ref_edge_points

CHUNK_ENTRY_BUDGET = 8_000_000  # local-matrix entries per assembly chunk


@dataclass
class Field:
    name: str
    space: object
    ncomp: int = 1

    @property
    def size(self) -> int:
        return self.ncomp * self.space.ndofs


class Layout:
    """Stacked global numbering over the fields of a formulation.

    Vector fields interleave components: global dof = offset + ncomp * s + c.
    The element-local layout concatenates the fields' local dofs in order.
    """

    def __init__(self, fields):
        self.fields = list(fields)
        self.offsets = {}
        off = 0
        for f in self.fields:
            self.offsets[f.name] = off
            off += f.size
        self.ndofs = off
        self.local_slices = {}
        loc = 0
        for f in self.fields:
            n = f.ncomp * f.space.nloc
            self.local_slices[f.name] = slice(loc, loc + n)
            loc += n
        self.local_size = loc
        mesh = self.fields[0].space.mesh
        nt = mesh.num_triangles
        self.gidx = np.empty((nt, self.local_size), dtype=np.int64)
        self.gsigns = np.ones((nt, self.local_size))
        for f in self.fields:
            sl = self.local_slices[f.name]
            ed = f.space.element_dofs
            sg = f.space.signs
            off = self.offsets[f.name]
            if f.ncomp == 1:
                self.gidx[:, sl] = off + ed
                self.gsigns[:, sl] = sg
            else:
                cols = np.empty((nt, f.ncomp * f.space.nloc), dtype=np.int64)
                sgn = np.empty((nt, f.ncomp * f.space.nloc))
                for c in range(f.ncomp):
                    cols[:, c :: f.ncomp] = off + f.ncomp * ed + c
                    sgn[:, c :: f.ncomp] = sg
                self.gidx[:, sl] = cols
                self.gsigns[:, sl] = sgn

    def field(self, name) -> Field:
        return next(f for f in self.fields if f.name == name)

    def global_slice(self, name) -> slice:
        f = self.field(name)
        off = self.offsets[name]
        return slice(off, off + f.size)

    def local_indices(self, name, comp=None):
        sl = self.local_slices[name]
        idx = np.arange(sl.start, sl.stop)
        if comp is None:
            return idx
        f = self.field(name)
        return idx[comp :: f.ncomp]


@dataclass
class SparseSystem:
    """Symmetric-indefinite block system with a field layout."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    layout: Layout

    def export_matrix_market(self, path):
        from scipy.io import mmwrite

        mmwrite(path, self.matrix.tocoo())


@dataclass
class Recovery:
    """Back-substitution data of a static condensation."""

    kept: np.ndarray  # sorted global indices of kept dofs
    cond_slots: np.ndarray  # local slot indices eliminated per element
    keep_slots: np.ndarray
    x_factor: np.ndarray  # (nt, nc, nk): K_cc^-1 K_ck
    y_part: np.ndarray  # (nt, nc): K_cc^-1 r_c
    gidx: np.ndarray
    ndofs: int


def chunk_ranges(nt, local_size):
    step = max(1, CHUNK_ENTRY_BUDGET // max(local_size * local_size, 1))
    return [(s, min(s + step, nt)) for s in range(0, nt, step)]


def assemble_system(layout: Layout, local_iter, extra_rhs=None) -> SparseSystem:
    """Scatter signed element matrices and load vectors into global COO."""
    n = layout.ndofs
    rhs = np.zeros(n)
    mats = []
    for (a, b), kmat, rvec in local_iter:
        g = layout.gidx[a:b]
        s = layout.gsigns[a:b]
        kmat = kmat * s[:, :, None] * s[:, None, :]
        rows = np.repeat(g, layout.local_size, axis=1).ravel()
        cols = np.tile(g, (1, layout.local_size)).ravel()
        mats.append(sp.coo_matrix((kmat.ravel(), (rows, cols)), shape=(n, n)).tocsr())
        np.add.at(rhs, g.ravel(), (rvec * s).ravel())
    mat = mats[0]
    for m in mats[1:]:
        mat = mat + m
    if extra_rhs is not None:
        rhs = rhs + extra_rhs
    mat.sum_duplicates()
    return SparseSystem(mat, rhs, layout)


def condensable_slots(layout: Layout, classes) -> np.ndarray:
    """Local slot indices of the requested element-local dof classes.

    ``classes`` entries: field name (whole DG-type field) or
    (field name, "cell"/"edge-tt") for the symmetric-stress space.
    """
    slots = []
    for c in classes:
        if isinstance(c, str):
            f = layout.field(c)
            if getattr(f.space, "element_dofs", None) is None or not _is_local(f.space):
                raise ValueError(f"field {c!r} is not element-local; cannot condense")
            slots.append(layout.local_indices(c))
        else:
            name, part = c
            f = layout.field(name)
            space = f.space
            base = layout.local_slices[name].start
            if isinstance(space, HZSpace):
                local = np.arange(space.nloc)
                cls = space.dof_class[space.element_dofs[0]]
                if part == "cell":
                    pick = local[cls == HZSpace.CLASS_CELL]
                elif part == "edge-tt":
                    pick = local[cls == HZSpace.CLASS_EDGE_TT]
                else:
                    raise ValueError(f"unknown stress dof class {part!r}")
                slots.append(base + pick)
            elif hasattr(space, "ncell_loc") and part == "cell":
                start = space.nloc - space.ncell_loc
                slots.append(base + np.arange(start, space.nloc))
            else:
                raise ValueError(f"cannot condense class {part!r} of field {name!r}")
    return np.sort(np.concatenate(slots)) if slots else np.empty(0, dtype=np.int64)


def _is_local(space) -> bool:
    from .spaces import DGSpace

    return isinstance(space, DGSpace)


def condense_assemble(layout: Layout, local_iter, cond_slots, extra_rhs=None):
    """Assemble the Schur-complement system on the kept dofs.

    The condensed local slots must be element-local classes (each global dof
    appears in exactly one element).  Raises on singular local blocks.
    """
    cond_slots = np.asarray(cond_slots, dtype=np.int64)
    keep_slots = np.setdiff1d(np.arange(layout.local_size), cond_slots)
    n = layout.ndofs
    nt = layout.gidx.shape[0]
    cond_global = layout.gidx[:, cond_slots].ravel()
    if len(np.unique(cond_global)) != len(cond_global):
        raise ValueError("condensed dof classes are not element-local")
    kept = np.setdiff1d(np.arange(n), cond_global)
    renum = -np.ones(n, dtype=np.int64)
    renum[kept] = np.arange(len(kept))
    nk_dof = len(kept)
    rhs = np.zeros(nk_dof)
    nc, nk = len(cond_slots), len(keep_slots)
    x_factor = np.empty((nt, nc, nk))
    y_part = np.empty((nt, nc))
    mats = []
    if extra_rhs is not None:
        if np.any(extra_rhs[cond_global] != 0.0):
            raise ValueError("boundary contributions on condensed dofs unsupported")
        rhs += extra_rhs[kept]
    for (a, b), kmat, rvec in local_iter:
        s = layout.gsigns[a:b]
        kmat = kmat * s[:, :, None] * s[:, None, :]
        rvec = rvec * s
        kcc = kmat[:, cond_slots[:, None], cond_slots[None, :]]
        kck = kmat[:, cond_slots[:, None], keep_slots[None, :]]
        kkc = kmat[:, keep_slots[:, None], cond_slots[None, :]]
        kkk = kmat[:, keep_slots[:, None], keep_slots[None, :]]
        try:
            x = np.linalg.solve(kcc, kck)
            y = np.linalg.solve(kcc, rvec[:, cond_slots, None])[:, :, 0]
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"singular local block in elements [{a}, {b})") from exc
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError(f"singular local block in elements [{a}, {b})")
        x_factor[a:b] = x
        y_part[a:b] = y
        schur = kkk - np.einsum("eij,ejk->eik", kkc, x)
        rloc = rvec[:, keep_slots] - np.einsum("eij,ej->ei", kkc, y)
        g = renum[layout.gidx[a:b][:, keep_slots]]
        rows = np.repeat(g, nk, axis=1).ravel()
        cols = np.tile(g, (1, nk)).ravel()
        mats.append(
            sp.coo_matrix((schur.ravel(), (rows, cols)), shape=(nk_dof, nk_dof)).tocsr()
        )
        np.add.at(rhs, g.ravel(), rloc.ravel())
    mat = mats[0]
    for m in mats[1:]:
        mat = mat + m
    mat.sum_duplicates()
    rec = Recovery(kept, cond_slots, keep_slots, x_factor, y_part,
                   layout.gidx, layout.ndofs)
    return SparseSystem(mat, rhs, layout), rec


def recover_condensed(rec: Recovery, x_kept: np.ndarray) -> np.ndarray:
    """Full global solution vector from the kept-dof solution."""
    full = np.zeros(rec.ndofs)
    full[rec.kept] = x_kept
    xk = full[rec.gidx[:, rec.keep_slots]]
    xc = rec.y_part - np.einsum("eij,ej->ei", rec.x_factor, xk)
    gc = rec.gidx[:, rec.cond_slots]
    full[gc.ravel()] = xc.ravel()
    return full


# ---------------------------------------------------------------------------
# Dirichlet elimination


@dataclass
class Constraint:
    dofs: np.ndarray
    values: np.ndarray


def eliminate(system: SparseSystem, constraint: Constraint):
    """Symmetric row/column elimination of prescribed dofs.

    Returns (reduced matrix, reduced rhs, free-dof indices).
    """
    n = system.matrix.shape[0]
    mask = np.ones(n, dtype=bool)
    mask[constraint.dofs] = False
    free = np.nonzero(mask)[0]
    k = system.matrix.tocsc()
    rhs = system.rhs.copy()
    if len(constraint.dofs):
        rhs -= k[:, constraint.dofs] @ constraint.values
    kred = k[free][:, free].tocsc()
    return kred, rhs[free], free


def expand_constrained(n, free, x_free, constraint: Constraint):
    out = np.zeros(n)
    out[free] = x_free
    out[constraint.dofs] = constraint.values
    return out


# ---------------------------------------------------------------------------
# quadrature policy and the generic single-block assembler


def assembly_degree(p: int, geo_order: int) -> int:
    """Exact for straight elements, near-exact for curved ones."""
    return 2 * p + 2 * (geo_order - 1)


def assemble_block(mesh: Mesh, trial, test, form_kind: str, material=None):
    """Assemble one Galerkin block between two spaces (dense; small meshes).

    form_kind: "compliance-mass" <test, A trial> on the stress space;
    "div-pairing" <test_c, (Di trial)_c> with a vector DG test space;
    "mass" scalar L2 mass.
    Mainly a unit-test and cross-validation surface; the formulations use
    the batched local assemblers.
    """
    from .tensors import compliance_matrix

    p = getattr(trial, "p", getattr(trial, "degree", 1))
    rule = triangle_rule(assembly_degree(max(p, 2), mesh.geo_order))
    w = rule.weights
    if form_kind == "compliance-mass":
        amat = compliance_matrix(material)
        out = np.zeros((test.ndofs, trial.ndofs))
        for t in range(mesh.num_triangles):
            vals, _ = trial.element_values_divs(t, rule.points)
            det = _dets(mesh, t, rule.points)
            ke = np.einsum("fqa,ab,gqb,q->fg", vals, amat, vals, w * det)
            gi = trial.element_dofs[t]
            out[np.ix_(gi, gi)] += ke
        return out
    if form_kind == "div-pairing":
        # rows: vector DG test (interleaved components), cols: stress trial
        out = np.zeros((2 * test.ndofs, trial.ndofs))
        for t in range(mesh.num_triangles):
            _, divs = trial.element_values_divs(t, rule.points)
            dgv, _ = test.ref_tables(rule.points)
            det = _dets(mesh, t, rule.points)
            ke = np.einsum("mq,fqc,q->mcf", dgv, divs, w * det)
            gi = trial.element_dofs[t]
            gd = test.element_dofs[t]
            for c in range(2):
                out[np.ix_(2 * gd + c, gi)] += ke[:, c, :]
        return out
    if form_kind == "mass":
        out = np.zeros((test.ndofs, trial.ndofs))
        for t in range(mesh.num_triangles):
            va, _ = test.ref_tables(rule.points)
            vb, _ = trial.ref_tables(rule.points)
            det = _dets(mesh, t, rule.points)
            ke = np.einsum("fq,gq,q->fg", va, vb, w * det)
            out[np.ix_(test.element_dofs[t], trial.element_dofs[t])] += ke
        return out
    raise ValueError(f"unknown form kind {form_kind!r}")


def _dets(mesh, t, pts):
    if mesh.is_curved(t):
        _, _, det, _ = mesh.geometry_map(t).evaluate(pts)
        return det
    _, det, _ = mesh.affine_jacobians()
    return np.full(len(pts), det[t])


# ---------------------------------------------------------------------------
# boundary conditions


def boundary_edge_geometry(mesh: Mesh, t: int, le: int, u):
    """Physical points and arclength weights along a (possibly curved)
    boundary edge, parametrized from the first to the second local vertex."""
    pts = ref_edge_points(le, u)
    gm = mesh.geometry_map(t)
    x, jac, _, cof = gm.evaluate(pts)
    tvec = jac @ REF_TAU[le]
    dline = np.linalg.norm(tvec, axis=1)
    nout = cof @ REF_NU[le]
    nout = nout / np.linalg.norm(nout, axis=1)[:, None]
    return x, dline, nout


def apply_deflection_neumann(layout: Layout, w_tilde, degree: int = 8,
                             markers=None) -> np.ndarray:
    """Right-hand-side contribution -int <dq, n> w ds on the shear-stress
    test rows; returns a global rhs vector (zero for w_tilde = 0)."""
    rt = layout.field("q").space
    mesh = rt.mesh
    rhs = np.zeros(layout.ndofs)
    if w_tilde is None:
        return rhs
    u, wq = gauss_rule_01(degree)
    off = layout.offsets["q"]
    for e, t, le in mesh.boundary_edges():
        if markers is not None and mesh.edge_markers[e] not in markers:
            continue
        pts = ref_edge_points(le, u)
        vals, _ = rt.ref_tables(pts)
        flux = vals @ REF_NU[le]  # <v_ref, nu_ref>, exact H(div) pairing
        x, _, _ = boundary_edge_geometry(mesh, t, le, u)
        wt = np.asarray(w_tilde(x), dtype=float)
        contrib = -np.einsum("fq,q,q->f", flux, wt, wq)
        g = off + rt.element_dofs[t]
        np.add.at(rhs, g, contrib * rt.signs[t])
    return rhs


def hz_dirichlet_values(space: HZSpace, m_tilde, degree: int = 10,
                        markers=None) -> Constraint:
    """Essential data for the stress space on the boundary: rotated-frame
    point functionals at vertices (tangent-tangent component left free) and
    a localized L2 edge projection of the normal-coupling dofs."""
    if not space.boundary_frames:
        raise ValueError("stress Dirichlet data requires boundary vertex frames")
    mesh = space.mesh
    nv = mesh.num_vertices
    nk = space.p - 1
    dofs, values = [], []
    vertex_coeff = np.zeros((nv, 3))
    for v in np.nonzero(mesh.boundary_vertex_mask)[0]:
        mt = np.asarray(m_tilde(mesh.vertices[v][None]), dtype=float)[0]
        for c in range(3):
            tmat = space.vertex_tensor_mats[v, c]
            coeff = np.tensordot(tmat, mt) / np.tensordot(tmat, tmat)
            vertex_coeff[v, c] = coeff
            if c > 0:  # slots (d1 d2) and (d2 d2); slot 0 = d1 d1 stays free
                dofs.append(3 * v + c)
                values.append(coeff)
    u, wq = gauss_rule_01(degree)
    off_edge = space.nvert_dofs
    for e, t, le in mesh.boundary_edges():
        if markers is not None and mesh.edge_markers[e] not in markers:
            continue
        pts = ref_edge_points(le, u)
        x, dline, _ = boundary_edge_geometry(mesh, t, le, u)
        vals, _ = space.element_values_divs(t, pts)
        vals = vals * space.signs[t][:, None, None]
        mt = np.asarray(m_tilde(x), dtype=float)  # (nq, 2, 2)
        mt_coords = np.stack(
            [mt[:, 0, 0], np.sqrt(2.0) * mt[:, 0, 1], mt[:, 1, 1]], axis=-1
        )
        # residual after subtracting the vertex interpolant (all three
        # components, tangent-tangent data folded into the rhs)
        resid = mt_coords.copy()
        for v_loc in LOCAL_EDGES[le]:
            vglob = mesh.triangles[t, v_loc]
            for c in range(3):
                f = 3 * v_loc + c
                resid -= vertex_coeff[vglob, c] * vals[f]
        locs = []
        for ki in range(nk):
            base = 9 + le * 2 * nk + 2 * ki
            locs.extend([base, base + 1])
        locs = np.array(locs)
        sub = vals[locs]
        kmat = np.einsum("fqc,gqc,q->fg", sub, sub, wq * dline)
        frhs = np.einsum("fqc,qc,q->f", sub, resid, wq * dline)
        sol = np.linalg.solve(kmat, frhs)
        for idx, ki in enumerate(locs):
            g = off_edge + 2 * nk * e + (ki - (9 + le * 2 * nk))
            dofs.append(g)
            values.append(sol[idx])
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.asarray(values)
    order = np.argsort(dofs)
    return Constraint(dofs[order], values[order])


def apply_hz_dirichlet(system: SparseSystem, space: HZSpace, m_tilde,
                       markers=None):
    """Constrain the stress boundary dofs of ``system`` to the data
    ``m_tilde`` and eliminate them symmetrically.

    Returns (reduced matrix, reduced rhs, free indices, constraint).
    """
    local = hz_dirichlet_values(space, m_tilde, markers=markers)
    off = system.layout.offsets["M"]
    constraint = Constraint(local.dofs + off, local.values)
    kred, rred, free = eliminate(system, constraint)
    return kred, rred, free, constraint


def scalar_dirichlet_values(space, data, degree: int = 10, markers=None) -> Constraint:
    """Boundary interpolation of a scalar C0 field: vertex values plus an
    L2 edge projection of the hierarchical edge dofs."""
    mesh = space.mesh
    nv = mesh.num_vertices
    nk = space.p - 1
    dofs, values = [], []
    for v in np.nonzero(mesh.boundary_vertex_mask)[0]:
        dofs.append(v)
        values.append(float(np.asarray(data(mesh.vertices[v][None]))[0]))
    vvals = np.zeros(nv)
    for d, val in zip(dofs, values):
        vvals[d] = val
    u, wq = gauss_rule_01(degree)
    for e, t, le in mesh.boundary_edges():
        if markers is not None and mesh.edge_markers[e] not in markers:
            continue
        if nk == 0:
            continue
        pts = ref_edge_points(le, u)
        x, dline, _ = boundary_edge_geometry(mesh, t, le, u)
        vals, _ = space.ref_tables(pts)
        vals = vals * space.signs[t][:, None]
        target = np.asarray(data(x), dtype=float)
        for v_loc in LOCAL_EDGES[le]:
            target = target - vvals[mesh.triangles[t, v_loc]] * vals[v_loc]
        locs = np.array([3 + le * nk + ki for ki in range(nk)])
        sub = vals[locs]
        kmat = np.einsum("fq,gq,q->fg", sub, sub, wq * dline)
        frhs = np.einsum("fq,q->f", sub, target * wq * dline)
        sol = np.linalg.solve(kmat, frhs)
        for ki in range(nk):
            dofs.append(nv + nk * e + ki)
            values.append(sol[ki])
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.asarray(values)
    order = np.argsort(dofs)
    return Constraint(dofs[order], values[order])
