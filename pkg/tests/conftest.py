"""Shared audit helpers: inter-element trace jumps, finite-difference
divergence oracles, and random test meshes."""
import numpy as np

from hzplate.mesh import LOCAL_EDGES, Mesh, disk_mesh, square_mesh
from hzplate.quadrature import gauss_rule_01
from hzplate.spaces import ref_edge_points


def sym_from_coords(c):
    """Reconstruct the 2x2 symmetric matrix stack from orthonormal coords."""
    s = np.asarray(c)
    off = s[..., 1] / np.sqrt(2.0)
    out = np.empty(s.shape[:-1] + (2, 2))
    out[..., 0, 0] = s[..., 0]
    out[..., 0, 1] = off
    out[..., 1, 0] = off
    out[..., 1, 1] = s[..., 2]
    return out


def edge_params_for(mesh, t, le, u):
    """Reference points of element t sampling its local edge ``le`` at the
    globally oriented parameters u."""
    uu = 1.0 - u if mesh.edge_reversed(t, le) else u
    return ref_edge_points(le, uu)


def hz_trace_jumps(space, degree=8):
    """Max inter-element normal-trace jump over all global basis functions
    and interior edges; tangent-tangent edge functions are element-local and
    excluded from coupling but still checked for their own zero trace."""
    mesh = space.mesh
    u, _ = gauss_rule_01(degree)
    worst = 0.0
    for e in np.nonzero(~mesh.boundary_edge_mask)[0]:
        t1, t2 = (int(x) for x in mesh.edge_tris[e])
        a, b = mesh.edges[e]
        tvec = mesh.vertices[b] - mesh.vertices[a]
        nhat = np.array([-tvec[1], tvec[0]])
        nhat /= np.linalg.norm(nhat)
        traces = {}
        for t in (t1, t2):
            le = int(np.nonzero(mesh.tri_edges[t] == e)[0][0])
            pts = edge_params_for(mesh, t, le, u)
            vals, _ = space.element_values_divs(t, pts)
            mats = sym_from_coords(vals)
            tr = np.einsum("fqij,j->fqi", mats, nhat)
            for f in range(space.nloc):
                if space.dof_class[space.element_dofs[t, f]] == space.CLASS_EDGE_TT:
                    # element-local by construction; no coupling requirement
                    continue
                g = space.element_dofs[t, f]
                traces.setdefault(g, []).append((t, tr[f]))
        scale = max(1.0, max(np.abs(v).max() for vs in traces.values() for _, v in vs))
        for g, contrib in traces.items():
            total = sum(v for _, v in contrib) if len(contrib) == 2 else None
            if total is not None:
                # shared dof: traces from the two sides must MATCH (jump =
                # difference); both entries are the function seen from each side
                jump = contrib[0][1] - contrib[1][1]
                worst = max(worst, np.abs(jump).max() / scale)
            else:
                # dof supported on one side only: its trace is the jump
                worst = max(worst, np.abs(contrib[0][1]).max() / scale)
    return worst


def rt_trace_jumps(space, degree=8):
    mesh = space.mesh
    u, _ = gauss_rule_01(degree)
    worst = 0.0
    for e in np.nonzero(~mesh.boundary_edge_mask)[0]:
        t1, t2 = (int(x) for x in mesh.edge_tris[e])
        a, b = mesh.edges[e]
        tvec = mesh.vertices[b] - mesh.vertices[a]
        nhat = np.array([-tvec[1], tvec[0]])
        nhat /= np.linalg.norm(nhat)
        traces = {}
        for t in (t1, t2):
            le = int(np.nonzero(mesh.tri_edges[t] == e)[0][0])
            pts = edge_params_for(mesh, t, le, u)
            vals, _ = space.element_values_divs(t, pts)
            tr = vals @ nhat
            for f in range(space.nloc):
                g = space.element_dofs[t, f]
                traces.setdefault(g, []).append(tr[f])
        scale = max(1.0, max(np.abs(v).max() for vs in traces.values() for v in vs))
        for g, contrib in traces.items():
            jump = contrib[0] - contrib[1] if len(contrib) == 2 else contrib[0]
            worst = max(worst, np.abs(jump).max() / scale)
    return worst


def fd_divergence_error(space, t, kind, npts=4, h=1e-5, seed=0):
    """Relative deviation between the implemented divergence and central
    finite differences of the physical field on element ``t``."""
    rng = np.random.default_rng(seed)
    gm = space.mesh.geometry_map(t)
    ref = 0.15 + 0.6 * rng.random((npts, 2))
    ref[:, 1] *= 1.0 - ref[:, 0]
    vals, divs = space.element_values_divs(t, ref)
    xs, _, _, _ = gm.evaluate(ref)
    fd = np.zeros(divs.shape)
    for q, x in enumerate(xs):
        for c in range(2):
            dx = np.zeros(2)
            dx[c] = h
            xp = gm.invert(x + dx)
            xm = gm.invert(x - dx)
            vp, _ = space.element_values_divs(t, xp[None])
            vm, _ = space.element_values_divs(t, xm[None])
            if kind == "hz":
                mp, mm = sym_from_coords(vp[:, 0]), sym_from_coords(vm[:, 0])
                fd[:, q] += (mp[:, :, c] - mm[:, :, c]) / (2 * h)
            else:
                fd[:, q] += (vp[:, 0, c] - vm[:, 0, c]) / (2 * h)
    scale = max(np.abs(divs).max(), np.abs(fd).max(), 1.0)
    return np.abs(fd - divs).max() / scale


def perturbed_square(k=5, amp=0.18, seed=3):
    """Random straight mesh: interior vertices of a uniform grid jittered."""
    m = square_mesh(k)
    rng = np.random.default_rng(seed)
    v = m.vertices.copy()
    h = m.element_sizes().min()
    inner = ~m.boundary_vertex_mask
    v[inner] += amp * h * (rng.random((inner.sum(), 2)) - 0.5)
    return Mesh(v, m.triangles)


def wiggly_disk(seed=11, amp=0.02):
    """Curved mesh: cubic disk with randomly perturbed curved-edge control
    points (still a valid positive-Jacobian curved mesh)."""
    m = disk_mesh(24, 3)
    rng = np.random.default_rng(seed)
    curved = {}
    for t, ctrl in m.curved.items():
        c = ctrl.copy()
        for i in range(3, len(c)):
            if abs(np.linalg.norm(c[i]) - 1.0) < 1e-9:
                c[i] *= 1.0 + amp * (rng.random() - 0.5)
        curved[t] = c
    return Mesh(m.vertices, m.triangles, geo_order=3, curved=curved)
