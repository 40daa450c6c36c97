"""Triangulations with polytope connectivity, polynomial geometry maps for
curved boundary elements, benchmark domain generators, and conforming
refinement (red for uniform, newest-vertex bisection for adaptive).

Conventions
-----------
Reference triangle: vertices v1 = (0,0), v2 = (0,1), v3 = (1,0);
barycentric coordinates (1 - xi - eta, eta, xi).  Local edges are
e12 = (0,1), e13 = (0,2), e23 = (1,2) in local vertex indices, with the
non-normalised tangent/normal frames listed in ``reference_edges``.

Triangles are stored so the geometry Jacobian J = [V3-V1 | V2-V1] has
positive determinant.  Global edges are sorted vertex pairs; the global
edge direction runs from the lower to the higher vertex index.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

LOCAL_EDGES = ((0, 1), (0, 2), (1, 2))

_REF_TAU = np.array([[0.0, 1.0], [1.0, 0.0], [1.0, -1.0]])
_REF_NU = np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]])


def reference_edges():
    """(tau, nu) pairs of the three reference edges e12, e13, e23.

    nu is the outward, non-normalised normal with |nu| = |tau|.
    """
    return tuple((tuple(_REF_TAU[i]), tuple(_REF_NU[i])) for i in range(3))


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


# ---------------------------------------------------------------------------
# lattice Lagrange machinery for polynomial geometry maps


@lru_cache(maxsize=None)
def _lattice(order: int):
    """Lattice nodes of degree ``order``: vertices, edge nodes (per local
    edge, running from first to second vertex), then interior nodes."""
    verts = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    nodes = [verts[0], verts[1], verts[2]]
    for a, b in LOCAL_EDGES:
        for k in range(1, order):
            nodes.append(verts[a] + (k / order) * (verts[b] - verts[a]))
    for i in range(1, order):
        for j in range(1, order - i):
            nodes.append(np.array([i / order, j / order]))
    return np.array(nodes)


@lru_cache(maxsize=None)
def _lagrange_coeffs(order: int):
    """Monomial coefficients of the lattice Lagrange shape functions."""
    nodes = _lattice(order)
    exps = [(a, b) for a in range(order + 1) for b in range(order + 1 - a)]
    v = np.column_stack([nodes[:, 0] ** a * nodes[:, 1] ** b for a, b in exps])
    return np.linalg.inv(v), exps


def _lagrange_eval(order: int, pts):
    """Shape values, gradients and second derivatives at ``pts``.

    Returns (N, dN, d2N) with shapes (npts, nsh), (npts, nsh, 2) and
    (npts, nsh, 2, 2).
    """
    coeffs, exps = _lagrange_coeffs(order)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    nm = len(exps)
    mono = np.empty((len(pts), nm))
    dmono = np.zeros((len(pts), nm, 2))
    d2mono = np.zeros((len(pts), nm, 2, 2))
    for m, (a, b) in enumerate(exps):
        xa, yb = x**a, y**b
        mono[:, m] = xa * yb
        if a > 0:
            dmono[:, m, 0] = a * x ** (a - 1) * yb
        if b > 0:
            dmono[:, m, 1] = b * xa * y ** (b - 1)
        if a > 1:
            d2mono[:, m, 0, 0] = a * (a - 1) * x ** (a - 2) * yb
        if b > 1:
            d2mono[:, m, 1, 1] = b * (b - 1) * xa * y ** (b - 2)
        if a > 0 and b > 0:
            mixed = a * b * x ** (a - 1) * y ** (b - 1)
            d2mono[:, m, 0, 1] = mixed
            d2mono[:, m, 1, 0] = mixed
    n = mono @ coeffs
    dn = np.einsum("pmi,mj->pji", dmono, coeffs)
    d2n = np.einsum("pmik,mj->pjik", d2mono, coeffs)
    return n, dn, d2n


def cof2(j: np.ndarray) -> np.ndarray:
    """Cofactor matrix of a stack of 2x2 matrices."""
    out = np.empty_like(j)
    out[..., 0, 0] = j[..., 1, 1]
    out[..., 0, 1] = -j[..., 1, 0]
    out[..., 1, 0] = -j[..., 0, 1]
    out[..., 1, 1] = j[..., 0, 0]
    return out


@dataclass(frozen=True)
class GeometryMap:
    """Polynomial map from the reference triangle to a physical element.

    ``order`` 1 is the straight (affine) map; higher orders interpolate the
    control points on the degree-``order`` lattice.
    """

    order: int
    control: np.ndarray  # ((order+1)(order+2)/2, 2)

    def __post_init__(self):
        c = np.asarray(self.control, dtype=float)
        n = (self.order + 1) * (self.order + 2) // 2
        if c.shape != (n, 2):
            raise ValueError(f"expected {n} control points for order {self.order}")
        object.__setattr__(self, "control", c)

    @staticmethod
    def affine(v1, v2, v3) -> "GeometryMap":
        return GeometryMap(1, np.array([v1, v2, v3], dtype=float))

    @property
    def is_affine(self) -> bool:
        return self.order == 1

    def evaluate(self, pts):
        """Physical points, Jacobians, determinants and cofactors at ``pts``."""
        n, dn, _ = _lagrange_eval(self.order, pts)
        x = n @ self.control
        jac = np.einsum("pji,jc->pci", dn, self.control)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        return x, jac, det, cof2(jac)

    def hessian(self, pts):
        """Second derivatives of the map, shape (npts, 2, 2, 2):
        H[p, c, i, k] = d^2 x_c / dxi_i dxi_k."""
        _, _, d2n = _lagrange_eval(self.order, pts)
        return np.einsum("pjik,jc->pcik", d2n, self.control)

    def invert(self, x, tol=1e-13, maxit=50):
        """Reference coordinates of a physical point (Newton iteration)."""
        xi = np.array([1.0 / 3.0, 1.0 / 3.0])
        x = np.asarray(x, dtype=float)
        for _ in range(maxit):
            xc, jac, det, _ = self.evaluate(xi)
            res = xc[0] - x
            if np.linalg.norm(res) < tol:
                break
            xi = xi - np.linalg.solve(jac[0], res)
        return xi


def geometry_eval(gmap: GeometryMap, point):
    """Evaluate a geometry map at one reference point.

    Returns (x, J, det J, cof J) and signals a non-positive determinant.
    """
    x, jac, det, cof = gmap.evaluate(np.atleast_2d(point))
    if det[0] <= 0.0:
        raise ValueError(f"non-positive Jacobian determinant {det[0]:.3e}")
    return x[0], jac[0], float(det[0]), cof[0]


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CircleBoundary:
    """Exact boundary description used to re-snap refined disk meshes."""

    center: tuple
    radius: float

    def project(self, p):
        c = np.asarray(self.center, dtype=float)
        d = np.asarray(p, dtype=float) - c
        return c + self.radius * d / np.linalg.norm(d)

    def contains(self, p, tol=1e-10):
        c = np.asarray(self.center, dtype=float)
        return abs(np.linalg.norm(np.asarray(p) - c) - self.radius) < tol


class Mesh:
    """Immutable conforming triangulation.

    Parameters
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array; reordered for positive orientation
    edge_markers : optional dict mapping sorted vertex pairs to integer
        markers; boundary edges default to marker 1
    geo_order : polynomial order of boundary geometry maps (1 = straight)
    curved : dict element index -> control points overriding the affine map
    boundary_geom : optional CircleBoundary for refinement re-snapping
    """

    def __init__(self, vertices, triangles, edge_markers=None, geo_order=1,
                 curved=None, boundary_geom=None, _ref_edges=None):
        v = np.asarray(vertices, dtype=float)
        t = np.array(triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("vertices must be an (nv, 2) array")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError("triangles must be an (nt, 3) array")
        p1, p2, p3 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        det = _cross2(p3 - p1, p2 - p1)
        scale = float(np.max(np.abs(v))) if v.size else 1.0
        if np.any(np.abs(det) <= 1e-14 * max(scale**2, 1e-30)):
            raise ValueError("mesh contains a zero-area triangle")
        flip = det < 0
        t[flip] = t[flip][:, [0, 2, 1]]
        self.vertices = v
        self.triangles = t
        self._build_edges(edge_markers)
        self.geo_order = int(geo_order)
        self.curved = {int(k): np.asarray(c, dtype=float) for k, c in (curved or {}).items()}
        self.boundary_geom = boundary_geom
        if _ref_edges is None:
            self.ref_edges = self._longest_edges()
        else:
            self.ref_edges = [tuple(map(int, e)) for e in _ref_edges]
        for a in (self.vertices, self.triangles, self.edges, self.tri_edges,
                  self.edge_tris, self.edge_markers):
            a.flags.writeable = False

    # -- connectivity -------------------------------------------------

    def _build_edges(self, edge_markers):
        t = self.triangles
        nt = len(t)
        pairs = np.sort(
            np.concatenate([t[:, [a, b]] for a, b in LOCAL_EDGES]), axis=1
        )
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        self.edges = edges
        self.tri_edges = inverse.reshape(3, nt).T.copy()
        ne = len(edges)
        counts = np.bincount(inverse, minlength=ne)
        if counts.max() > 2:
            raise ValueError("non-manifold edge: more than two adjacent triangles")
        edge_tris = -np.ones((ne, 2), dtype=np.int64)
        tri_ids = np.tile(np.arange(nt), 3)
        order = np.argsort(inverse, kind="stable")
        se, st = inverse[order], tri_ids[order]
        starts = np.searchsorted(se, np.arange(ne))
        edge_tris[:, 0] = st[starts]
        second = counts == 2
        edge_tris[second, 1] = st[starts[second] + 1]
        self.edge_tris = edge_tris
        self.boundary_edge_mask = edge_tris[:, 1] < 0
        markers = np.where(self.boundary_edge_mask, 1, 0).astype(np.int64)
        if edge_markers:
            lookup = {tuple(sorted(k)): m for k, m in edge_markers.items()}
            for i, (a, b) in enumerate(edges):
                m = lookup.get((int(a), int(b)))
                if m is not None:
                    markers[i] = m
        self.edge_markers = markers
        bvm = np.zeros(len(self.vertices), dtype=bool)
        bvm[edges[self.boundary_edge_mask].ravel()] = True
        self.boundary_vertex_mask = bvm

    def _longest_edges(self):
        out = []
        for tri in self.triangles:
            cands = []
            for a, b in LOCAL_EDGES:
                ga, gb = sorted((int(tri[a]), int(tri[b])))
                ln = np.linalg.norm(self.vertices[ga] - self.vertices[gb])
                cands.append((round(ln, 12), -ga, -gb, (ga, gb)))
            cands.sort(reverse=True)
            out.append(cands[0][3])
        return out

    # -- basic queries ------------------------------------------------

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_triangles(self):
        return len(self.triangles)

    @property
    def num_edges(self):
        return len(self.edges)

    def is_curved(self, t: int) -> bool:
        return t in self.curved

    def geometry_map(self, t: int) -> GeometryMap:
        if t in self.curved:
            return GeometryMap(self.geo_order, self.curved[t])
        v = self.vertices[self.triangles[t]]
        return GeometryMap.affine(v[0], v[1], v[2])

    def affine_jacobians(self):
        """Jacobians, determinants and inverses of the straight maps of all
        elements (curved elements are handled separately)."""
        v = self.vertices
        t = self.triangles
        j = np.empty((len(t), 2, 2))
        j[:, :, 0] = v[t[:, 2]] - v[t[:, 0]]
        j[:, :, 1] = v[t[:, 1]] - v[t[:, 0]]
        det = j[:, 0, 0] * j[:, 1, 1] - j[:, 0, 1] * j[:, 1, 0]
        inv = np.empty_like(j)
        inv[:, 0, 0] = j[:, 1, 1]
        inv[:, 0, 1] = -j[:, 0, 1]
        inv[:, 1, 0] = -j[:, 1, 0]
        inv[:, 1, 1] = j[:, 0, 0]
        inv /= det[:, None, None]
        return j, det, inv

    def element_sizes(self):
        """Diameter (longest edge length) of each element."""
        v, t = self.vertices, self.triangles
        lens = [np.linalg.norm(v[t[:, b]] - v[t[:, a]], axis=1) for a, b in LOCAL_EDGES]
        return np.max(lens, axis=0)

    def edge_reversed(self, t: int, le: int) -> bool:
        """True when the local edge runs against the global (ascending
        vertex index) direction."""
        a, b = LOCAL_EDGES[le]
        return bool(self.triangles[t, a] > self.triangles[t, b])

    def boundary_edges(self):
        """(edge index, owner triangle, local edge) triples on the boundary."""
        out = []
        for e in np.nonzero(self.boundary_edge_mask)[0]:
            t = int(self.edge_tris[e, 0])
            le = int(np.nonzero(self.tri_edges[t] == e)[0][0])
            out.append((int(e), t, le))
        return out

    def area(self):
        if not self.curved:
            _, det, _ = self.affine_jacobians()
            return 0.5 * float(det.sum())
        from .quadrature import triangle_rule

        rule = triangle_rule(2 * self.geo_order)
        total = 0.0
        for t in range(self.num_triangles):
            _, _, det, _ = self.geometry_map(t).evaluate(rule.points)
            total += float(rule.weights @ det)
        return total

    # -- serialization ------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "format": "hzplate-mesh",
            "version": 1,
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
            "edge_markers": [
                [int(a), int(b), int(m)]
                for (a, b), m in zip(self.edges, self.edge_markers)
                if m != 0
            ],
            "geo_order": self.geo_order,
            "curved": {str(k): c.tolist() for k, c in sorted(self.curved.items())},
            "boundary_geom": (
                {"kind": "circle", "center": list(self.boundary_geom.center),
                 "radius": self.boundary_geom.radius}
                if self.boundary_geom is not None
                else None
            ),
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    @staticmethod
    def from_json(text: str) -> "Mesh":
        doc = json.loads(text)
        if doc.get("format") != "hzplate-mesh":
            raise ValueError("not a mesh document")
        markers = {(int(a), int(b)): int(m) for a, b, m in doc.get("edge_markers", [])}
        bg = doc.get("boundary_geom")
        boundary_geom = (
            CircleBoundary(tuple(bg["center"]), float(bg["radius"])) if bg else None
        )
        return Mesh(
            np.array(doc["vertices"]),
            np.array(doc["triangles"]),
            edge_markers=markers,
            geo_order=doc.get("geo_order", 1),
            curved={int(k): np.array(c) for k, c in doc.get("curved", {}).items()},
            boundary_geom=boundary_geom,
        )


# ---------------------------------------------------------------------------
# generators


def square_mesh(k: int) -> Mesh:
    """Regular triangulation of the unit square with 2^k elements (k odd)."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if k % 2 == 0:
        raise ValueError(f"2^{k} elements do not fit an n x n grid split")
    n = 2 ** ((k - 1) // 2)
    xs = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(xs, xs, indexing="ij")
    verts = np.column_stack([xx.ravel(), yy.ravel()])
    vid = lambda i, j: i * (n + 1) + j
    tris = []
    for i in range(n):
        for j in range(n):
            p00, p10 = vid(i, j), vid(i + 1, j)
            p01, p11 = vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((p00, p10, p11))
            tris.append((p00, p11, p01))
    return Mesh(verts, tris)


def _boundary_edge_keys(tris):
    seen = {}
    for tri in tris:
        for a, b in LOCAL_EDGES:
            key = tuple(sorted((int(tri[a]), int(tri[b]))))
            seen[key] = seen.get(key, 0) + 1
    return {k for k, c in seen.items() if c == 1}


def _circle_curved(verts, tris, order, circle: CircleBoundary):
    """Control-point table for elements owning a boundary arc.

    Edge nodes of boundary arcs interpolate the circle at equal angular
    spacing; interior lattice nodes blend the arc deviation linearly into
    the element, which keeps the map distortion low.
    """
    verts = np.asarray(verts, dtype=float)
    on_circle = np.array([circle.contains(p) for p in verts])
    bkeys = _boundary_edge_keys(tris)
    lat = _lattice(order)
    c = np.asarray(circle.center, dtype=float)
    curved = {}
    n_edge_nodes = 3 + 3 * (order - 1)
    for it, tri in enumerate(tris):
        tri = [int(x) for x in tri]
        arcs = [
            (a, b)
            for a, b in LOCAL_EDGES
            if tuple(sorted((tri[a], tri[b]))) in bkeys
            and on_circle[tri[a]]
            and on_circle[tri[b]]
        ]
        if not arcs:
            continue
        v = verts[tri]
        ctrl = np.array([v[0] + p[0] * (v[2] - v[0]) + p[1] * (v[1] - v[0]) for p in lat])

        def arc_point(a, b, theta_frac):
            tha = np.arctan2(*(verts[tri[a]] - c)[::-1])
            thb = np.arctan2(*(verts[tri[b]] - c)[::-1])
            dth = (thb - tha + np.pi) % (2.0 * np.pi) - np.pi
            th = tha + dth * theta_frac
            return c + circle.radius * np.array([np.cos(th), np.sin(th)])

        idx = 3
        for a, b in LOCAL_EDGES:
            if (a, b) in arcs:
                for k in range(1, order):
                    ctrl[idx + k - 1] = arc_point(a, b, k / order)
            idx += order - 1
        for i, p in enumerate(lat[n_edge_nodes:], start=n_edge_nodes):
            lam = np.array([1.0 - p[0] - p[1], p[1], p[0]])
            for a, b in arcs:
                s = lam[a] + lam[b]
                if s <= 0.0:
                    continue
                frac = lam[b] / s
                chord = (1.0 - frac) * v[a] + frac * v[b]
                ctrl[i] = ctrl[i] + s * (arc_point(a, b, frac) - chord)
        curved[it] = ctrl
    return curved


def _curved_attach(mesh: Mesh) -> Mesh:
    """Recompute circle-interpolating control points for the (already
    orientation-fixed) triangles of ``mesh``."""
    if mesh.boundary_geom is None or mesh.geo_order <= 1:
        return mesh
    curved = _circle_curved(mesh.vertices, mesh.triangles, mesh.geo_order,
                            mesh.boundary_geom)
    markers = {
        (int(a), int(b)): int(m)
        for (a, b), m in zip(mesh.edges, mesh.edge_markers)
        if m != 0
    }
    return Mesh(mesh.vertices, mesh.triangles, edge_markers=markers,
                geo_order=mesh.geo_order, curved=curved,
                boundary_geom=mesh.boundary_geom, _ref_edges=mesh.ref_edges)


def disk_mesh(n_elems: int, geo_order: int = 1) -> Mesh:
    """Unit-disk triangulation whose boundary edges carry geometry maps of
    the requested order interpolating the circle at equal angular spacing."""
    if geo_order not in (1, 3):
        raise ValueError("geo_order must be 1 or 3")
    if n_elems < 4:
        raise ValueError("need at least 4 elements")
    circle = CircleBoundary((0.0, 0.0), 1.0)
    if n_elems >= 8 and n_elems % 4 == 0:
        # center fan inside an inner polygon plus a ring with doubled
        # boundary resolution: n_elems = 2 * (boundary segments)
        nb = n_elems // 2
        ni = nb // 2
        thb = 2.0 * np.pi * np.arange(nb) / nb
        thi = 2.0 * np.pi * np.arange(ni) / ni
        verts = [(0.0, 0.0)]
        verts += [(0.5 * np.cos(t), 0.5 * np.sin(t)) for t in thi]
        verts += [(np.cos(t), np.sin(t)) for t in thb]
        inner = lambda k: 1 + (k % ni)
        outer = lambda k: 1 + ni + (k % nb)
        tris = []
        for k in range(ni):
            tris.append((0, inner(k), inner(k + 1)))
            tris.append((inner(k), outer(2 * k), outer(2 * k + 1)))
            tris.append((inner(k), outer(2 * k + 1), inner(k + 1)))
            tris.append((inner(k + 1), outer(2 * k + 1), outer(2 * k + 2)))
    else:
        nb = n_elems
        thb = 2.0 * np.pi * np.arange(nb) / nb
        verts = [(0.0, 0.0)] + [(np.cos(t), np.sin(t)) for t in thb]
        tris = [(0, 1 + k, 1 + (k + 1) % nb) for k in range(nb)]
    base = Mesh(np.array(verts), tris, geo_order=geo_order, boundary_geom=circle)
    return _curved_attach(base)


def lshape_mesh() -> Mesh:
    """Coarse mesh of [-1,1]^2 minus (0,1]^2 with the re-entrant corner at
    the origin as a mesh vertex."""
    verts = np.array(
        [[0.0, 0.0], [1.0, 0.0], [1.0, -1.0], [0.0, -1.0],
         [-1.0, -1.0], [-1.0, 0.0], [-1.0, 1.0], [0.0, 1.0]]
    )
    tris = [(0, 1, 2), (0, 2, 3), (0, 3, 4), (0, 4, 5), (0, 5, 6), (0, 6, 7)]
    return Mesh(verts, tris)


# ---------------------------------------------------------------------------
# refinement


def _edge_key(a, b):
    return (a, b) if a < b else (b, a)


class _Refiner:
    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.verts = [p for p in mesh.vertices]
        self.midpoint = {}
        bg = mesh.boundary_geom
        self.snap_keys = set()
        if bg is not None:
            for e in np.nonzero(mesh.boundary_edge_mask)[0]:
                a, b = (int(x) for x in mesh.edges[e])
                if bg.contains(mesh.vertices[a]) and bg.contains(mesh.vertices[b]):
                    self.snap_keys.add((a, b))

    def split(self, key):
        mid = self.midpoint.get(key)
        if mid is None:
            p = 0.5 * (np.asarray(self.verts[key[0]]) + np.asarray(self.verts[key[1]]))
            if key in self.snap_keys:
                p = self.mesh.boundary_geom.project(p)
            mid = len(self.verts)
            self.verts.append(p)
            self.midpoint[key] = mid
        return mid

    def child_markers(self):
        markers = {}
        for (a, b), m in zip(self.mesh.edges, self.mesh.edge_markers):
            if m == 0:
                continue
            key = _edge_key(int(a), int(b))
            mid = self.midpoint.get(key)
            if mid is None:
                markers[key] = int(m)
            else:
                markers[_edge_key(key[0], mid)] = int(m)
                markers[_edge_key(key[1], mid)] = int(m)
        return markers

    def finalize(self, tris, ref_edges):
        mesh = self.mesh
        markers = self.child_markers()
        out = Mesh(np.array(self.verts), tris, edge_markers=markers,
                   geo_order=mesh.geo_order, boundary_geom=mesh.boundary_geom,
                   _ref_edges=ref_edges)
        return _curved_attach(out)


def _refine_red(mesh: Mesh) -> Mesh:
    r = _Refiner(mesh)
    tris = []
    for tri in mesh.triangles:
        v0, v1, v2 = (int(x) for x in tri)
        m01 = r.split(_edge_key(v0, v1))
        m02 = r.split(_edge_key(v0, v2))
        m12 = r.split(_edge_key(v1, v2))
        tris += [(v0, m01, m02), (v1, m12, m01), (v2, m02, m12), (m01, m12, m02)]
    return r.finalize(tris, None)


def _refine_nvb(mesh: Mesh, marked) -> Mesh:
    nt = mesh.num_triangles
    ref_edge = [_edge_key(*e) for e in mesh.ref_edges]
    tri_keys = [
        [_edge_key(int(tri[a]), int(tri[b])) for a, b in LOCAL_EDGES]
        for tri in mesh.triangles
    ]
    split = set(ref_edge[t] for t in marked)
    changed = True
    while changed:
        changed = False
        for t in range(nt):
            if ref_edge[t] in split:
                continue
            if any(k in split for k in tri_keys[t]):
                split.add(ref_edge[t])
                changed = True
    r = _Refiner(mesh)
    for key in sorted(split):
        r.split(key)

    tris, new_ref = [], []

    def emit(a, b, c):
        # triangle with refinement edge (a, b) and peak c; keep bisecting
        # while the refinement edge is among the split original edges
        mid = r.midpoint.get(_edge_key(a, b))
        if mid is None:
            tris.append((a, b, c))
            new_ref.append((a, b))
            return
        emit(c, a, mid)
        emit(b, c, mid)

    for t in range(nt):
        tri = [int(x) for x in mesh.triangles[t]]
        ra, rb = ref_edge[t]
        peak = next(v for v in tri if v not in (ra, rb))
        emit(ra, rb, peak)
    return r.finalize(tris, new_ref)


def refine(mesh: Mesh, marked="all") -> Mesh:
    """Conforming refinement.

    ``marked="all"`` performs red (quadrisection) refinement of every
    element; a collection of element indices triggers newest-vertex
    bisection with closure.
    """
    if isinstance(marked, str):
        if marked != "all":
            raise ValueError("marked must be 'all' or a collection of elements")
        return _refine_red(mesh)
    marked = sorted(set(int(m) for m in marked))
    if not marked:
        raise ValueError("marked element set must be nonempty")
    if len(marked) == mesh.num_triangles:
        return _refine_red(mesh)
    return _refine_nvb(mesh, marked)
