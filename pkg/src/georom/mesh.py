"""Triangular meshes with P2 edge nodes, reference-mesh construction and
the ``.gmesh`` text format."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .errors import MeshError
from .shapes import (INLET, INTERIOR, L0, L1, OUTLET, WALL, Shape, BifurcationGeometry,
                     bifurcation_base, lower_wall, stenosis_divisions, upper_wall,
                     StenosisParams)


def _ro(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle mesh.

    ``edges`` are sorted vertex pairs in lexicographic order; the P2 node of
    edge ``k`` has global index ``n_vertices + k``. ``tri_edges[t]`` holds the
    edge indices of the local pairs (v0,v1), (v1,v2), (v2,v0).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_tags: np.ndarray
    tri_edges: np.ndarray

    @classmethod
    def build(cls, vertices, triangles, boundary_tags):
        """Assemble topology. ``boundary_tags`` maps a sorted vertex pair of
        each boundary edge to its tag."""
        vertices = np.asarray(vertices, dtype=float)
        triangles = np.asarray(triangles, dtype=np.int64)
        local = triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 3, 2)
        pairs = np.sort(local.reshape(-1, 2), axis=1)
        edges, inv, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
        inv = inv.ravel()
        tags = np.zeros(len(edges), dtype=np.int64)
        for k in np.flatnonzero(counts == 1):
            key = (int(edges[k, 0]), int(edges[k, 1]))
            if key not in boundary_tags:
                raise MeshError(f"boundary edge {key} has no tag")
            tags[k] = boundary_tags[key]
        if np.any(counts > 2):
            raise MeshError("non-manifold edge")
        m = cls(_ro(vertices, float), _ro(triangles, np.int64), _ro(edges, np.int64),
                _ro(tags, np.int64), _ro(inv.reshape(-1, 3), np.int64))
        m.validate()
        return m

    def with_vertices(self, vertices):
        m = Mesh(_ro(vertices, float), self.triangles, self.edges, self.edge_tags, self.tri_edges)
        m.validate()
        return m

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_p2(self):
        return self.n_vertices + self.n_edges

    @property
    def fom_dimension(self):
        return 2 * self.n_p2 + self.n_vertices

    @property
    def boundary_edges(self):
        return np.flatnonzero(self.edge_tags > 0)

    def p2_nodes(self):
        mid = 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])
        return np.vstack([self.vertices, mid])

    def p2_connectivity(self):
        """(nt, 6) global P2 node indices: vertices then midpoints of
        (v0,v1), (v1,v2), (v2,v0)."""
        return np.hstack([self.triangles, self.n_vertices + self.tri_edges])

    def signed_areas(self):
        v = self.vertices[self.triangles]
        e1 = v[:, 1] - v[:, 0]
        e2 = v[:, 2] - v[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def nodes_with_tag(self, tag):
        """Sorted P2 node indices on boundary edges carrying ``tag``."""
        k = np.flatnonzero(self.edge_tags == tag)
        return np.unique(np.concatenate([self.edges[k].ravel(), self.n_vertices + k]))

    def validate(self):
        a = self.signed_areas()
        if np.any(a <= 0):
            raise MeshError(f"{int(np.sum(a <= 0))} triangles are not positively oriented")
        b = self.boundary_edges
        if np.any(self.edge_tags[b] == INTERIOR):
            raise MeshError("untagged boundary edge")
        verts = np.unique(self.triangles)
        if len(verts) != self.n_vertices:
            raise MeshError("mesh has vertices not used by any triangle")


# --- structured rectangle -------------------------------------------------

def structured_rectangle(nx, ny, length=L1, height=L0):
    """Structured triangulation of [0, length] x [0, height].

    Cells are split along the lower-left/upper-right diagonal in the lower
    half and along the mirrored diagonal in the upper half, so the mesh is
    symmetric about the channel midline when ``ny`` is even.
    """
    if nx < 1 or ny < 1:
        raise MeshError("need at least one cell per direction")
    xs = np.linspace(0.0, length, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    tris = []
    for j in range(ny):
        for i in range(nx):
            v00 = j * (nx + 1) + i
            v10, v01, v11 = v00 + 1, v00 + nx + 1, v00 + nx + 2
            if 2 * j < ny:
                tris += [(v00, v10, v11), (v00, v11, v01)]
            else:
                tris += [(v00, v10, v01), (v10, v11, v01)]
    tris = np.array(tris, dtype=np.int64)

    def ij(v):
        return v % (nx + 1), v // (nx + 1)

    tags = {}
    for a, b in np.sort(tris[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1):
        (ia, ja), (ib, jb) = ij(a), ij(b)
        if ia == ib == 0:
            tags[(int(a), int(b))] = INLET
        elif ia == ib == nx:
            tags[(int(a), int(b))] = OUTLET
        elif (ja == jb == 0) or (ja == jb == ny):
            tags[(int(a), int(b))] = WALL
    return Mesh.build(verts, tris, tags)


def stenosis_mesh_divisions(resolution):
    """(nx, ny) for a target edge length, consistent with the boundary
    point split used by the stenosis shape generator."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    half = int(round((L0 + L1) / resolution))
    return stenosis_divisions(2 * half)


def stenosis_domain_mesh(p: StenosisParams, nx, ny):
    """Boundary-fitted structured mesh of the physical stenosis domain
    (vertical lines, walls from the Gaussian profiles)."""
    ref = structured_rectangle(nx, ny)
    x = ref.vertices[:, 0]
    t = ref.vertices[:, 1] / L0
    lo, up = lower_wall(x, p), upper_wall(x, p)
    return ref.with_vertices(np.column_stack([x, lo + t * (up - lo)]))


# --- unstructured polygon mesh --------------------------------------------

def points_in_polygon(pts, poly):
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    a = poly
    b = np.roll(poly, -1, axis=0)
    for (ax, ay), (bx, by) in zip(a, b):
        cross = (ay > y) != (by > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = (bx - ax) * (y - ay) / (by - ay) + ax
        inside ^= cross & (x < xi)
    return inside


def distance_to_polyline(pts, poly):
    a = poly
    b = np.roll(poly, -1, axis=0)
    ab = b - a
    ap = pts[:, None, :] - a[None, :, :]
    t = np.clip((ap * ab[None]).sum(-1) / (ab * ab).sum(-1)[None], 0.0, 1.0)
    d = ap - t[..., None] * ab[None]
    return np.sqrt((d**2).sum(-1)).min(axis=1)


def _inside_triangles(pts, tri, poly):
    c = pts[tri].mean(axis=1)
    return tri[points_in_polygon(c, poly)]


def polygon_mesh(boundary: Shape, h, smooth_iters=6):
    """Triangulate the region enclosed by ``boundary`` keeping its points as
    the boundary vertices (in order, indices 0..nb-1).

    Interior points come from a hexagonal lattice of spacing ``h``, relaxed
    by Laplacian smoothing; triangles are the Delaunay triangles whose
    centroid lies inside the polygon. Raises :class:`MeshError` if a
    boundary segment is not recovered as a mesh edge.
    """
    B = boundary.points
    nb = len(B)
    lo, hi = B.min(axis=0), B.max(axis=0)
    dy = h * np.sqrt(3.0) / 2.0
    rows = np.arange(lo[1], hi[1] + dy, dy)
    cand = []
    for k, y in enumerate(rows):
        xs = np.arange(lo[0] + (0.5 * h if k % 2 else 0.0), hi[0] + h, h)
        cand.append(np.column_stack([xs, np.full_like(xs, y)]))
    cand = np.vstack(cand)
    cand = cand[points_in_polygon(cand, B)]
    cand = cand[distance_to_polyline(cand, B) > 0.55 * h]

    # guard ring keeps boundary points off the convex hull (no flat hull triangles)
    g0, g1 = lo - 2.0 * h, hi + 2.0 * h
    gx = np.linspace(g0[0], g1[0], int(np.ceil((g1[0] - g0[0]) / h)) + 1)
    gy = np.linspace(g0[1], g1[1], int(np.ceil((g1[1] - g0[1]) / h)) + 1)[1:-1]
    guard = np.vstack([np.column_stack([gx, np.full_like(gx, g0[1])]),
                       np.column_stack([gx, np.full_like(gx, g1[1])]),
                       np.column_stack([np.full_like(gy, g0[0]), gy]),
                       np.column_stack([np.full_like(gy, g1[0]), gy])])

    interior = cand
    for _ in range(smooth_iters):
        pts = np.vstack([B, interior, guard])
        tri = _inside_triangles(pts, Delaunay(pts).simplices, B)
        e = tri[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        e = np.unique(np.sort(e, axis=1), axis=0)
        n = len(pts)
        acc = np.zeros((n, 2))
        deg = np.zeros(n)
        np.add.at(acc, e[:, 0], pts[e[:, 1]])
        np.add.at(acc, e[:, 1], pts[e[:, 0]])
        np.add.at(deg, e[:, 0], 1.0)
        np.add.at(deg, e[:, 1], 1.0)
        ni = slice(nb, nb + len(interior))
        moved = acc[ni] / np.maximum(deg[ni], 1.0)[:, None]
        ok = (deg[ni] > 0) & points_in_polygon(moved, B)
        ok &= distance_to_polyline(moved, B) > 0.45 * h
        interior = np.where(ok[:, None], moved, interior)

    pts = np.vstack([B, interior, guard])
    tri = _inside_triangles(pts, Delaunay(pts).simplices, B)
    v = pts[tri]
    area = 0.5 * ((v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1])
                  - (v[:, 1, 1] - v[:, 0, 1]) * (v[:, 2, 0] - v[:, 0, 0]))
    tri[area < 0] = tri[area < 0][:, [0, 2, 1]]
    if np.any(np.abs(area) < 1e-12 * h * h):
        raise MeshError("degenerate triangle in polygon mesh")
    used = np.unique(tri)
    if len(used) != len(pts):
        # drop orphaned interior points and renumber
        if np.any(used[:nb] != np.arange(nb)) or len(used) < nb:
            raise MeshError("boundary point not attached to the mesh")
        remap = -np.ones(len(pts), dtype=np.int64)
        remap[used] = np.arange(len(used))
        pts, tri = pts[used], remap[tri]
    tags = {}
    for i in range(nb):
        j = (i + 1) % nb
        tags[(min(i, j), max(i, j))] = int(boundary.labels[i])
    edges = {tuple(e) for e in np.sort(tri[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1).tolist()}
    missing = [k for k in tags if k not in edges]
    if missing:
        raise MeshError(f"boundary segments not recovered: {missing[:5]}")
    return Mesh.build(pts, tri, tags)


# --- reference meshes -----------------------------------------------------

def generate_reference_mesh(case, resolution, geometry: BifurcationGeometry | None = None):
    """Reference mesh of the undeformed stenosis rectangle or Y-domain."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    if case == "stenosis":
        nx, ny = stenosis_mesh_divisions(resolution)
        if ny < 7:
            raise MeshError(f"resolution {resolution} leaves {ny + 1} inlet nodes (< 8)")
        return structured_rectangle(nx, ny)
    if case == "bifurcation":
        base = bifurcation_base(resolution, geometry)
        n_inlet = int(np.sum(base.labels == INLET)) + 1
        if n_inlet < 8:
            raise MeshError(f"resolution {resolution} leaves {n_inlet} inlet nodes (< 8)")
        return polygon_mesh(base, resolution)
    raise ValueError(f"unknown case {case!r}")


def boundary_loop(mesh: Mesh):
    """Boundary vertices in CCW order (interior on the left), together with
    the tag of each outgoing segment. Starts where an inlet chain ends."""
    nt = mesh.n_triangles
    directed = {}
    for t in range(nt):
        a, b, c = mesh.triangles[t]
        for (u, v), k in zip(((a, b), (b, c), (c, a)), mesh.tri_edges[t]):
            if mesh.edge_tags[k] > 0:
                if u in directed:
                    raise MeshError(f"boundary vertex {u} is pinched")
                directed[int(u)] = (int(v), int(mesh.edge_tags[k]))
    if not directed:
        raise MeshError("mesh has no boundary")
    incoming_tag = {v: tag for u, (v, tag) in directed.items()}
    starts = sorted(u for u, (v, tag) in directed.items()
                    if tag != INLET and incoming_tag.get(u) == INLET)
    start = starts[0] if starts else min(directed)
    order, tags = [start], [directed[start][1]]
    nxt = directed[start][0]
    while nxt != start:
        if len(order) > len(directed):
            raise MeshError("boundary walk did not close")
        order.append(nxt)
        tags.append(directed[nxt][1])
        nxt = directed[nxt][0]
    if len(order) != len(directed):
        raise MeshError(f"disconnected boundary: loop has {len(order)} of {len(directed)} vertices")
    return np.array(order), np.array(tags)


def extract_boundary_cps(mesh: Mesh) -> Shape:
    """Boundary vertices of ``mesh`` as an ordered, tagged control-point shape."""
    order, tags = boundary_loop(mesh)
    return Shape(mesh.vertices[order], tags)


# --- .gmesh I/O -------------------------------------------------------------

def write_gmesh(mesh: Mesh, path):
    with open(path, "w") as fh:
        fh.write("GMESH 1\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_edges} {mesh.n_triangles}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for k, (a, b) in enumerate(mesh.edges):
            fh.write(f"{a} {b} {mesh.n_vertices + k} {mesh.edge_tags[k]}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")


def read_gmesh(path) -> Mesh:
    with open(path) as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0].strip() != "GMESH 1":
        raise MeshError(f"{path}: not a GMESH 1 file")
    nv, ne, nt = (int(v) for v in lines[1].split())
    body = lines[2:]
    if len(body) < nv + ne + nt:
        raise MeshError(f"{path}: truncated")
    verts = np.array([[float(v) for v in ln.split()] for ln in body[:nv]])
    erows = np.array([[int(v) for v in ln.split()] for ln in body[nv:nv + ne]], dtype=np.int64).reshape(-1, 4)
    tris = np.array([[int(v) for v in ln.split()] for ln in body[nv + ne:nv + ne + nt]], dtype=np.int64)
    tags = {(int(min(a, b)), int(max(a, b))): int(t) for a, b, _, t in erows if t > 0}
    mesh = Mesh.build(verts, tris, tags)
    if not np.array_equal(mesh.edges, np.sort(erows[:, :2], axis=1)):
        raise MeshError(f"{path}: edge table inconsistent with triangles")
    if not np.array_equal(erows[:, 2], nv + np.arange(ne)):
        raise MeshError(f"{path}: midpoint node indices inconsistent")
    return mesh


def locate_points(mesh: Mesh, pts, k=12):
    """Containing triangle and barycentric coordinates for each query point.

    Points outside the mesh are assigned to the nearby triangle they are
    least outside of (coordinates then extrapolate).
    """
    pts = np.atleast_2d(pts)
    v = mesh.vertices[mesh.triangles]
    tree = cKDTree(v.mean(axis=1))
    k = min(k, mesh.n_triangles)
    _, cand = tree.query(pts, k=k)
    cand = cand.reshape(len(pts), k)
    a, b, c = v[cand, 0], v[cand, 1], v[cand, 2]
    det = (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])
    px = pts[:, None, 0] - a[..., 0]
    py = pts[:, None, 1] - a[..., 1]
    l1 = (px * (c[..., 1] - a[..., 1]) - py * (c[..., 0] - a[..., 0])) / det
    l2 = ((b[..., 0] - a[..., 0]) * py - (b[..., 1] - a[..., 1]) * px) / det
    lam = np.stack([1.0 - l1 - l2, l1, l2], axis=-1)
    best = np.argmax(lam.min(axis=-1), axis=1)
    rows = np.arange(len(pts))
    return cand[rows, best], lam[rows, best]
