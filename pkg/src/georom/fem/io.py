"""FlowField export: legacy VTK unstructured grid and node CSV."""
from pathlib import Path

import numpy as np


def _p1_view(f, points=None):
    mesh = f.mesh
    pts = mesh.vertices if points is None else np.asarray(points)[: mesh.n_vertices]
    nv = mesh.n_vertices
    return pts, f.ux[:nv], f.uy[:nv], f.p


def write_vtk(f, path, points=None, title="georom flow field"):
    """Vertex-based legacy VTK file (P2 velocities restricted to vertices).

    ``points`` overrides vertex positions, e.g. with the forward-mapped
    reference nodes of a prediction.
    """
    pts, ux, uy, p = _p1_view(f, points)
    tri = f.mesh.triangles
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(pts)} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in pts]
    lines.append(f"CELLS {len(tri)} {4 * len(tri)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in tri]
    lines.append(f"CELL_TYPES {len(tri)}")
    lines += ["5"] * len(tri)
    lines.append(f"POINT_DATA {len(pts)}")
    for name, arr in (("ux", ux), ("uy", uy), ("p", p)):
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [f"{v:.17g}" for v in arr]
    Path(path).write_text("\n".join(lines) + "\n")


def write_field_csv(f, path, points=None):
    """``node_id,x,y,ux,uy,p`` per vertex."""
    pts, ux, uy, p = _p1_view(f, points)
    rows = ["node_id,x,y,ux,uy,p"]
    rows += [f"{i},{x:.17g},{y:.17g},{a:.17g},{b:.17g},{c:.17g}"
             for i, ((x, y), a, b, c) in enumerate(zip(pts, ux, uy, p))]
    Path(path).write_text("\n".join(rows) + "\n")


def read_field_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1:3], data[:, 3], data[:, 4], data[:, 5]
