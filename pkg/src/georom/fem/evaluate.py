"""Point evaluation of P2/P1 fields."""
import numpy as np

from ..mesh import locate_points
from .elements import p2_values


def evaluate_field(f, pts):
    """(ux, uy, p) of a FlowField at arbitrary physical points of its mesh."""
    mesh = f.mesh
    tri, lam = locate_points(mesh, pts)
    conn = mesh.p2_connectivity()[tri]           # (q, 6)
    phi = p2_values(lam)
    ux = np.sum(f.ux[conn] * phi, axis=1)
    uy = np.sum(f.uy[conn] * phi, axis=1)
    p = np.sum(f.p[mesh.triangles[tri]] * lam, axis=1)
    return ux, uy, p

