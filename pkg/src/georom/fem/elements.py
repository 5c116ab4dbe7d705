"""Taylor-Hood P2/P1 shape functions on straight-sided triangles.

Local P2 numbering: vertices 0, 1, 2 then midpoints of edges (0,1), (1,2), (2,0).
"""
import numpy as np

_EDGES = ((0, 1), (1, 2), (2, 0))


def p2_values(lam):
    """(nq, 6) P2 basis values at barycentric points (nq, 3)."""
    lam = np.atleast_2d(lam)
    v = [lam[:, i] * (2.0 * lam[:, i] - 1.0) for i in range(3)]
    v += [4.0 * lam[:, i] * lam[:, j] for i, j in _EDGES]
    return np.stack(v, axis=1)


def p2_bary_derivs(lam):
    """(nq, 6, 3): d phi_a / d lambda_i."""
    lam = np.atleast_2d(lam)
    nq = len(lam)
    d = np.zeros((nq, 6, 3))
    for i in range(3):
        d[:, i, i] = 4.0 * lam[:, i] - 1.0
    for a, (i, j) in enumerate(_EDGES):
        d[:, 3 + a, i] = 4.0 * lam[:, j]
        d[:, 3 + a, j] = 4.0 * lam[:, i]
    return d


def p1_values(lam):
    return np.atleast_2d(lam).copy()


def barycentric_gradients(vertices, triangles):
    """Constant grad(lambda_i) per triangle, shape (nt, 3, 2), and areas (nt,)."""
    P = vertices[triangles]                          # (nt, 3, 2)
    e1 = P[:, 1] - P[:, 0]
    e2 = P[:, 2] - P[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    # grad lambda_1 = perp(e2)/det, grad lambda_2 = -perp(e1)/det
    g1 = np.stack([e2[:, 1], -e2[:, 0]], axis=1) / det[:, None]
    g2 = np.stack([-e1[:, 1], e1[:, 0]], axis=1) / det[:, None]
    g0 = -g1 - g2
    return np.stack([g0, g1, g2], axis=1), 0.5 * det


def p2_gradients(lam, grad_lam):
    """(nt, nq, 6, 2) physical P2 gradients."""
    d = p2_bary_derivs(lam)                          # (nq, 6, 3)
    return np.einsum("qai,tik->tqak", d, grad_lam)
