"""Cubic polyharmonic RBF interpolation with a linear polynomial tail.

    f(x) = sum_i w_i |x - c_i|^3 + a_0 + sum_k a_k x_k

with the usual moment conditions sum_i w_i p(c_i) = 0 for every linear p.
The saddle-point system is symmetric indefinite and is solved with a
Bunch-Kaufman (pivoted LDL^T) factorisation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import SingularSystemError

KERNEL = "cubic"


@dataclass(frozen=True, eq=False)
class CubicRbf:
    centers: np.ndarray      # (n, d)
    weights: np.ndarray      # (n, m)
    poly: np.ndarray         # (d + 1, m): constant row then linear rows
    kernel: str = KERNEL

    @property
    def dim(self):
        return self.centers.shape[1]

    @property
    def n_outputs(self):
        return self.weights.shape[1]

    def __call__(self, x):
        return rbf_eval(self, x)


def _poly_matrix(x):
    return np.hstack([np.ones((len(x), 1)), x])


def find_duplicates(x, tol=1e-12):
    x = np.asarray(x, dtype=float)
    scale = max(1.0, float(np.max(np.abs(x)))) if x.size else 1.0
    pairs = cKDTree(x).query_pairs(tol * scale, output_type="ndarray")
    return np.unique(pairs.ravel()) if len(pairs) else np.zeros(0, dtype=int)


def rbf_fit(centers, values, ridge=0.0) -> CubicRbf:
    """Interpolate ``values`` (n, m) or (n,) given at ``centers`` (n, d)."""
    c = np.asarray(centers, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    v = np.asarray(values, dtype=float)
    v = v.reshape(len(c), -1)
    n, d = c.shape
    if n < d + 1:
        raise SingularSystemError(f"{n} centers cannot determine a linear tail in {d} dimensions",
                                  offending=np.arange(n))
    dup = find_duplicates(c)
    if dup.size:
        raise SingularSystemError(f"duplicate RBF centers {dup.tolist()}", offending=dup)
    P = _poly_matrix(c)
    if np.linalg.matrix_rank(P) < d + 1:
        raise SingularSystemError("RBF centers are collinear/affinely dependent", offending=np.arange(n))
    Phi = cdist(c, c) ** 3
    if ridge:
        Phi[np.diag_indices(n)] += ridge
    A = np.zeros((n + d + 1, n + d + 1))
    A[:n, :n] = Phi
    A[:n, n:] = P
    A[n:, :n] = P.T
    rhs = np.vstack([v, np.zeros((d + 1, v.shape[1]))])
    try:
        sol = sla.solve(A, rhs, assume_a="sym", check_finite=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise SingularSystemError(f"RBF system is singular: {exc}", offending=np.arange(n)) from exc
    if not np.all(np.isfinite(sol)):
        raise SingularSystemError("RBF solve produced non-finite weights", offending=np.arange(n))
    return CubicRbf(c, np.ascontiguousarray(sol[:n]), np.ascontiguousarray(sol[n:]))


def rbf_eval(m: CubicRbf, x):
    """Evaluate at (q, d) points (or a single d-vector)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = x.reshape(-1, m.dim)
    out = (cdist(x, m.centers) ** 3) @ m.weights + _poly_matrix(x) @ m.poly
    return out[0] if single else out


def rbf_gradient(m: CubicRbf, x):
    """Jacobian d f_j / d x_k, shape (q, m, d)."""
    x = np.asarray(x, dtype=float).reshape(-1, m.dim)
    diff = x[:, None, :] - m.centers[None, :, :]          # (q, n, d)
    r = np.sqrt(np.sum(diff * diff, axis=-1))             # (q, n)
    dphi = 3.0 * r[..., None] * diff                      # grad of r^3
    return np.einsum("qnd,nm->qmd", dphi, m.weights) + m.poly[1:].T[None]
