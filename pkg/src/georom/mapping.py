"""Reference-to-physical domain mapping X(xi; gamma) from registered control points.

X is a cubic RBF interpolant of the control-point displacements plus an
affine tail, so X(xi) = xi + sum_i w_i |xi - c_i|^3 + A' xi + b'.  The stored
affine part ``A, b`` already includes the identity.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import rbf
from .errors import FoldError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MappingModel:
    centers: np.ndarray      # (n, 2) reference CPs
    weights: np.ndarray      # (n, 2)
    A: np.ndarray            # (2, 2) linear part, x = A @ xi + b + kernel terms
    b: np.ndarray            # (2,)
    kernel: str = rbf.KERNEL

    @property
    def poly(self):
        """Affine tail as a (3, 2) block: row 0 the offset, rows 1-2 = A^T."""
        return np.vstack([self.b[None, :], self.A.T])

    def _as_rbf(self):
        return rbf.CubicRbf(self.centers, self.weights, self.poly)

    @classmethod
    def from_blocks(cls, centers, weights, poly):
        poly = np.asarray(poly, dtype=float)
        return cls(np.asarray(centers, float), np.asarray(weights, float), poly[1:].T.copy(), poly[0].copy())


class IdentityMapping:
    """Stand-in for X = identity (direct solves on the physical mesh)."""

    def __call__(self, xi):
        return np.asarray(xi, dtype=float)


IDENTITY = IdentityMapping()


def geometric_parameters(cp_ref, cp_deformed):
    """gamma = [all x displacements, all y displacements]."""
    a = np.asarray(cp_ref, dtype=float)
    b = np.asarray(cp_deformed, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"CP count mismatch {a.shape} vs {b.shape}")
    d = b - a
    return np.concatenate([d[:, 0], d[:, 1]])


def displacements_from_gamma(gamma):
    g = np.asarray(gamma, dtype=float)
    n = len(g) // 2
    return np.column_stack([g[:n], g[n:]])


def fit_mapping(cp_ref, cp_deformed, ridge=0.0) -> MappingModel:
    c = np.asarray(cp_ref, dtype=float)
    d = np.asarray(cp_deformed, dtype=float) - c
    m = rbf.rbf_fit(c, d, ridge=ridge)
    A = np.eye(2) + m.poly[1:].T
    return MappingModel(c, m.weights, A, m.poly[0].copy())


def eval_mapping(m, xi):
    if isinstance(m, IdentityMapping):
        return np.array(xi, dtype=float)
    xi = np.asarray(xi, dtype=float)
    return rbf.rbf_eval(m._as_rbf(), xi)


def mapping_jacobian(m, xi):
    """(J, detJ) at query points: J has shape (q, 2, 2) with J[q, i, k] = dX_i/dxi_k.

    A single 2-vector query returns a (2, 2) matrix and a scalar.
    """
    xi = np.asarray(xi, dtype=float)
    single = xi.ndim == 1
    pts = xi.reshape(-1, 2)
    if isinstance(m, IdentityMapping):
        J = np.broadcast_to(np.eye(2), (len(pts), 2, 2)).copy()
    else:
        J = rbf.rbf_gradient(m._as_rbf(), pts)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(det <= 0):
        log.warning("mapping folds at %d of %d query points", int(np.sum(det <= 0)), len(det))
    if single:
        return J[0], float(det[0])
    return J, det


def check_fold_free(m, pts):
    _, det = mapping_jacobian(m, pts)
    bad = np.flatnonzero(det <= 0)
    if bad.size:
        raise FoldError(f"detJ <= 0 at {bad.size} points, first at {np.asarray(pts)[bad[0]].tolist()}",
                        points=np.asarray(pts)[bad])
