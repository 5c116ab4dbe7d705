"""POD bases, RBF coefficient regression and error metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rbf
from .errors import DegenerateDatasetError


@dataclass(frozen=True, eq=False)
class PodBasis:
    basis: np.ndarray            # (N, rank)
    singular_values: np.ndarray  # full spectrum of the snapshot matrix
    rank: int
    energy: float
    mean: np.ndarray | None = None   # only when centering was requested

    @property
    def n_dofs(self):
        return self.basis.shape[0]


def _fix_signs(U):
    """Make the largest-magnitude entry of every column positive."""
    if U.size == 0:
        return U
    idx = np.argmax(np.abs(U), axis=0)
    s = np.sign(U[idx, np.arange(U.shape[1])])
    s[s == 0] = 1.0
    return U * s


def energy_rank(singular_values, threshold):
    s2 = np.asarray(singular_values, dtype=float) ** 2
    total = s2.sum()
    cum = np.cumsum(s2) / total
    # guard against round-off just below the threshold at full rank
    k = int(np.searchsorted(cum, threshold - 1e-14) + 1)
    return min(k, len(s2)), cum


def pod(snapshots, energy_threshold=0.999, center=False, rank=None) -> PodBasis:
    M = np.asarray(snapshots, dtype=float)
    if M.ndim != 2 or M.shape[1] < 2:
        raise ValueError("POD needs an (N, N_s) matrix with N_s >= 2")
    if not 0.0 < energy_threshold <= 1.0:
        raise ValueError("energy threshold must lie in (0, 1]")
    mean = None
    if center:
        mean = M.mean(axis=1)
        M = M - mean[:, None]
    if not np.any(M):
        raise DegenerateDatasetError("snapshot matrix is identically zero")
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    if rank is None:
        rank, cum = energy_rank(s, energy_threshold)
    else:
        cum = np.cumsum(s**2) / np.sum(s**2)
    Ub = np.ascontiguousarray(_fix_signs(U[:, :rank]))
    return PodBasis(Ub, s, int(rank), float(cum[rank - 1]), mean)


def captured_energy(b: PodBasis, n):
    s2 = b.singular_values**2
    return float(s2[:n].sum() / s2.sum())


def pod_project(b: PodBasis, v):
    v = np.asarray(v, dtype=float)
    if v.shape[0] != b.n_dofs:
        raise ValueError(f"vector length {v.shape[0]} != basis length {b.n_dofs}")
    if b.mean is not None:
        v = v - (b.mean if v.ndim == 1 else b.mean[:, None])
    return b.basis.T @ v


def pod_reconstruct(b: PodBasis, c):
    c = np.asarray(c, dtype=float)
    if c.shape[0] != b.rank:
        raise ValueError(f"coefficient length {c.shape[0]} != rank {b.rank}")
    out = b.basis @ c
    if b.mean is not None:
        out = out + (b.mean if out.ndim == 1 else b.mean[:, None])
    return out


def compress_geometry(gammas, energy_threshold=0.999):
    """Geometry POD of the (2 N_cp, N_s) matrix and reduced parameters per sample."""
    Q = pod(gammas, energy_threshold)
    return Q, pod_project(Q, gammas)


# --- coefficient regression --------------------------------------------------

def rbf_fit_coeffs(inputs, outputs):
    """Cubic RBF + linear tail from reduced geometry (N_s, N_k) to reduced
    flow coefficients (N_s, N_l)."""
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(outputs, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < x.shape[1] + 1:
        raise ValueError(f"need at least {x.shape[1] + 1} samples, got {len(x)}")
    return rbf.rbf_fit(x, y)


def rbf_eval_coeffs(m: rbf.CubicRbf, x):
    return rbf.rbf_eval(m, x)


# --- error metrics -----------------------------------------------------------

def relative_l2_error(truth, approx):
    t = np.asarray(truth, dtype=float)
    a = np.asarray(approx, dtype=float)
    if t.shape != a.shape:
        raise ValueError("length mismatch")
    n = np.linalg.norm(t)
    if n == 0:
        raise ValueError("zero truth norm")
    return float(np.linalg.norm(t - a) / n)


def pod_projection_error(b: PodBasis, v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero norm")
    return float(np.linalg.norm(v - pod_reconstruct(b, pod_project(b, v))) / n)


def pointwise_relative_error(truth, approx):
    t = np.asarray(truth, dtype=float)
    a = np.asarray(approx, dtype=float)
    m = np.max(np.abs(t))
    if m == 0:
        raise ValueError("zero max of truth field")
    return np.abs(t - a) / m
