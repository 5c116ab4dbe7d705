"""Discrete currents of 2D polylines and their Gaussian-kernel RKHS metric.

A polyline is represented by one Dirac current per segment, located at the
segment midpoint and carrying the tangent vector scaled by segment length.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .shapes import Shape


@dataclass(frozen=True)
class KernelConfig:
    lambda_w: float = 1.0
    lambda_v: float | None = None   # deformation kernel width, defaults to lambda_w

    def __post_init__(self):
        if self.lambda_v is None:
            object.__setattr__(self, "lambda_v", self.lambda_w)
        if not (self.lambda_w > 0 and self.lambda_v > 0):
            raise ValueError("kernel widths must be positive")


@dataclass(frozen=True, eq=False)
class CurrentsShape:
    centers: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float)
        t = np.asarray(self.tau, dtype=float)
        if c.shape != t.shape or c.ndim != 2 or c.shape[1] != 2 or len(c) == 0:
            raise ValueError("centers and tau must both be non-empty (n, 2)")
        if np.any(np.hypot(t[:, 0], t[:, 1]) <= 0):
            raise ValueError("zero-length segment in currents shape")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "tau", t)

    def __len__(self):
        return len(self.centers)


def segment_points(points, closed=True):
    """(start, end) arrays of the polyline segments."""
    p = np.asarray(points, dtype=float)
    q = np.roll(p, -1, axis=0) if closed else p[1:]
    if not closed:
        p = p[:-1]
    return p, q


def currents_from_points(points, closed=True) -> CurrentsShape:
    a, b = segment_points(points, closed)
    return CurrentsShape(0.5 * (a + b), b - a)


def to_currents(shape: Shape) -> CurrentsShape:
    return currents_from_points(shape.points, closed=True)


def kernel_eval(x, y, lam):
    if lam <= 0:
        raise ValueError("kernel width must be positive")
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return float(np.exp(-np.dot(d, d) / lam))


def sq_dists(x, y):
    """Pairwise squared distances between two (n, 2)/(m, 2) point sets."""
    dx = x[:, None, 0] - y[None, :, 0]
    dy = x[:, None, 1] - y[None, :, 1]
    return dx * dx + dy * dy


def gauss_matrix(x, y, lam):
    return np.exp(-sq_dists(x, y) / lam)


def currents_inner_product(a: CurrentsShape, b: CurrentsShape, lambda_w) -> float:
    if lambda_w <= 0:
        raise ValueError("lambda_w must be positive")
    K = gauss_matrix(a.centers, b.centers, lambda_w)
    return float(np.sum(K * (a.tau @ b.tau.T)))


def currents_dissimilarity(a: CurrentsShape, b: CurrentsShape, lambda_w) -> float:
    d = (currents_inner_product(a, a, lambda_w)
         - 2.0 * currents_inner_product(a, b, lambda_w)
         + currents_inner_product(b, b, lambda_w))
    return max(d, 0.0)


def shape_dissimilarity(s1: Shape, s2: Shape, lambda_w) -> float:
    return currents_dissimilarity(to_currents(s1), to_currents(s2), lambda_w)


def dissimilarity_and_grad(points, target: CurrentsShape, lambda_w, closed=True):
    """Dissimilarity between the polyline ``points`` and ``target`` and its
    gradient with respect to the polyline vertices (not clamped, so the
    gradient stays consistent with the value)."""
    pts = np.asarray(points, dtype=float)
    a, b = segment_points(pts, closed)
    c = 0.5 * (a + b)
    t = b - a
    Kss = gauss_matrix(c, c, lambda_w)
    Kst = gauss_matrix(c, target.centers, lambda_w)
    Tss = t @ t.T
    Tst = t @ target.tau.T
    val = (np.sum(Kss * Tss) - 2.0 * np.sum(Kst * Tst)
           + currents_inner_product(target, target, lambda_w))
    # d/dtau_i and d/dc_i
    g_tau = 2.0 * (Kss @ t) - 2.0 * (Kst @ target.tau)
    W = Kss * Tss
    Wt = Kst * Tst
    g_c = (-4.0 / lambda_w) * (W.sum(1)[:, None] * c - W @ c) \
        + (4.0 / lambda_w) * (Wt.sum(1)[:, None] * c - Wt @ target.centers)
    g = np.zeros_like(pts)
    n_seg = len(t)
    i0 = np.arange(n_seg)
    i1 = (i0 + 1) % len(pts) if closed else i0 + 1
    np.add.at(g, i0, 0.5 * g_c - g_tau)
    np.add.at(g, i1, 0.5 * g_c + g_tau)
    return float(val), g
