"""Benchmark shape families: stenosis channels and Y-bifurcations.

Shapes are closed, counterclockwise boundary polylines. Point ``i`` starts
segment ``i`` (``i -> i+1``, wrapping), and ``labels[i]`` is that segment's
boundary tag.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .errors import DegenerateShapeError

INTERIOR, INLET, WALL, OUTLET = 0, 1, 2, 3

# stenosis channel height and length (mm)
L0 = 2.0
L1 = 20.0

SIGMA_RANGE = (0.8, 2.0)
MU_RANGE = (0.3 * L1, 0.7 * L1)
DISPLACEMENT_RANGE = (-0.5, 0.5)


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Shape:
    points: np.ndarray
    labels: np.ndarray
    control_indices: tuple = ()

    def __post_init__(self):
        pts = _frozen(self.points)
        lab = _frozen(self.labels, dtype=np.int64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise DegenerateShapeError(f"points must be (n, 2), got {pts.shape}")
        if len(pts) < 3:
            raise DegenerateShapeError("a shape needs at least 3 points")
        if lab.shape != (len(pts),):
            raise DegenerateShapeError("one label per segment required")
        seg = np.roll(pts, -1, axis=0) - pts
        short = np.flatnonzero(np.hypot(seg[:, 0], seg[:, 1]) <= 1e-12)
        if short.size:
            raise DegenerateShapeError(f"coincident consecutive points at {short.tolist()}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "control_indices", tuple(int(i) for i in self.control_indices))

    def __len__(self):
        return len(self.points)

    @property
    def segments(self):
        i = np.arange(len(self.points))
        return np.stack([i, (i + 1) % len(i)], axis=1)

    @property
    def n_points(self):
        return len(self.points)

    def bounding_diagonal(self):
        ext = self.points.max(axis=0) - self.points.min(axis=0)
        return float(np.hypot(*ext))

    def with_points(self, points):
        return Shape(points, self.labels, self.control_indices)


@dataclass(frozen=True)
class StenosisParams:
    sigma1: float
    sigma2: float
    mu1: float
    mu2: float

    def as_array(self):
        return np.array([self.sigma1, self.sigma2, self.mu1, self.mu2])

    @classmethod
    def from_array(cls, a):
        return cls(*(float(v) for v in a))

    def check(self):
        for s in (self.sigma1, self.sigma2):
            if not SIGMA_RANGE[0] <= s <= SIGMA_RANGE[1]:
                raise ValueError(f"sigma {s} outside {SIGMA_RANGE}")
        for m in (self.mu1, self.mu2):
            if not MU_RANGE[0] <= m <= MU_RANGE[1]:
                raise ValueError(f"mu {m} outside {MU_RANGE}")


STENOSIS_RANGES = [SIGMA_RANGE, SIGMA_RANGE, MU_RANGE, MU_RANGE]
BIFURCATION_RANGES = [DISPLACEMENT_RANGE] * 8


@dataclass(frozen=True)
class BifurcationParams:
    # (4, 2): x/y displacement of each control point (mm)
    displacements: np.ndarray

    def __post_init__(self):
        d = _frozen(self.displacements).reshape(4, 2)
        object.__setattr__(self, "displacements", d)

    def as_array(self):
        return self.displacements.ravel().copy()

    @classmethod
    def from_array(cls, a):
        return cls(np.asarray(a, dtype=float).reshape(4, 2))

    def check(self):
        lo, hi = DISPLACEMENT_RANGE
        if np.any(self.displacements < lo) or np.any(self.displacements > hi):
            raise ValueError(f"control displacement outside [{lo}, {hi}] mm")


def latin_hypercube(n_samples, ranges, seed):
    """Latin hypercube sample of ``n_samples`` points in the box ``ranges``.

    Every dimension has exactly one sample in each of the ``n_samples``
    equal-width strata of its interval.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    ranges = np.asarray(ranges, dtype=float)
    if ranges.size == 0:
        raise ValueError("empty ranges")
    ranges = ranges.reshape(-1, 2)
    lo, hi = ranges[:, 0], ranges[:, 1]
    if np.any(hi <= lo):
        raise ValueError("each range needs lo < hi")
    sampler = qmc.LatinHypercube(d=len(ranges), seed=np.random.default_rng(seed))
    return qmc.scale(sampler.random(n_samples), lo, hi)


def split_samples(n, n_train, n_val, n_test=None):
    """Contiguous train/validation/test index split (LHS rows are already
    randomly ordered)."""
    n_test = n - n_train - n_val if n_test is None else n_test
    if min(n_train, n_val, n_test) < 0 or n_train + n_val + n_test != n:
        raise ValueError(f"split {n_train}/{n_val}/{n_test} does not partition {n}")
    idx = np.arange(n)
    return idx[:n_train], idx[n_train:n_train + n_val], idx[n_train + n_val:]


# --- stenosis -------------------------------------------------------------

def gaussian_bump(x, sigma, mu):
    return np.exp(-((x - mu) ** 2) / (2.0 * sigma**2)) / math.sqrt(2.0 * math.pi * sigma**2)


def lower_wall(x, p: StenosisParams):
    return gaussian_bump(x, p.sigma1, p.mu1)


def upper_wall(x, p: StenosisParams):
    return L0 - gaussian_bump(x, p.sigma2, p.mu2)


def stenosis_divisions(n_boundary_points):
    """Split a boundary point budget into (nx, ny) cells along the channel
    length and height, proportionally to the side lengths."""
    if n_boundary_points % 2:
        raise ValueError("stenosis boundary point count must be even")
    half = n_boundary_points // 2
    ny = max(1, int(round(half * L0 / (L0 + L1))))
    nx = half - ny
    if nx < 1:
        raise ValueError("too few boundary points")
    return nx, ny


def stenosis_boundary(bottom, top, nx, ny):
    """Closed CCW loop from the inlet lower corner.

    ``bottom``/``top`` are callables giving the wall height at x.
    """
    xs = np.linspace(0.0, L1, nx + 1)
    lo = bottom(xs)
    up = top(xs)
    t = np.linspace(0.0, 1.0, ny + 1)
    bot = np.column_stack([xs, lo])
    out = np.column_stack([np.full(ny + 1, L1), lo[-1] + t * (up[-1] - lo[-1])])
    topw = np.column_stack([xs[::-1], up[::-1]])
    inl = np.column_stack([np.zeros(ny + 1), up[0] + t * (lo[0] - up[0])])
    pts = np.vstack([bot[:-1], out[:-1], topw[:-1], inl[:-1]])
    labels = np.concatenate([
        np.full(nx, WALL), np.full(ny, OUTLET), np.full(nx, WALL), np.full(ny, INLET)])
    return pts, labels


def generate_stenosis_shape(p: StenosisParams, n_boundary_points: int, check_range=True) -> Shape:
    """Boundary of the stenosed channel for Gaussian wall parameters ``p``.

    Wall points share the x-stations of the rectangular reference boundary
    with the same point count, so registration compares equally sampled
    curves.
    """
    if n_boundary_points < 8:
        raise ValueError("n_boundary_points must be >= 8")
    if check_range:
        p.check()
    nx, ny = stenosis_divisions(n_boundary_points)
    xs = np.linspace(0.0, L1, 20 * nx + 1)
    gap = upper_wall(xs, p) - lower_wall(xs, p)
    if np.any(gap <= 0.0):
        raise DegenerateShapeError(f"walls touch at x={xs[np.argmin(gap)]:.4f} mm")
    pts, labels = stenosis_boundary(lambda x: lower_wall(x, p), lambda x: upper_wall(x, p), nx, ny)
    return Shape(pts, labels)


def rectangle_shape(n_boundary_points):
    nx, ny = stenosis_divisions(n_boundary_points)
    pts, labels = stenosis_boundary(np.zeros_like, lambda x: np.full_like(x, L0), nx, ny)
    return Shape(pts, labels)


# --- bifurcation ----------------------------------------------------------

@dataclass(frozen=True)
class BifurcationGeometry:
    """Dimensions (mm, degrees) of the Y-shaped reference domain."""

    inlet_width: float = 2.0
    inlet_length: float = 8.0
    branch_width: float = 1.4
    branch_length: float = 8.0
    branch_angle: float = 35.0
    fillet_radius: float = 0.5
    deform_width: float = 2.0
    taper_length: float = 2.0

    def corners(self):
        """Sharp polygon corners P0..P8 (CCW from the inlet lower corner)
        and the four control locations."""
        w, L = self.inlet_width / 2, self.inlet_length
        hb, Lb = self.branch_width / 2, self.branch_length
        th = math.radians(self.branch_angle)
        c, s = math.cos(th), math.sin(th)
        o = np.array([L, 0.0])

        def outer(sgn, t):
            d = np.array([c, sgn * s])
            n = np.array([-s, sgn * c])
            return o + t * d + hb * n

        def inner(sgn, t):
            d = np.array([c, sgn * s])
            n = np.array([-s, sgn * c])
            return o + t * d - hb * n

        t_corner = (w - hb * c) / s
        if t_corner <= 0:
            raise DegenerateShapeError("branches wider than the parent vessel")
        t_apex = hb * c / s
        if t_apex >= Lb:
            raise DegenerateShapeError("branches too short")
        P = [
            np.array([0.0, -w]),
            outer(-1, t_corner),
            outer(-1, Lb),
            inner(-1, Lb),
            inner(-1, t_apex),
            inner(+1, Lb),
            outer(+1, Lb),
            outer(+1, t_corner),
            np.array([0.0, w]),
        ]
        ctrl = [
            np.array([L / 2, -w]),
            outer(-1, (t_corner + Lb) / 2),
            outer(+1, (t_corner + Lb) / 2),
            np.array([L / 2, w]),
        ]
        return P, ctrl


def _fillet(prev, corner, nxt, r, n_arc=64):
    u1 = prev - corner
    u2 = nxt - corner
    l1, l2 = np.linalg.norm(u1), np.linalg.norm(u2)
    u1, u2 = u1 / l1, u2 / l2
    half = 0.5 * math.acos(float(np.clip(u1 @ u2, -1.0, 1.0)))
    t = r / math.tan(half)
    if t >= min(l1, l2):
        raise DegenerateShapeError("fillet radius too large for the adjacent edges")
    bis = u1 + u2
    bis /= np.linalg.norm(bis)
    centre = corner + bis * (r / math.sin(half))
    a0 = corner + t * u1 - centre
    a1 = corner + t * u2 - centre
    ang0 = math.atan2(a0[1], a0[0])
    dang = math.atan2(a0[0] * a1[1] - a0[1] * a1[0], a0 @ a1)
    ang = ang0 + np.linspace(0.0, dang, n_arc + 1)
    return centre + r * np.column_stack([np.cos(ang), np.sin(ang)])


def _arc_length(poly):
    return float(np.sum(np.hypot(*np.diff(poly, axis=0).T)))


def _resample(poly, n):
    """``n`` equal arc-length segments along an open polyline, keeping both ends."""
    d = np.hypot(*np.diff(poly, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(d)])
    st = np.linspace(0.0, s[-1], n + 1)
    return np.column_stack([np.interp(st, s, poly[:, 0]), np.interp(st, s, poly[:, 1])])


def _allocate(lengths, total):
    """Split ``total`` segments over chains proportionally to length
    (largest remainder, at least one per chain)."""
    lengths = np.asarray(lengths)
    if total < len(lengths):
        raise ValueError("fewer boundary points than boundary chains")
    exact = total * lengths / lengths.sum()
    n = np.maximum(np.floor(exact).astype(int), 1)
    rem = exact - n
    for i in np.argsort(-rem, kind="stable")[: total - n.sum()]:
        n[i] += 1
    while n.sum() > total:
        n[np.argmax(n)] -= 1
    return n


def bifurcation_chains(geom: BifurcationGeometry):
    """Dense boundary chains (polyline, tag) in traversal order."""
    P, _ = geom.corners()
    r = geom.fillet_radius

    def wall(a, corner, b):
        arc = _fillet(P[a], P[corner], P[b], r)
        return np.vstack([P[a], arc, P[b]])

    return [
        (wall(0, 1, 2), WALL),
        (np.vstack([P[2], P[3]]), OUTLET),
        (wall(3, 4, 5), WALL),
        (np.vstack([P[5], P[6]]), OUTLET),
        (wall(6, 7, 8), WALL),
        (np.vstack([P[8], P[0]]), INLET),
    ]


def bifurcation_perimeter(geom: BifurcationGeometry | None = None):
    return sum(_arc_length(poly) for poly, _ in bifurcation_chains(geom or BifurcationGeometry()))


def bifurcation_base(resolution=None, geom: BifurcationGeometry | None = None, n_points=None) -> Shape:
    """Reference Y-domain boundary.

    Sampled with ``n_points`` points in total, or ``round(perimeter /
    resolution)`` when only the spacing (mm) is given.
    """
    geom = geom or BifurcationGeometry()
    chains = bifurcation_chains(geom)
    lengths = [_arc_length(poly) for poly, _ in chains]
    if n_points is None:
        if resolution is None or resolution <= 0:
            raise ValueError("resolution must be positive")
        n_points = int(round(sum(lengths) / resolution))
    counts = _allocate(lengths, n_points)
    pts, labels = [], []
    for (poly, tag), n in zip(chains, counts):
        q = _resample(poly, int(n))[:-1]
        pts.append(q)
        labels.append(np.full(len(q), tag))
    pts = np.vstack(pts)
    labels = np.concatenate(labels)
    _, ctrl = geom.corners()
    control = tuple(int(np.argmin(np.hypot(*(pts - c).T))) for c in ctrl)
    return Shape(pts, labels, control)


def _point_segment_distance(x, a, b):
    ab = b - a
    t = np.clip(((x - a) @ ab) / (ab @ ab), 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.hypot(*(x - proj).T)


def _taper(shape: Shape, length):
    """C1 weight, 0 on inlet/outlet segments and 1 beyond ``length`` mm."""
    x = shape.points
    d = np.full(len(x), np.inf)
    for i in np.flatnonzero(shape.labels != WALL):
        j = (i + 1) % len(x)
        d = np.minimum(d, _point_segment_distance(x, x[i], x[j]))
    s = np.clip(d / length, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def bifurcation_displacement(p: BifurcationParams, base: Shape, geom: BifurcationGeometry | None = None):
    """Boundary displacement imposed by the four control displacements.

    Gaussian RBF interpolation of the control data, multiplied by a taper
    that pins the inlet and outlets.
    """
    geom = geom or BifurcationGeometry()
    if len(base.control_indices) != 4:
        raise ValueError("base shape must designate 4 control vertices")
    ci = np.asarray(base.control_indices)
    x = base.points
    taper = _taper(base, geom.taper_length)

    def gauss(a, b):
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
        return np.exp(-d2 / geom.deform_width**2)

    A = taper[ci, None] * gauss(x[ci], x[ci])
    w = np.linalg.solve(A, p.displacements)
    return taper[:, None] * (gauss(x, x[ci]) @ w)


def generate_bifurcation_shape(p: BifurcationParams, base: Shape, geom: BifurcationGeometry | None = None) -> Shape:
    p.check()
    shape = base.with_points(base.points + bifurcation_displacement(p, base, geom))
    bad = self_intersections(shape)
    if bad:
        raise DegenerateShapeError(f"deformed boundary self-intersects at segments {bad[:5]}")
    return shape


# --- checks and I/O -------------------------------------------------------

def self_intersections(shape: Shape):
    """Pairs of non-adjacent segments that intersect or touch."""
    a = shape.points
    b = np.roll(a, -1, axis=0)
    n = len(a)

    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])

    A, B = a[:, None, :], b[:, None, :]
    C, D = a[None, :, :], b[None, :, :]
    o1 = orient(A, B, C)
    o2 = orient(A, B, D)
    o3 = orient(C, D, A)
    o4 = orient(C, D, B)
    hit = (o1 * o2 <= 0) & (o3 * o4 <= 0)
    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    i, j = i[keep], j[keep]
    # collinear-but-disjoint segments satisfy the sign test; confirm by bbox overlap
    sel = hit[i, j]
    i, j = i[sel], j[sel]
    ov = (
        (np.maximum(np.minimum(a[i, 0], b[i, 0]), np.minimum(a[j, 0], b[j, 0]))
         <= np.minimum(np.maximum(a[i, 0], b[i, 0]), np.maximum(a[j, 0], b[j, 0])))
        & (np.maximum(np.minimum(a[i, 1], b[i, 1]), np.minimum(a[j, 1], b[j, 1]))
           <= np.minimum(np.maximum(a[i, 1], b[i, 1]), np.maximum(a[j, 1], b[j, 1])))
    )
    return [(int(p), int(q)) for p, q in zip(i[ov], j[ov])]


def is_simple(shape: Shape):
    return not self_intersections(shape)


def signed_area(points):
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def write_shape_csv(shape: Shape, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "tag"])
        for (x, y), t in zip(shape.points, shape.labels):
            w.writerow([repr(float(x)), repr(float(y)), int(t)])


def read_shape_csv(path) -> Shape:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"x", "y", "tag"}:
        raise ValueError(f"{path}: expected header x,y,tag")
    pts = np.array([[float(r["x"]), float(r["y"])] for r in rows])
    tags = np.array([int(r["tag"]) for r in rows])
    return Shape(pts, tags)
