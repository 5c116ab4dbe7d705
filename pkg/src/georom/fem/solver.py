"""Stokes-initialised Newton solver for the steady Taylor-Hood system."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from ..errors import NewtonDivergenceError, NumericalError
from ..mapping import IDENTITY, eval_mapping
from ..mesh import Mesh
from ..shapes import INLET, OUTLET, WALL
from .assembly import Assembler, element_data, pullback_coefficients

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FluidProps:
    mu: float = 3.5e-3      # g / (mm s)
    rho: float = 1.06e-3    # g / mm^3

    def __post_init__(self):
        if self.mu <= 0 or self.rho <= 0:
            raise ValueError("fluid properties must be positive")

    @property
    def nu(self):
        return self.mu / self.rho


@dataclass(frozen=True)
class BoundaryConditions:
    u_max: float = 200.0    # mm/s, peak of the parabolic inlet profile
    inlet_tag: int = INLET
    wall_tag: int = WALL
    outlet_tag: int = OUTLET


@dataclass(frozen=True)
class SolverConfig:
    rtol: float = 1e-10
    atol: float = 1e-12
    max_iter: int = 25
    max_halvings: int = 8
    stokes_only: bool = False


@dataclass(frozen=True, eq=False)
class FlowField:
    """Velocity at P2 nodes (mm/s), kinematic pressure p/rho at vertices (mm^2/s^2)."""
    ux: np.ndarray
    uy: np.ndarray
    p: np.ndarray
    mesh: Mesh
    residual_history: tuple = ()
    n_newton: int = 0

    def __post_init__(self):
        if len(self.ux) != self.mesh.n_p2 or len(self.uy) != self.mesh.n_p2:
            raise ValueError("velocity length does not match P2 node count")
        if len(self.p) != self.mesh.n_vertices:
            raise ValueError("pressure length does not match vertex count")

    @property
    def state(self):
        return np.concatenate([self.ux, self.uy, self.p])


def _p2_boundary_nodes(mesh: Mesh, tag):
    eidx = np.flatnonzero(np.asarray(mesh.edge_tags) == tag)
    e = mesh.edges[eidx]
    return np.unique(np.concatenate([e[:, 0], e[:, 1], mesh.n_vertices + eidx]))


def dirichlet_data(mesh: Mesh, mapping, bc: BoundaryConditions):
    """Node indices and values of the velocity Dirichlet conditions.

    The inlet profile is parabolic across the physical inlet chord and points
    along its inward normal; wall nodes (including inlet corners) get zero.
    """
    nodes = mesh.p2_nodes()
    inlet = _p2_boundary_nodes(mesh, bc.inlet_tag)
    wall = _p2_boundary_nodes(mesh, bc.wall_tag)
    if inlet.size == 0:
        raise NumericalError("mesh has no inlet edges")
    x_in = eval_mapping(mapping, nodes[inlet])
    # chord endpoints: the inlet nodes shared with the wall
    corner = np.intersect1d(inlet, wall)
    if corner.size >= 2:
        ends = eval_mapping(mapping, nodes[corner])
        d = ((ends[:, None, :] - ends[None, :, :]) ** 2).sum(-1)
        i, j = np.unravel_index(np.argmax(d), d.shape)
        a, b = ends[i], ends[j]
    else:
        d = ((x_in[:, None, :] - x_in[None, :, :]) ** 2).sum(-1)
        i, j = np.unravel_index(np.argmax(d), d.shape)
        a, b = x_in[i], x_in[j]
    chord = b - a
    L = np.hypot(*chord)
    s = np.clip((x_in - a) @ chord / L**2, 0.0, 1.0)
    n = np.array([-chord[1], chord[0]]) / L
    # orient the normal into the domain (towards the mesh centroid)
    centre = eval_mapping(mapping, mesh.vertices.mean(axis=0)[None])[0]
    if np.dot(centre - 0.5 * (a + b), n) < 0:
        n = -n
    prof = 4.0 * bc.u_max * s * (1.0 - s)
    vals = {int(k): (prof[m] * n[0], prof[m] * n[1]) for m, k in enumerate(inlet)}
    for k in wall:
        vals[int(k)] = (0.0, 0.0)
    idx = np.array(sorted(vals), dtype=int)
    v = np.array([vals[k] for k in idx])
    return idx, v


def _free_solve(A, r, free):
    Aff = A[free][:, free].tocsc()
    try:
        dx = spla.spsolve(Aff, r[free])
    except RuntimeError as exc:
        raise NumericalError(f"singular flow system: {exc}") from exc
    if not np.all(np.isfinite(dx)):
        raise NumericalError("singular flow system (non-finite update)")
    return dx


def solve_flow(mesh: Mesh, mapping=IDENTITY, props: FluidProps | None = None,
               bc: BoundaryConditions | None = None, cfg: SolverConfig | None = None,
               ed=None) -> FlowField:
    props = props or FluidProps()
    bc = bc or BoundaryConditions()
    cfg = cfg or SolverConfig()
    ed = ed or element_data(mesh)
    coeffs = pullback_coefficients(mapping, mesh, props.nu, ed)
    asm = Assembler(mesh, coeffs, ed)
    n2, N = asm.n2, asm.N
    nodes, vals = dirichlet_data(mesh, mapping, bc)
    fixed = np.concatenate([nodes, nodes + n2])
    free = np.setdiff1d(np.arange(N), fixed)
    U = np.zeros(N)
    U[nodes] = vals[:, 0]
    U[nodes + n2] = vals[:, 1]

    # Stokes initial guess
    r0 = asm.stokes @ U
    ref = np.linalg.norm(r0[free])
    U[free] -= _free_solve(asm.stokes, r0, free)
    hist = []
    if cfg.stokes_only:
        r = (asm.stokes @ U)[free]
        return FlowField(U[:n2].copy(), U[n2:2 * n2].copy(), U[2 * n2:].copy(), mesh,
                         (float(np.linalg.norm(r)),), 0)

    ref = max(ref, 1e-300)
    R, A = asm.residual_and_tangent(U)
    rn = np.linalg.norm(R[free])
    hist.append(rn)
    it = 0
    while not (rn < cfg.rtol * ref or rn < cfg.atol):
        if it >= cfg.max_iter:
            raise NewtonDivergenceError(f"Newton did not converge in {cfg.max_iter} iterations "
                                        f"(last residual {rn:.3e})", history=hist)
        dx = _free_solve(A, R, free)
        step = 1.0
        for _ in range(cfg.max_halvings + 1):
            Ut = U.copy()
            Ut[free] -= step * dx
            Rt, At = asm.residual_and_tangent(Ut)
            rt = np.linalg.norm(Rt[free])
            if np.isfinite(rt) and rt < rn:
                break
            step *= 0.5
        else:
            if rn < 1e3 * max(cfg.rtol * ref, cfg.atol):
                # stagnated at round-off just above the tolerance
                log.info("Newton stagnated at %.3e", rn)
                break
            raise NewtonDivergenceError(f"Newton line search failed at residual {rn:.3e}", history=hist)
        U, R, A, rn = Ut, Rt, At, rt
        hist.append(rn)
        it += 1
    log.debug("Newton: %d iterations, residuals %s", it, hist)
    return FlowField(U[:n2].copy(), U[n2:2 * n2].copy(), U[2 * n2:].copy(), mesh,
                     tuple(float(h) for h in hist), it)


def field_to_snapshots(f: FlowField, mesh: Mesh | None = None):
    if mesh is not None and (mesh.n_p2 != f.mesh.n_p2 or mesh.n_vertices != f.mesh.n_vertices
                             or not np.array_equal(mesh.triangles, f.mesh.triangles)):
        raise ValueError("flow field lives on a different mesh than the reference")
    return f.ux.copy(), f.uy.copy(), f.p.copy()


def snapshots_to_field(ux, uy, p, mesh: Mesh) -> FlowField:
    return FlowField(np.asarray(ux, float), np.asarray(uy, float), np.asarray(p, float), mesh)


def boundary_flux(f: FlowField, tag=None):
    """Outward flux int u.n ds over boundary edges (optionally one tag only),
    exact for P2 velocity on straight edges (Simpson's rule)."""
    mesh = f.mesh
    be = mesh.boundary_edges
    tags = np.asarray(mesh.edge_tags)[be]
    if tag is not None:
        be = be[tags == tag]
    v = mesh.vertices
    e = mesh.edges[be]
    # outward normal: triangles are CCW, boundary edge direction from its triangle
    tri_of = _edge_owner(mesh)
    total = 0.0
    for ei, (a, b) in zip(be, e):
        t = tri_of[ei]
        tri = list(mesh.triangles[t])
        ia, ib = tri.index(a), tri.index(b)
        if (ib - ia) % 3 != 1:
            a, b = b, a
        d = v[b] - v[a]
        nrm = np.array([d[1], -d[0]])       # |d| * outward normal
        m = mesh.n_vertices + ei
        un = [f.ux[k] * nrm[0] + f.uy[k] * nrm[1] for k in (a, m, b)]
        total += (un[0] + 4 * un[1] + un[2]) / 6.0
    return float(total)


def _edge_owner(mesh: Mesh):
    owner = np.full(mesh.n_edges, -1)
    for t, es in enumerate(mesh.tri_edges):
        for e in es:
            owner[e] = t
    return owner
