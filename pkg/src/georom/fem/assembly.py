"""Pulled-back steady Navier-Stokes forms on the reference mesh.

With x = X(xi) and J = dX/dxi, the physical problem on X(Omega_ref) becomes,
on the reference domain,

    a(u, w)    = int grad(u_k) . kappa grad(w_k)          kappa = nu J^-1 J^-T det J
    c(u; u, w) = int (zeta u) . grad(u_k) w_k             zeta  = J^-1 det J
    b(w, p)    = -int p zeta_ik d_i w_k

Unknowns are ordered [ux (P2 nodes), uy (P2 nodes), p (vertices)].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..errors import FoldError
from ..mapping import IdentityMapping, mapping_jacobian
from ..mesh import Mesh
from .elements import barycentric_gradients, p1_values, p2_gradients, p2_values
from .quadrature import BARY, WEIGHTS


@dataclass(frozen=True, eq=False)
class PullbackCoefficients:
    kappa: np.ndarray     # (nt, nq, 2, 2)
    zeta: np.ndarray      # (nt, nq, 2, 2)
    detJ: np.ndarray      # (nt, nq)


@dataclass(frozen=True, eq=False)
class ElementData:
    """Geometry-only quantities of a reference mesh, cached between solves."""
    conn2: np.ndarray     # (nt, 6)
    conn1: np.ndarray     # (nt, 3)
    phi: np.ndarray       # (nq, 6)
    psi: np.ndarray       # (nq, 3)
    dphi: np.ndarray      # (nt, nq, 6, 2)
    wdx: np.ndarray       # (nt, nq) weight * area
    xq: np.ndarray        # (nt, nq, 2) quadrature points
    n_p2: int
    n_v: int

    @property
    def n_dofs(self):
        return 2 * self.n_p2 + self.n_v


def element_data(mesh: Mesh) -> ElementData:
    grad_lam, area = barycentric_gradients(mesh.vertices, mesh.triangles)
    P = mesh.vertices[mesh.triangles]
    xq = np.einsum("qi,tik->tqk", BARY, P)
    return ElementData(conn2=mesh.p2_connectivity(), conn1=np.asarray(mesh.triangles),
                       phi=p2_values(BARY), psi=p1_values(BARY),
                       dphi=p2_gradients(BARY, grad_lam), wdx=area[:, None] * WEIGHTS[None, :],
                       xq=xq, n_p2=mesh.n_p2, n_v=mesh.n_vertices)


def pullback_coefficients(mapping, mesh: Mesh, nu, ed: ElementData | None = None) -> PullbackCoefficients:
    ed = ed or element_data(mesh)
    nt, nq = ed.wdx.shape
    if isinstance(mapping, IdentityMapping) or mapping is None:
        eye = np.broadcast_to(np.eye(2), (nt, nq, 2, 2))
        return PullbackCoefficients(nu * eye, eye.copy(), np.ones((nt, nq)))
    J, det = mapping_jacobian(mapping, ed.xq.reshape(-1, 2))
    bad = np.flatnonzero(det <= 0)
    if bad.size:
        pts = ed.xq.reshape(-1, 2)[bad]
        raise FoldError(f"mapping folds (detJ <= 0) at {bad.size} quadrature points, "
                        f"first at xi={pts[0].tolist()}", points=pts)
    # J^-1 det J is the adjugate
    adj = np.empty_like(J)
    adj[:, 0, 0] = J[:, 1, 1]
    adj[:, 1, 1] = J[:, 0, 0]
    adj[:, 0, 1] = -J[:, 0, 1]
    adj[:, 1, 0] = -J[:, 1, 0]
    kappa = nu * np.einsum("qik,qjk->qij", adj, adj) / det[:, None, None]
    return PullbackCoefficients(kappa.reshape(nt, nq, 2, 2), adj.reshape(nt, nq, 2, 2),
                                det.reshape(nt, nq))


def _coo(rows, cols, vals, shape):
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()


class Assembler:
    """Vectorised residual/tangent assembly for one mesh + coefficient set."""

    def __init__(self, mesh: Mesh, coeffs: PullbackCoefficients, ed: ElementData | None = None):
        self.mesh = mesh
        self.ed = ed = ed or element_data(mesh)
        self.coeffs = coeffs
        n2, nv = ed.n_p2, ed.n_v
        self.n2, self.nv = n2, nv
        self.N = 2 * n2 + nv
        c2, c1 = ed.conn2, ed.conn1
        self._r22 = np.repeat(c2[:, :, None], 6, axis=2)
        self._c22 = np.repeat(c2[:, None, :], 6, axis=1)
        self._r12 = np.repeat(c1[:, :, None], 6, axis=2)
        self._c12 = np.repeat(c2[:, None, :], 3, axis=1)
        w = ed.wdx
        # diffusion: sum_q w grad(phi_a) . kappa grad(phi_b)
        kd = np.einsum("tqij,tqbj->tqbi", coeffs.kappa, ed.dphi)
        self.Dloc = np.einsum("tq,tqai,tqbi->tab", w, ed.dphi, kd)
        # zeta^T grad(phi_b): gz[t,q,b,k] = sum_i zeta_ik d_i phi_b
        self.gz = np.einsum("tqik,tqbi->tqbk", coeffs.zeta, ed.dphi)
        # b(w, p) = -int psi_c gz[b, k]
        self.Bloc = [-np.einsum("tq,qc,tqb->tcb", w, ed.psi, self.gz[..., k]) for k in range(2)]
        D = _coo(self._r22, self._c22, self.Dloc, (n2, n2))
        Bx = _coo(self._r12, self._c12, self.Bloc[0], (nv, n2))
        By = _coo(self._r12, self._c12, self.Bloc[1], (nv, n2))
        self.stokes = sp.bmat([[D, None, Bx.T], [None, D, By.T], [Bx, By, None]], format="csr")

    def split(self, U):
        n2 = self.n2
        return U[:n2], U[n2:2 * n2], U[2 * n2:]

    def _convection(self, U, newton):
        ed, w = self.ed, self.ed.wdx
        ux, uy, _ = self.split(U)
        c2 = ed.conn2
        uq = np.stack([ux[c2] @ ed.phi.T, uy[c2] @ ed.phi.T], axis=-1)        # (nt, nq, 2)
        beta = np.einsum("tqik,tqk->tqi", self.coeffs.zeta, uq)            # zeta u
        # Oseen block: sum_q w phi_a (beta . grad phi_b)
        bg = np.einsum("tqi,tqbi->tqb", beta, ed.dphi)
        C = np.einsum("tq,qa,tqb->tab", w, ed.phi, bg)
        blocks = {"C": C}
        if newton:
            # grad u_k at q: gu[t,q,k,i]
            gu = np.stack([np.einsum("ta,tqai->tqi", ux[c2], ed.dphi),
                           np.einsum("ta,tqai->tqi", uy[c2], ed.dphi)], axis=2)
            G = np.einsum("tqki,tqim->tqkm", gu, self.coeffs.zeta)            # (grad u zeta)[k, m]
            M = np.einsum("tq,qa,qb->tqab", w, ed.phi, ed.phi)
            blocks["E"] = np.einsum("tqab,tqkm->tkmab", M, G)
        return blocks

    def convection_matrix(self, U):
        C = self._convection(U, newton=False)["C"]
        Cm = _coo(self._r22, self._c22, C, (self.n2, self.n2))
        return sp.block_diag([Cm, Cm, sp.csr_matrix((self.nv, self.nv))], format="csr")

    def residual(self, U):
        return self.stokes @ U + self.convection_matrix(U) @ U

    def residual_and_tangent(self, U):
        blk = self._convection(U, newton=True)
        n2, nv = self.n2, self.nv
        Cm = _coo(self._r22, self._c22, blk["C"], (n2, n2))
        E = blk["E"]
        Eb = [[_coo(self._r22, self._c22, E[:, k, m], (n2, n2)) for m in range(2)] for k in range(2)]
        Z = sp.csr_matrix((nv, nv))
        conv = sp.bmat([[Cm + Eb[0][0], Eb[0][1], None], [Eb[1][0], Cm + Eb[1][1], None],
                        [None, None, Z]], format="csr")
        picard = sp.block_diag([Cm, Cm, Z], format="csr")
        R = self.stokes @ U + picard @ U
        return R, (self.stokes + conv).tocsr()


def assemble(mesh: Mesh, coeffs: PullbackCoefficients, U, ed: ElementData | None = None):
    """(residual, tangent) of the discrete system at the state vector ``U``."""
    return Assembler(mesh, coeffs, ed).residual_and_tangent(np.asarray(U, dtype=float))
