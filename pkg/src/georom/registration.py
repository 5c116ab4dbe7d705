"""Control-point diffeomorphic registration under a currents data term.

The velocity field is v(x, t) = sum_i K_V(x, q_i(t)) alpha_i(t) with Gaussian
K_V and piecewise-constant momenta on ``n_steps`` uniform steps of [0, 1].
Control points q are the reference boundary points themselves, so the
deformed reference shape is simply the final control-point configuration.
Time stepping is explicit midpoint (RK2); the gradient is the exact adjoint
of that discrete scheme.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .currents import (KernelConfig, currents_from_points, dissimilarity_and_grad,
                       gauss_matrix, to_currents)
from .errors import NumericalError
from .shapes import Shape

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegistrationConfig:
    kernel: KernelConfig = field(default_factory=KernelConfig)
    n_steps: int = 10
    data_weight: float | None = None   # None -> 1/(0.01 * reference diagonal)^2
    max_iters: int = 200
    grad_tol: float = 1e-6
    ftol: float = 1e-12                # relative stall tolerance of the quasi-Newton loop
    history: int = 10                  # L-BFGS memory

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.data_weight is not None and self.data_weight <= 0:
            raise ValueError("data_weight must be positive")
        if self.grad_tol <= 0 or self.ftol <= 0 or self.max_iters < 0:
            raise ValueError("tolerances must be positive")

    def weight_for(self, ref: Shape):
        if self.data_weight is not None:
            return float(self.data_weight)
        eps = 0.01 * ref.bounding_diagonal()
        return 1.0 / eps**2


@dataclass(frozen=True, eq=False)
class DiffeoRecord:
    cp_initial: np.ndarray
    cp_trajectory: np.ndarray      # (n_steps + 1, N, 2)
    momenta: np.ndarray            # (n_steps, N, 2)
    lambda_v: float
    residual: float
    energy: float
    initial_residual: float = float("nan")
    converged: bool = True
    n_iters: int = 0
    objective_history: tuple = ()

    @property
    def n_steps(self):
        return self.momenta.shape[0]

    @property
    def cp_final(self):
        return self.cp_trajectory[-1]


def _velocity(y, x, a, lam):
    return gauss_matrix(y, x, lam) @ a


def _check_finite(v, what):
    if not np.all(np.isfinite(v)):
        raise NumericalError(f"non-finite {what}; momenta are diverging")


def flow_forward(cp_initial, momenta, lambda_v, n_steps=None, return_midpoints=False):
    """RK2 trajectory of the control points, shape (n_steps + 1, N, 2)."""
    x = np.asarray(cp_initial, dtype=float)
    a = np.asarray(momenta, dtype=float)
    n_steps = a.shape[0] if n_steps is None else n_steps
    if a.shape != (n_steps, len(x), 2):
        raise ValueError(f"momenta shape {a.shape} != ({n_steps}, {len(x)}, 2)")
    dt = 1.0 / n_steps
    traj = np.empty((n_steps + 1, len(x), 2))
    mids = np.empty((n_steps, len(x), 2))
    traj[0] = x
    for k in range(n_steps):
        with np.errstate(over="ignore", invalid="ignore"):
            h = x + 0.5 * dt * _velocity(x, x, a[k], lambda_v)
            x = x + dt * _velocity(h, h, a[k], lambda_v)
        _check_finite(x, "control-point velocity")
        mids[k] = h
        traj[k + 1] = x
    return (traj, mids) if return_midpoints else traj


def _midpoints(d: DiffeoRecord):
    dt = 1.0 / d.n_steps
    return np.stack([d.cp_trajectory[k] + 0.5 * dt * _velocity(d.cp_trajectory[k], d.cp_trajectory[k],
                                                               d.momenta[k], d.lambda_v)
                     for k in range(d.n_steps)])


def transport_points(points, diffeo: DiffeoRecord):
    """Carry passive points through the flow with the same RK2 scheme."""
    y = np.array(points, dtype=float).reshape(-1, 2)
    dt = 1.0 / diffeo.n_steps
    lam = diffeo.lambda_v
    mids = _midpoints(diffeo)
    for k in range(diffeo.n_steps):
        x = diffeo.cp_trajectory[k]
        a = diffeo.momenta[k]
        hy = y + 0.5 * dt * _velocity(y, x, a, lam)
        y = y + dt * _velocity(hy, mids[k], a, lam)
    _check_finite(y, "transported points")
    return y


def transport_points_inverse(points, diffeo: DiffeoRecord, tol=1e-13, max_iter=200):
    """Pull points back through the flow by inverting each RK2 step in
    reverse order (fixed-point iteration on the step map)."""
    z = np.array(points, dtype=float).reshape(-1, 2)
    dt = 1.0 / diffeo.n_steps
    lam = diffeo.lambda_v
    mids = _midpoints(diffeo)
    for k in reversed(range(diffeo.n_steps)):
        x = diffeo.cp_trajectory[k]
        a = diffeo.momenta[k]
        y = z.copy()
        for _ in range(max_iter):
            hy = y + 0.5 * dt * _velocity(y, x, a, lam)
            y_new = z - dt * _velocity(hy, mids[k], a, lam)
            done = np.max(np.abs(y_new - y)) < tol
            y = y_new
            if done:
                break
        else:
            raise NumericalError("reverse flow step did not converge")
        z = y
    return z


def _vjp_pos(h, a, g, lam):
    """Gradient wrt h of sum_i g_i . (K(h, h) a)_i."""
    K = gauss_matrix(h, h, lam)
    A = (g @ a.T) * K
    S = A + A.T
    return (-2.0 / lam) * (S.sum(1)[:, None] * h - S @ h)


def energy_of(cp_initial, momenta, lambda_v):
    n_steps = momenta.shape[0]
    _, mids = flow_forward(cp_initial, momenta, lambda_v, return_midpoints=True)
    dt = 1.0 / n_steps
    return float(sum(dt * np.sum(momenta[k] * (gauss_matrix(mids[k], mids[k], lambda_v) @ momenta[k]))
                     for k in range(n_steps)))


def objective_and_gradient(momenta, ref: Shape, target: Shape, cfg: RegistrationConfig,
                           _target_currents=None):
    """J = w * D(phi(ref), target) + sum_k dt alpha_k^T K alpha_k and dJ/dalpha."""
    a = np.asarray(momenta, dtype=float)
    x0 = ref.points
    lam_v = cfg.kernel.lambda_v
    n = cfg.n_steps
    dt = 1.0 / n
    w = cfg.weight_for(ref)
    tgt = _target_currents if _target_currents is not None else to_currents(target)

    traj, mids = flow_forward(x0, a, lam_v, n, return_midpoints=True)
    Ks = [gauss_matrix(mids[k], mids[k], lam_v) for k in range(n)]
    energy = sum(dt * np.sum(a[k] * (Ks[k] @ a[k])) for k in range(n))
    data, g_x = dissimilarity_and_grad(traj[-1], tgt, cfg.kernel.lambda_w)
    J = w * data + energy
    if not np.isfinite(J):
        raise NumericalError("non-finite registration objective")

    grad = np.empty_like(a)
    p = w * g_x
    for k in reversed(range(n)):
        h, x, ak, K = mids[k], traj[k], a[k], Ks[k]
        g_h = _vjp_pos(h, ak, dt * p + dt * ak, lam_v)
        Kx = gauss_matrix(x, x, lam_v)
        grad[k] = dt * (K @ p) + 2.0 * dt * (K @ ak) + 0.5 * dt * (Kx @ g_h)
        p = p + g_h + _vjp_pos(x, ak, 0.5 * dt * g_h, lam_v)
    return float(J), grad, float(data), float(energy)


def register(ref: Shape, target: Shape, cfg: RegistrationConfig | None = None,
             momenta0=None) -> DiffeoRecord:
    """Minimise the registration objective from zero momenta with L-BFGS."""
    cfg = cfg or RegistrationConfig()
    if len(ref) != len(target):
        raise ValueError(f"point count mismatch: ref {len(ref)} vs target {len(target)}")
    n, N = cfg.n_steps, len(ref)
    tgt = to_currents(target)
    shape = (n, N, 2)
    x_init = np.zeros(shape) if momenta0 is None else np.asarray(momenta0, dtype=float).reshape(shape)

    cache = {}

    def fun(z):
        J, g, d, e = objective_and_gradient(z.reshape(shape), ref, target, cfg, tgt)
        cache[z.tobytes()] = (d, e)
        return J, g.ravel()

    J0, g0 = fun(x_init.ravel())
    d0 = cache[x_init.tobytes()][0]
    history = [J0]
    if np.max(np.abs(g0)) < cfg.grad_tol:
        z, nit, ok = x_init.ravel(), 0, True
    else:
        def cb(intermediate_result):
            history.append(float(intermediate_result.fun))

        res = minimize(fun, x_init.ravel(), jac=True, method="L-BFGS-B", callback=cb,
                       options=dict(maxiter=cfg.max_iters, gtol=cfg.grad_tol, ftol=cfg.ftol,
                                    maxcor=cfg.history, maxls=40))
        z, nit = res.x, int(res.nit)
        # best iterate: scipy returns the last accepted point, which is the best
        ok = bool(res.success)
        if not ok:
            log.info("registration stopped without convergence: %s", res.message)
    a = z.reshape(shape)
    traj = flow_forward(ref.points, a, cfg.kernel.lambda_v, n)
    key = z.tobytes()
    if key not in cache:
        fun(z)
    d, e = cache[key]
    return DiffeoRecord(cp_initial=ref.points.copy(), cp_trajectory=traj, momenta=a.copy(),
                        lambda_v=cfg.kernel.lambda_v, residual=max(d, 0.0), energy=e,
                        initial_residual=d0, converged=ok, n_iters=nit,
                        objective_history=tuple(history))


def deformed_shape(ref: Shape, d: DiffeoRecord) -> Shape:
    return ref.with_points(d.cp_final)


__all__ = ["RegistrationConfig", "DiffeoRecord", "flow_forward", "transport_points",
           "transport_points_inverse", "objective_and_gradient", "register", "energy_of",
           "deformed_shape", "currents_from_points"]
