"""Offline training and online prediction of the geometry-informed ROM.

offline: register every training shape to the reference, take the CP
displacements as geometric parameters, fit the RBF mapping, solve the
pulled-back flow problem on the reference mesh, then POD-compress geometry
and flow and fit the reduced-coefficient interpolator.

online: register the new shape, project its displacements on the geometry
basis, interpolate flow coefficients, reconstruct, and carry the fields to
the forward-mapped reference nodes.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import container, rbf
from .config import RunConfig
from .currents import KernelConfig
from .errors import (DegenerateDatasetError, FoldError, GeoromError, ModelFormatError,
                     NewtonDivergenceError, SampleFailure, UnsupportedVersionError)
from .fem import FlowField, FluidProps, BoundaryConditions, SolverConfig, element_data, solve_flow
from .fem.solver import snapshots_to_field
from .mapping import eval_mapping, fit_mapping, geometric_parameters
from .mesh import Mesh, extract_boundary_cps, generate_reference_mesh
from .registration import DiffeoRecord, RegistrationConfig, register
from .rom import (PodBasis, pod, pod_project, pod_projection_error, pod_reconstruct,
                  relative_l2_error)
from .shapes import (BIFURCATION_RANGES, STENOSIS_RANGES, BifurcationParams, Shape, StenosisParams,
                     bifurcation_base, generate_bifurcation_shape, generate_stenosis_shape,
                     latin_hypercube, split_samples)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
FIELDS = ("ux", "uy", "p")
CASE_CODE = {"stenosis": 0, "bifurcation": 1}


# --- reference setup and dataset ------------------------------------------------

@dataclass(frozen=True, eq=False)
class Reference:
    case: str
    mesh: Mesh
    shape: Shape          # ordered boundary CPs of the mesh
    base: Shape | None = None   # bifurcation generator base (same points as ``shape``)


def build_reference(cfg: RunConfig) -> Reference:
    mesh = generate_reference_mesh(cfg.case, cfg.resolution)
    shape = extract_boundary_cps(mesh)
    base = bifurcation_base(cfg.resolution) if cfg.case == "bifurcation" else None
    return Reference(cfg.case, mesh, shape, base)


def sample_parameters(cfg: RunConfig):
    ranges = STENOSIS_RANGES if cfg.case == "stenosis" else BIFURCATION_RANGES
    return latin_hypercube(cfg.n_samples, ranges, cfg.seed)


def sample_splits(cfg: RunConfig):
    return split_samples(cfg.n_samples, cfg.n_train, cfg.n_val, cfg.n_test)


def make_shape(ref: Reference, params) -> Shape:
    if ref.case == "stenosis":
        return generate_stenosis_shape(StenosisParams.from_array(params), ref.shape.n_points)
    return generate_bifurcation_shape(BifurcationParams.from_array(params), ref.base)


def write_manifest(path, cfg: RunConfig, params):
    tr, va, te = sample_splits(cfg)
    split = np.empty(cfg.n_samples, dtype=object)
    split[tr], split[va], split[te] = "train", "validation", "test"
    names = (["sigma1", "sigma2", "mu1", "mu2"] if cfg.case == "stenosis"
             else [f"d{i}{c}" for i in range(4) for c in "xy"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "split", *names, "shape_csv", "artifact"])
        for i, row in enumerate(params):
            w.writerow([i, split[i], *[repr(float(v)) for v in row], f"shapes/sample_{i:04d}.csv",
                        f"cache/{sample_key(cfg, row)}.npz"])


# --- per-sample offline work ------------------------------------------------------

def sample_key(cfg: RunConfig, params, kind="snapshot"):
    """Content hash of everything a per-sample artifact depends on."""
    blob = {
        "kind": kind, "case": cfg.case, "params": [float(v).hex() for v in np.asarray(params).ravel()],
        "resolution": float(cfg.resolution).hex(),
        "reg": [cfg.lambda_w, cfg.lambda_v, cfg.n_steps, cfg.max_iters, cfg.grad_tol, cfg.data_weight,
                cfg.lbfgs_history],
    }
    if kind == "snapshot":
        blob["flow"] = [cfg.mu, cfg.rho, cfg.u_max, cfg.newton_rtol, cfg.newton_atol, cfg.newton_max_iter]
    return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()[:24]


@dataclass
class SampleResult:
    gamma: np.ndarray
    residual: float
    initial_residual: float
    converged: bool
    t_sr: float
    snapshot: dict | None = None      # ux, uy, p
    t_fom: float = float("nan")
    newton_iters: int = -1

    def to_npz(self, path):
        d = dict(gamma=self.gamma, residual=self.residual, initial_residual=self.initial_residual,
                 converged=self.converged, t_sr=self.t_sr, t_fom=self.t_fom, newton_iters=self.newton_iters)
        if self.snapshot is not None:
            d.update({f"snap_{k}": v for k, v in self.snapshot.items()})
        tmp = Path(str(path) + ".tmp.npz")
        np.savez(tmp, **d)
        tmp.replace(path)

    @classmethod
    def from_npz(cls, path):
        with np.load(path) as z:
            snap = {k: z[f"snap_{k}"] for k in FIELDS} if "snap_ux" in z.files else None
            return cls(z["gamma"], float(z["residual"]), float(z["initial_residual"]), bool(z["converged"]),
                       float(z["t_sr"]), snap, float(z["t_fom"]), int(z["newton_iters"]))


def registration_ok(res: SampleResult, cfg: RunConfig):
    """Quality gate: converged, or dissimilarity reduced by ``min_reduction``."""
    if res.converged:
        return True
    return res.residual <= (1.0 - cfg.min_reduction) * res.initial_residual


def run_sample(ref: Reference, cfg: RunConfig, sample_id, params, with_flow=True, ed=None) -> SampleResult:
    target = make_shape(ref, params)
    t0 = time.perf_counter()
    d = register(ref.shape, target, cfg.registration())
    t_sr = time.perf_counter() - t0
    gamma = geometric_parameters(ref.shape.points, d.cp_final)
    res = SampleResult(gamma, d.residual, d.initial_residual, d.converged, t_sr)
    if not with_flow:
        return res
    X = fit_mapping(ref.shape.points, d.cp_final)
    t0 = time.perf_counter()
    f = solve_flow(ref.mesh, X, cfg.fluid(), cfg.bc(), cfg.solver(), ed=ed)
    res.t_fom = time.perf_counter() - t0
    res.snapshot = {"ux": f.ux, "uy": f.uy, "p": f.p}
    res.newton_iters = f.n_newton
    return res


_WORKER = {}


def _worker_init(cfg: RunConfig):
    ref = build_reference(cfg)
    _WORKER.update(cfg=cfg, ref=ref, ed=element_data(ref.mesh))


def _worker_task(job):
    sample_id, params, with_flow, path = job
    cfg, ref, ed = _WORKER["cfg"], _WORKER["ref"], _WORKER["ed"]
    try:
        res = run_sample(ref, cfg, sample_id, params, with_flow, ed)
    except GeoromError as exc:
        return sample_id, None, f"{type(exc).__name__}: {exc}"
    if path is not None:
        res.to_npz(path)
    return sample_id, res, None


def run_samples(cfg: RunConfig, ids, params, with_flow=True, cache_dir=None, ref=None):
    """Per-sample results in ``ids`` order, reusing cached artifacts.

    Failures do not stop other samples; they come back as a dict of
    sample id -> message so the caller can abort with full diagnostics.
    """
    results, failures, todo = {}, {}, []
    kind = "snapshot" if with_flow else "geometry"
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)
    for i in ids:
        path = None
        if cache_dir is not None:
            path = cache_dir / f"{sample_key(cfg, params[i], kind)}.npz"
            if path.exists():
                try:
                    results[i] = SampleResult.from_npz(path)
                    continue
                except (OSError, KeyError, ValueError):
                    log.warning("unreadable cache entry %s, recomputing", path)
        todo.append((int(i), params[i], with_flow, path))
    if todo:
        if cfg.jobs > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(todo)), initializer=_worker_init,
                                     initargs=(cfg,)) as ex:
                outs = list(ex.map(_worker_task, todo))
        else:
            if ref is None:
                _worker_init(cfg)
            else:
                _WORKER.update(cfg=cfg, ref=ref, ed=element_data(ref.mesh))
            outs = [_worker_task(j) for j in todo]
        for sid, res, err in outs:
            if err is None:
                results[sid] = res
            else:
                failures[sid] = err
    return [results.get(int(i)) for i in ids], failures


# --- trained model --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TrainedModel:
    mesh: Mesh
    cp_ref: np.ndarray
    Q: PodBasis
    phi: dict                     # field -> PodBasis
    interp: dict                  # field -> CubicRbf from gamma_rb to coefficients
    reg: RegistrationConfig
    provenance: dict

    @property
    def ref_shape(self):
        return self._ref_shape

    def __post_init__(self):
        # labels of the reference CPs come from the mesh boundary
        object.__setattr__(self, "_ref_shape", extract_boundary_cps(self.mesh))
        if not np.array_equal(self._ref_shape.points, self.cp_ref):
            raise ModelFormatError("reference CPs do not match the mesh boundary")


def aggregate(mesh, cp_ref, gammas, snaps, cfg: RunConfig, sample_count=None) -> TrainedModel:
    """Geometry POD, flow POD and coefficient RBF from per-sample matrices."""
    G = np.column_stack(gammas)
    if not np.any(np.abs(G) > 1e-14):
        raise DegenerateDatasetError("all geometric parameter vectors are zero (no shape variation)")
    Q = pod(G, cfg.energy_geo)
    g_rb = pod_project(Q, G).T                     # (N_s, N_k)
    thr = {"ux": cfg.energy_ux, "uy": cfg.energy_uy, "p": cfg.energy_p}
    phi, interp = {}, {}
    for k in FIELDS:
        M = np.column_stack([s[k] for s in snaps])
        phi[k] = pod(M, thr[k], center=cfg.center_fields)
        coeffs = pod_project(phi[k], M).T          # (N_s, N_l)
        interp[k] = rbf.rbf_fit(g_rb, coeffs)
    prov = dict(format_version=FORMAT_VERSION, seed=cfg.seed, n_train=len(gammas),
                n_samples=cfg.n_samples if sample_count is None else sample_count,
                case=cfg.case, energy_geo=cfg.energy_geo, energy_ux=cfg.energy_ux,
                energy_uy=cfg.energy_uy, energy_p=cfg.energy_p, mu=cfg.mu, rho=cfg.rho, u_max=cfg.u_max,
                resolution=cfg.resolution, center_fields=bool(cfg.center_fields))
    return TrainedModel(mesh, np.asarray(cp_ref, float), Q, phi, interp, cfg.registration(), prov)


def offline_train(cfg: RunConfig, out_dir=None, ref: Reference | None = None, train_ids=None,
                  params=None, report=None):
    """Full offline stage. Returns (model, per-sample results, stage timings)."""
    ref = ref or build_reference(cfg)
    params = sample_parameters(cfg) if params is None else params
    if train_ids is None:
        train_ids = sample_splits(cfg)[0]
    if len(train_ids) < 10:
        raise ValueError("offline training needs at least 10 training shapes")
    cache = Path(out_dir) / "cache" if out_dir is not None else None
    t0 = time.perf_counter()
    results, failures = run_samples(cfg, train_ids, params, True, cache, ref)
    t_samples = time.perf_counter() - t0
    for sid in train_ids:
        r = results[list(train_ids).index(sid)]
        if r is not None and not registration_ok(r, cfg):
            failures[int(sid)] = (f"registration not converged (residual {r.residual:.3e}, "
                                  f"initial {r.initial_residual:.3e})")
    if failures:
        sid = min(failures)
        raise SampleFailure(sid, failures[sid])
    t0 = time.perf_counter()
    model = aggregate(ref.mesh, ref.shape.points, [r.gamma for r in results],
                      [r.snapshot for r in results], cfg)
    t_agg = time.perf_counter() - t0
    timings = {
        "samples_wall": t_samples,
        "registration_total": float(sum(r.t_sr for r in results)),
        "fom_total": float(sum(r.t_fom for r in results)),
        "reduction": t_agg,
    }
    return model, results, timings


# --- online -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Prediction:
    field: FlowField              # values at reference nodes
    nodes: np.ndarray             # forward-mapped P2 node positions X(xi)
    vertices: np.ndarray          # forward-mapped vertices
    diffeo: DiffeoRecord
    gamma: np.ndarray
    diagnostics: dict

    @property
    def mesh(self):
        """Deformed reference mesh carrying the predicted field."""
        return self.field.mesh.with_vertices(self.vertices)


def rom_evaluate(model: TrainedModel, gamma):
    """Steps 3-5 of the online stage: gamma -> reduced geometry -> coefficients -> fields."""
    g_rb = pod_project(model.Q, gamma)
    out = {}
    for k in FIELDS:
        c = rbf.rbf_eval(model.interp[k], g_rb)
        out[k] = pod_reconstruct(model.phi[k], c)
    return out


def online_predict(model: TrainedModel, new_shape: Shape) -> Prediction:
    ref_shape = model.ref_shape
    if new_shape.n_points != ref_shape.n_points:
        raise ValueError(f"shape has {new_shape.n_points} points, reference has {ref_shape.n_points}")
    t0 = time.perf_counter()
    d = register(ref_shape, new_shape, model.reg)
    t_sr = time.perf_counter() - t0
    gamma = geometric_parameters(model.cp_ref, d.cp_final)
    t0 = time.perf_counter()
    fields = rom_evaluate(model, gamma)
    t_rom = time.perf_counter() - t0
    t0 = time.perf_counter()
    X = fit_mapping(model.cp_ref, d.cp_final)
    nodes = eval_mapping(X, model.mesh.p2_nodes())
    t_push = time.perf_counter() - t0
    f = snapshots_to_field(fields["ux"], fields["uy"], fields["p"], model.mesh)
    diag = dict(residual=d.residual, initial_residual=d.initial_residual, converged=d.converged,
                t_sr=t_sr, t_rom=t_rom, t_push=t_push, mapping=X)
    return Prediction(f, nodes, nodes[: model.mesh.n_vertices], d, gamma, diag)


REPORT_HEADER = ["sample_id", "field", "eps_rb", "eps_pod", "t_sr", "t_rom", "t_fom"]


def validate(model: TrainedModel, shapes, reference_solver=True, sample_ids=None, cfg: RunConfig | None = None,
             truths=None):
    """Per-sample, per-field errors and timings.

    The truth is the pulled-back FOM solve through the same registration
    (the quantity the ROM is trained on); ``truths`` may supply cached
    snapshots instead. Solver failures are recorded per row.
    """
    if len(shapes) == 0:
        raise ValueError("no shapes to validate")
    sample_ids = list(range(len(shapes))) if sample_ids is None else list(sample_ids)
    if cfg is not None:
        props, bc, scfg = cfg.fluid(), cfg.bc(), cfg.solver()
    else:
        pv = model.provenance
        props, bc, scfg = FluidProps(pv["mu"], pv["rho"]), BoundaryConditions(u_max=pv["u_max"]), SolverConfig()
    ed = element_data(model.mesh)
    rows = []
    for n, (sid, s) in enumerate(zip(sample_ids, shapes)):
        pred = online_predict(model, s)
        dg = pred.diagnostics
        truth, t_fom, err = None, float("nan"), ""
        if truths is not None and truths[n] is not None:
            truth = truths[n]
        elif reference_solver:
            try:
                t0 = time.perf_counter()
                f = solve_flow(model.mesh, dg["mapping"], props, bc, scfg, ed=ed)
                t_fom = time.perf_counter() - t0
                truth = {"ux": f.ux, "uy": f.uy, "p": f.p}
            except (NewtonDivergenceError, FoldError, GeoromError) as exc:
                err = f"{type(exc).__name__}: {exc}"
        for k in FIELDS:
            approx = getattr(pred.field, k)
            if truth is not None:
                e_rb = relative_l2_error(truth[k], approx)
                e_pod = pod_projection_error(model.phi[k], truth[k])
            else:
                e_rb = e_pod = float("nan")
            rows.append(dict(sample_id=sid, field=k, eps_rb=e_rb, eps_pod=e_pod, t_sr=dg["t_sr"],
                             t_rom=dg["t_rom"], t_fom=t_fom, error=err))
    return rows


def summarize(rows):
    out = {}
    for k in FIELDS:
        sel = [r for r in rows if r["field"] == k and np.isfinite(r["eps_rb"])]
        if not sel:
            continue
        e = np.array([r["eps_rb"] for r in sel])
        p = np.array([r["eps_pod"] for r in sel])
        out[k] = dict(eps_rb_mean=float(e.mean()), eps_rb_std=float(e.std()),
                      eps_pod_mean=float(p.mean()), eps_pod_std=float(p.std()), n=len(sel))
    return out


def write_report(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for r in rows:
            w.writerow([r["sample_id"], r["field"]] + [repr(float(r[k])) for k in REPORT_HEADER[2:]])


def read_report(path):
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames != REPORT_HEADER:
            raise ModelFormatError(f"unexpected report header {rd.fieldnames}")
        return [dict(sample_id=int(r["sample_id"]), field=r["field"],
                     **{k: float(r[k]) for k in REPORT_HEADER[2:]}) for r in rd]


# --- persistence ------------------------------------------------------------------

def _split_seed(seed):
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return [float(seed >> 32), float(seed & 0xFFFFFFFF)]


def model_blocks(m: TrainedModel) -> dict:
    mesh = m.mesh
    pv = m.provenance
    k = m.reg.kernel
    reg = [k.lambda_w, k.lambda_v, m.reg.n_steps, np.nan if m.reg.data_weight is None else m.reg.data_weight,
           m.reg.max_iters, m.reg.grad_tol, m.reg.ftol, m.reg.history]
    prov = [pv["format_version"], *_split_seed(pv["seed"]), pv["n_samples"], pv["n_train"],
            CASE_CODE[pv["case"]], pv["energy_geo"], pv["energy_ux"], pv["energy_uy"], pv["energy_p"],
            pv["mu"], pv["rho"], pv["u_max"], pv["resolution"], float(pv["center_fields"])]
    b = {
        "provenance": np.array(prov, dtype=float),
        "registration": np.array(reg, dtype=float),
        "mesh_vertices": mesh.vertices,
        "mesh_triangles": np.asarray(mesh.triangles, dtype=float),
        "mesh_edges": np.asarray(mesh.edges, dtype=float),
        "mesh_edge_tags": np.asarray(mesh.edge_tags, dtype=float),
        "cp_ref": m.cp_ref,
        "Q": m.Q.basis,
        "sv_geo": m.Q.singular_values,
        "rbf_centers": m.interp["ux"].centers,
    }
    for f in FIELDS:
        b[f"Phi_{f}"] = m.phi[f].basis
        b[f"sv_{f}"] = m.phi[f].singular_values
        if m.phi[f].mean is not None:
            b[f"mean_{f}"] = m.phi[f].mean
        b[f"rbf_weights_{f}"] = m.interp[f].weights
        b[f"rbf_poly_{f}"] = m.interp[f].poly
    return b


def save_model(m: TrainedModel, path):
    return container.write_container(path, model_blocks(m))


def _basis(U, s, mean=None):
    s = s.ravel()
    r = U.shape[1]
    return PodBasis(U, s, r, float(np.sum(s[:r] ** 2) / np.sum(s**2)),
                    None if mean is None else mean.ravel().copy())


def load_model(path) -> TrainedModel:
    b = container.read_container(path)
    try:
        prov = b["provenance"].ravel()
        if int(prov[0]) != FORMAT_VERSION:
            raise UnsupportedVersionError(f"model format version {int(prov[0])} is not supported")
        seed = (int(prov[1]) << 32) | int(prov[2])
        case = {v: k for k, v in CASE_CODE.items()}[int(prov[5])]
        pv = dict(format_version=int(prov[0]), seed=seed, n_samples=int(prov[3]), n_train=int(prov[4]),
                  case=case, **{k: float(prov[6 + n]) for n, k in enumerate(
                      ["energy_geo", "energy_ux", "energy_uy", "energy_p", "mu", "rho", "u_max", "resolution"])},
                  center_fields=bool(prov[14]))
        r = b["registration"].ravel()
        r = [float(v) for v in r]
        reg = RegistrationConfig(kernel=KernelConfig(r[0], r[1]), n_steps=int(r[2]),
                                 data_weight=None if np.isnan(r[3]) else r[3], max_iters=int(r[4]),
                                 grad_tol=r[5], ftol=r[6], history=int(r[7]))
        edges = b["mesh_edges"].astype(np.int64)
        tags = b["mesh_edge_tags"].ravel().astype(np.int64)
        mesh = Mesh.build(b["mesh_vertices"], b["mesh_triangles"].astype(np.int64),
                          {(int(e0), int(e1)): int(t) for (e0, e1), t in zip(edges, tags) if t > 0})
        if not np.array_equal(mesh.edges, edges):
            raise ModelFormatError("stored mesh edges are inconsistent")
        Q = _basis(b["Q"], b["sv_geo"])
        phi, interp = {}, {}
        for f in FIELDS:
            phi[f] = _basis(b[f"Phi_{f}"], b[f"sv_{f}"], b.get(f"mean_{f}") if pv["center_fields"] else None)
            if pv["center_fields"] and f"mean_{f}" not in b:
                raise ModelFormatError(f"missing block 'mean_{f}'")
            interp[f] = rbf.CubicRbf(b["rbf_centers"], b[f"rbf_weights_{f}"], b[f"rbf_poly_{f}"])
    except KeyError as exc:
        raise ModelFormatError(f"missing block {exc}") from exc
    return TrainedModel(mesh, b["cp_ref"], Q, phi, interp, reg, pv)


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
