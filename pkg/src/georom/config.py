"""Run configuration: plain-text ``key = value`` files with ``--set`` overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .currents import KernelConfig
from .fem import BoundaryConditions, FluidProps, SolverConfig
from .registration import RegistrationConfig

CASES = ("stenosis", "bifurcation")

# per-case defaults that differ from the dataclass defaults
CASE_DEFAULTS = {
    "stenosis": {"lambda_w": 1.0, "resolution": 2.0 / 7.0},
    "bifurcation": {"lambda_w": 1.6, "resolution": 0.25},
}


@dataclass(frozen=True)
class RunConfig:
    case: str = "stenosis"
    n_samples: int = 120
    n_train: int = 100
    n_val: int = 0
    n_test: int = 20
    seed: int = 20240101
    lambda_w: float | None = None
    lambda_v: float | None = None
    n_steps: int = 10
    max_iters: int = 200
    grad_tol: float = 1e-6
    data_weight: float | None = None
    lbfgs_history: int = 10
    energy_geo: float = 0.999
    energy_ux: float = 0.999
    energy_uy: float = 0.999
    energy_p: float = 0.999
    center_fields: bool = True   # subtract the training mean before the flow POD
    resolution: float | None = None
    mu: float = 3.5e-3
    rho: float = 1.06e-3
    u_max: float = 200.0
    newton_rtol: float = 1e-10
    newton_atol: float = 1e-12
    newton_max_iter: int = 25
    min_reduction: float = 0.99   # registration quality gate for training samples
    jobs: int = 1

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"case must be one of {CASES}, got {self.case!r}")
        for k, v in CASE_DEFAULTS[self.case].items():
            if getattr(self, k) is None:
                object.__setattr__(self, k, v)
        if self.n_train + self.n_val + self.n_test != self.n_samples:
            raise ValueError("n_train + n_val + n_test must equal n_samples")
        if self.n_samples < 1 or self.jobs < 1:
            raise ValueError("n_samples and jobs must be >= 1")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    # -- derived component configs --
    def registration(self) -> RegistrationConfig:
        return RegistrationConfig(kernel=KernelConfig(self.lambda_w, self.lambda_v), n_steps=self.n_steps,
                                  data_weight=self.data_weight, max_iters=self.max_iters,
                                  grad_tol=self.grad_tol, history=self.lbfgs_history)

    def fluid(self) -> FluidProps:
        return FluidProps(self.mu, self.rho)

    def bc(self) -> BoundaryConditions:
        return BoundaryConditions(u_max=self.u_max)

    def solver(self) -> SolverConfig:
        return SolverConfig(rtol=self.newton_rtol, atol=self.newton_atol, max_iter=self.newton_max_iter)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_text(self):
        lines = ["# georom run configuration"]
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {'none' if v is None else v!r}".replace("'", ""))
        return "\n".join(lines) + "\n"


def _convert(name, raw):
    types = {f.name: f.type for f in fields(RunConfig)}
    if name not in types:
        raise KeyError(f"unknown config key {name!r}")
    raw = raw.strip()
    t = str(types[name])
    if raw.lower() in ("none", "") and "None" in t:
        return None
    if t.startswith("bool"):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if t.startswith("int"):
        return int(raw)
    if t.startswith("float"):
        return float(raw)
    return raw


def parse_pairs(lines):
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key = value, got {line!r}")
        k, v = line.split("=", 1)
        k = k.strip()
        out[k] = _convert(k, v)
    return out


def load_config(path=None, overrides=(), **kw) -> RunConfig:
    """Defaults <- config file <- keyword arguments <- ``key=value`` overrides."""
    values = {}
    if path is not None:
        values.update(parse_pairs(Path(path).read_text().splitlines()))
    values.update({k: v for k, v in kw.items() if v is not None})
    values.update(parse_pairs(overrides))
    return _with_splits(values)


def _with_splits(values):
    # n_samples may be given alone; keep the default 100/0/20-like proportions
    if "n_samples" in values and not {"n_train", "n_val", "n_test"} & values.keys():
        n = values["n_samples"]
        n_test = max(1, n // 6)
        values.update(n_train=n - n_test, n_val=0, n_test=n_test)
    return RunConfig(**values)
