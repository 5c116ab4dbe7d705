"""``georom`` command-line interface.

Exit codes: 0 success, 1 usage/config error, 2 numerical failure, 3 I/O or
model-format error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .config import load_config
from .errors import ModelFormatError, NumericalError
from .fem.io import write_field_csv, write_vtk
from .mesh import write_gmesh
from .shapes import read_shape_csv, write_shape_csv

log = logging.getLogger("georom")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--out", help="run directory (default: $GEOROM_OUT/<case> or ./georom_out/<case>)")
    p.add_argument("--seed", type=int)
    p.add_argument("--case", choices=("stenosis", "bifurcation"))
    p.add_argument("--jobs", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a configuration key (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    ap = _Parser(prog="georom", description="Geometry-informed POD-RBF reduced-order flow models.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    p = sub.add_parser("shapes", help="generate the sample dataset and reference mesh")
    _common(p)
    p = sub.add_parser("register", help="batch registration and residual report")
    _common(p)
    p.add_argument("--sweep-lambda", help="comma separated lambda_W values")
    p.add_argument("--limit", type=int, help="use only the first N samples")
    p = sub.add_parser("snapshot", help="full-order solves for the training samples")
    _common(p)
    p = sub.add_parser("train", help="offline stage: build and save the ROM")
    _common(p)
    p = sub.add_parser("predict", help="online stage for one shape")
    _common(p)
    p.add_argument("--model", help="model file (default <out>/model.girom)")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--shape", help="shape CSV (x,y,tag)")
    g.add_argument("--sample", type=int, help="sample id from the dataset")
    p = sub.add_parser("validate", help="error/timing report on a split")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--split", choices=("train", "validation", "test"), default="test")
    p.add_argument("--no-fom", action="store_true", help="skip the reference FOM solves")
    p.add_argument("--limit", type=int)
    p = sub.add_parser("report", help="aggregate tables from a validation report")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--input", help="report CSV (default <out>/report.csv)")
    return ap


def _resolve(args):
    kw = dict(seed=args.seed, case=args.case, jobs=args.jobs)
    try:
        cfg = load_config(args.config, args.set, **kw)
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"bad configuration: {exc}") from exc
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get("GEOROM_OUT", "georom_out")) / cfg.case
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    return cfg, out


class _Timer:
    def __init__(self, out):
        self.path = Path(out) / "timing.txt"
        self.rows = []

    def add(self, stage, seconds):
        self.rows.append((stage, seconds))

    def write(self):
        # keep stages recorded by earlier commands in the same run directory
        stages = {}
        if self.path.exists():
            for line in self.path.read_text().splitlines():
                k, sep, v = line.partition(" = ")
                if sep:
                    stages[k] = v
        stages.update({s: f"{t:.6f}" for s, t in self.rows})
        self.path.write_text("".join(f"{k} = {v}\n" for k, v in stages.items()))


def _dataset(cfg, out, ref=None):
    ref = ref or pl.build_reference(cfg)
    params = pl.sample_parameters(cfg)
    return ref, params


def cmd_shapes(args, cfg, out, timer):
    t0 = time.perf_counter()
    ref, params = _dataset(cfg, out)
    write_gmesh(ref.mesh, out / "reference.gmesh")
    write_shape_csv(ref.shape, out / "reference_shape.csv")
    (out / "shapes").mkdir(exist_ok=True)
    for i, row in enumerate(params):
        write_shape_csv(pl.make_shape(ref, row), out / "shapes" / f"sample_{i:04d}.csv")
    pl.write_manifest(out / "manifest.csv", cfg, params)
    timer.add("shapes", time.perf_counter() - t0)
    print(f"{cfg.n_samples} {cfg.case} shapes, {ref.shape.n_points} boundary points, "
          f"FOM dimension {ref.mesh.fom_dimension} -> {out}")
    return EXIT_OK


def cmd_register(args, cfg, out, timer):
    ref, params = _dataset(cfg, out)
    ids = np.arange(cfg.n_samples if args.limit is None else min(args.limit, cfg.n_samples))
    if len(ids) == 0:
        raise UsageError("no samples to register")
    if args.sweep_lambda:
        try:
            lams = [float(v) for v in args.sweep_lambda.split(",") if v.strip()]
        except ValueError as exc:
            raise UsageError(f"bad --sweep-lambda: {exc}") from exc
    else:
        lams = [cfg.lambda_w]
    rows, table = [], []
    for lam in lams:
        c = cfg.replace(lambda_w=lam, lambda_v=cfg.lambda_v if not args.sweep_lambda else None)
        t0 = time.perf_counter()
        res, fails = pl.run_samples(c, ids, params, with_flow=False, cache_dir=out / "cache", ref=ref)
        timer.add(f"register_lambda_{lam:g}", time.perf_counter() - t0)
        if fails:
            sid = min(fails)
            raise NumericalError(f"sample {sid}: {fails[sid]}")
        r = np.array([x.residual for x in res])
        for sid, x in zip(ids, res):
            rows.append([int(sid), lam, x.initial_residual, x.residual, 1.0 - x.residual / x.initial_residual,
                         int(x.converged), x.t_sr])
        table.append((lam, r.mean(), r.std(), len(r)))
    with open(out / "registration.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "lambda_w", "initial_residual", "residual", "reduction", "converged", "t_sr"])
        w.writerows([[a, repr(b), repr(c), repr(d), repr(e), f, repr(g)] for a, b, c, d, e, f, g in rows])
    name = "lambda_sweep.csv" if args.sweep_lambda else "registration_summary.csv"
    with open(out / name, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda_w", "mean_residual", "std_residual", "n"])
        w.writerows([[repr(a), repr(b), repr(c), d] for a, b, c, d in table])
    print(f"{'lambda_W':>10} {'mean residual':>15} {'std':>12} {'n':>4}")
    for lam, m, s, n in table:
        print(f"{lam:>10g} {m:>15.6e} {s:>12.4e} {n:>4d}")
    if len(table) > 1:
        print(f"minimum mean residual at lambda_W = {min(table, key=lambda t: t[1])[0]:g}")
    return EXIT_OK


def cmd_snapshot(args, cfg, out, timer):
    ref, params = _dataset(cfg, out)
    ids = pl.sample_splits(cfg)[0]
    t0 = time.perf_counter()
    res, fails = pl.run_samples(cfg, ids, params, True, out / "cache", ref)
    timer.add("snapshots", time.perf_counter() - t0)
    with open(out / "snapshots.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "status", "residual", "newton_iters", "t_sr", "t_fom"])
        for sid, r in zip(ids, res):
            if r is None:
                w.writerow([sid, fails[int(sid)], "", "", "", ""])
            else:
                w.writerow([sid, "ok", repr(r.residual), r.newton_iters, repr(r.t_sr), repr(r.t_fom)])
    if fails:
        sid = min(fails)
        raise NumericalError(f"sample {sid}: {fails[sid]}")
    print(f"{len(ids)} snapshots of dimension {ref.mesh.fom_dimension} in {out / 'cache'}")
    return EXIT_OK


def cmd_train(args, cfg, out, timer):
    t0 = time.perf_counter()
    model, results, tm = pl.offline_train(cfg, out)
    path = pl.save_model(model, out / "model.girom")
    for k, v in tm.items():
        timer.add(f"train_{k}", v)
    timer.add("train_total", time.perf_counter() - t0)
    with open(out / "train_report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "initial_residual", "residual", "converged", "newton_iters", "t_sr", "t_fom"])
        for sid, r in zip(pl.sample_splits(cfg)[0], results):
            w.writerow([sid, repr(r.initial_residual), repr(r.residual), int(r.converged), r.newton_iters,
                        repr(r.t_sr), repr(r.t_fom)])
    print(f"model {path}: geometry rank {model.Q.rank}, flow ranks "
          + ", ".join(f"{k} {model.phi[k].rank}" for k in pl.FIELDS))
    print(f"sha256 {pl.file_digest(path)}")
    return EXIT_OK


def _model_path(args, out):
    return Path(args.model) if args.model else out / "model.girom"


def cmd_predict(args, cfg, out, timer):
    model = pl.load_model(_model_path(args, out))
    if args.shape:
        shape = read_shape_csv(args.shape)
        tag = Path(args.shape).stem
    else:
        if not 0 <= args.sample < cfg.n_samples:
            raise UsageError(f"sample id {args.sample} outside 0..{cfg.n_samples - 1}")
        ref = pl.build_reference(cfg)
        shape = pl.make_shape(ref, pl.sample_parameters(cfg)[args.sample])
        tag = f"sample_{args.sample:04d}"
    pred = pl.online_predict(model, shape)
    d = pred.diagnostics
    timer.add("predict_registration", d["t_sr"])
    timer.add("predict_rom", d["t_rom"])
    timer.add("predict_push_forward", d["t_push"])
    write_vtk(pred.field, out / f"prediction_{tag}.vtk", points=pred.vertices)
    write_field_csv(pred.field, out / f"prediction_{tag}.csv", points=pred.vertices)
    print(f"registration residual {d['residual']:.3e} (converged={d['converged']}), "
          f"t_sr {d['t_sr']:.3f} s, t_rom {d['t_rom']:.2e} s")
    return EXIT_OK


def cmd_validate(args, cfg, out, timer):
    model = pl.load_model(_model_path(args, out))
    tr, va, te = pl.sample_splits(cfg)
    ids = {"train": tr, "validation": va, "test": te}[args.split]
    if args.limit is not None:
        ids = ids[: args.limit]
    if len(ids) == 0:
        raise UsageError(f"{args.split} split is empty")
    ref = pl.build_reference(cfg)
    params = pl.sample_parameters(cfg)
    shapes = [pl.make_shape(ref, params[i]) for i in ids]
    t0 = time.perf_counter()
    rows = pl.validate(model, shapes, reference_solver=not args.no_fom, sample_ids=ids, cfg=cfg)
    timer.add("validate", time.perf_counter() - t0)
    pl.write_report(rows, out / "report.csv")
    _print_summary(rows)
    return EXIT_OK


def _print_summary(rows):
    s = pl.summarize(rows)
    print(f"{'field':>5} {'eps_rb mean':>12} {'sd':>10} {'eps_pod mean':>13} {'sd':>10}")
    for k, v in s.items():
        print(f"{k:>5} {100 * v['eps_rb_mean']:>11.3f}% {100 * v['eps_rb_std']:>9.3f}% "
              f"{100 * v['eps_pod_mean']:>12.3f}% {100 * v['eps_pod_std']:>9.3f}%")


def cmd_report(args, cfg, out, timer):
    t0 = time.perf_counter()
    src = Path(args.input) if args.input else out / "report.csv"
    rows = pl.read_report(src)
    if not rows:
        raise UsageError("report is empty")
    lines = []
    mp = _model_path(args, out)
    if mp.exists():
        m = pl.load_model(mp)
        lines.append(f"dimension of FOM: {m.mesh.fom_dimension}")
        lines.append("dimension of ROM: " + ", ".join(f"{k} {m.phi[k].rank}" for k in pl.FIELDS)
                     + f"; geometry {m.Q.rank}")
    s = pl.summarize(rows)
    for k, v in s.items():
        lines.append(f"{k}: eps_rb {100 * v['eps_rb_mean']:.3f} +- {100 * v['eps_rb_std']:.3f}%, "
                     f"eps_pod {100 * v['eps_pod_mean']:.3f} +- {100 * v['eps_pod_std']:.3f}%")
    per = {}
    for r in rows:
        per.setdefault(r["sample_id"], r)
    t = np.array([[r["t_sr"], r["t_rom"], r["t_fom"]] for r in per.values()])
    lines.append(f"time per sample: registration {np.nanmean(t[:, 0]):.4g} s, ROM {np.nanmean(t[:, 1]):.4g} s"
                 + (f", FOM {np.nanmean(t[:, 2]):.4g} s" if np.any(np.isfinite(t[:, 2])) else ""))
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    timer.add("report", time.perf_counter() - t0)
    print(text, end="")
    return EXIT_OK


COMMANDS = {"shapes": cmd_shapes, "register": cmd_register, "snapshot": cmd_snapshot, "train": cmd_train,
            "predict": cmd_predict, "validate": cmd_validate, "report": cmd_report}


def run(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg, out = _resolve(args)
        timer = _Timer(out)
        try:
            return COMMANDS[args.command](args, cfg, out, timer)
        finally:
            timer.write()
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"georom: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ModelFormatError, OSError) as exc:
        print(f"georom: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
