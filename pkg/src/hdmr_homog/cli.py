"""Command-line front end.

    hdmr-homog sample   CONFIG --count N --seed S --out data.csv
    hdmr-homog train    --data data.csv --arch L,d,N --seed S --out model.json
    hdmr-homog micro    CONFIG --Fbar f11,f12,f21,f22 [--export fields.csv] [--verify]
    hdmr-homog macro    CONFIG --provider surrogate|nested|direct --out solution.csv
    hdmr-homog validate projection|laminate|toy1d|derivatives

Exit codes: 0 success, 1 computational failure, 2 usage error.
"""
import argparse
import json
import logging
import os
import sys
import time

import jsonschema
import numpy as np

from . import dataset as ds
from . import fem, micro, oracles, surrogate
from .errors import FormatError, HomogError
from .materials import NeoHookeanA, NeoHookeanB, material_from_dict
from .tensor import tensor4_to_matrix

log = logging.getLogger("hdmr_homog")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

# desk-scale defaults; --paper-scale switches to the published table values
DESK = {"grid": 31, "count": 2000, "L": 5, "N": 10}
PAPER = {"count": 200_000, "L": 15, "N": 20, "records": {"laminate": 50_000, "inclusion": 30_000, "toy1d": 1000}}

_NUM = {"type": "number"}
_MATERIAL = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"model": {"const": "neo_hookean_a"}, "mu": _NUM, "beta": _NUM, "nu": _NUM},
            "required": ["model", "mu"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"model": {"const": "neo_hookean_b"}, "E": _NUM, "nu": _NUM},
            "required": ["model", "E", "nu"],
            "additionalProperties": False,
        },
    ]
}
_VEC = {"type": "array", "items": _NUM, "minItems": 1, "maxItems": 4}
_PAIR = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "rve": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["laminate", "inclusion", "homogeneous", "toy1d"]},
                "grid": _PAIR,
                "lengths": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                            "minItems": 2, "maxItems": 2},
                "materials": {"type": "array", "items": _MATERIAL, "minItems": 1, "maxItems": 2},
                "inclusion_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "length": {"type": "number", "exclusiveMinimum": 0},
                "wavenumber": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "sampling": {
            "type": "object",
            "properties": {"lower": _VEC, "upper": _VEC, "count": {"type": "integer", "minimum": 1}},
            "additionalProperties": False,
        },
        "architecture": {
            "type": "object",
            "properties": {k: {"type": "integer", "minimum": 1} for k in ("L", "d", "N")},
            "additionalProperties": False,
        },
        "training": {
            "type": "object",
            "properties": {
                "max_epochs": {"type": "integer", "minimum": 1},
                "finetune_epochs": {"type": "integer", "minimum": 0},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "validation_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "lm_damping": {"type": "number", "exclusiveMinimum": 0},
                "max_lm_params": {"type": "integer", "minimum": 1},
                "adam_lr": {"type": "number", "exclusiveMinimum": 0},
                "sweeps": {"type": "integer", "minimum": 1},
                "restarts": {"type": "integer", "minimum": 1},
                "weight_decay": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "solver": {
            "type": "object",
            "properties": {
                "newton_tol": {"type": "number", "exclusiveMinimum": 0},
                "newton_max_iter": {"type": "integer", "minimum": 1},
                "cg_tol": {"type": "number", "exclusiveMinimum": 0},
                "cg_max_iter": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "macro": {
            "type": "object",
            "properties": {
                "mesh": {
                    "oneOf": [
                        {"type": "string"},
                        {
                            "type": "object",
                            "properties": {
                                "geometry": {"const": "cook"},
                                "nx": {"type": "integer", "minimum": 1},
                                "ny": {"type": "integer", "minimum": 1},
                                "q0": _NUM,
                            },
                            "required": ["geometry"],
                            "additionalProperties": False,
                        },
                        {
                            "type": "object",
                            "properties": {
                                "geometry": {"const": "cantilever"},
                                "length": {"type": "number", "exclusiveMinimum": 0},
                                "height": {"type": "number", "exclusiveMinimum": 0},
                                "cells": _PAIR,
                                "elements_per_cell": _PAIR,
                                "q0": _NUM,
                                "full_field": {"type": "boolean"},
                            },
                            "required": ["geometry"],
                            "additionalProperties": False,
                        },
                    ]
                },
                "provider": {"enum": ["surrogate", "nested", "direct"]},
                "model": {"type": "string"},
                "objective": {"type": "boolean"},
                "materials": {"type": "array", "items": _MATERIAL, "minItems": 1},
                "load_steps": {"type": "integer", "minimum": 1},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
            },
            "required": ["mesh"],
            "additionalProperties": False,
        },
    },
    "required": ["rve"],
    "additionalProperties": False,
}

# reference materials of the two 2D cells and the default sampling boxes
DEFAULT_MATERIALS = {
    "laminate": [NeoHookeanA(100.0, 1.0), NeoHookeanA(1000.0, 1.0)],
    "inclusion": [NeoHookeanB(100.0, 0.4), NeoHookeanB(1000.0, 0.3)],
    "homogeneous": [NeoHookeanB(100.0, 0.4)],
}
DEFAULT_BOX = {
    "laminate": ds.LAMINATE_BOX,
    "inclusion": ds.INCLUSION_BOX,
    "homogeneous": ds.INCLUSION_BOX,
    "toy1d": ds.TOY1D_BOX,
}
_STAGES = {"sample": 1, "train": 2, "validate": 3}


class UsageError(Exception):
    pass


def stage_seed(seed, stage):
    """Deterministic per-stage sub-seed of the config seed."""
    return int(np.random.SeedSequence([int(seed), _STAGES[stage]]).generate_state(1)[0])


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"{path}: invalid config at {where}: {exc.message}") from exc
    return cfg


def build_cell(cfg):
    """RveProblem (or Toy1dProblem) described by the ``rve`` section."""
    rc = cfg["rve"]
    kind = rc["kind"]
    if kind == "toy1d":
        return oracles.Toy1dProblem(L=rc.get("length", 1.0), k=rc.get("wavenumber", 10))
    n1, n2 = rc.get("grid", [DESK["grid"], DESK["grid"]])
    L1, L2 = rc.get("lengths", [1.0, 1.0])
    try:
        grid = micro.RveGrid(n1, n2, L1, L2)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    mats = [material_from_dict(m) for m in rc["materials"]] if "materials" in rc else DEFAULT_MATERIALS[kind]
    need = 1 if kind == "homogeneous" else 2
    if len(mats) != need:
        raise UsageError(f"rve kind {kind!r} needs {need} material(s), got {len(mats)}")
    if kind == "laminate":
        return micro.laminate_rve(grid, *mats)
    if kind == "inclusion":
        return micro.inclusion_rve(grid, *mats, fraction=rc.get("inclusion_fraction", 0.2))
    return micro.homogeneous_rve(grid, mats[0])


def solver_options(cfg):
    return micro.SolverOptions(**cfg.get("solver", {}))


def sampling_box(cfg):
    sc = cfg.get("sampling", {})
    lo, hi = DEFAULT_BOX[cfg["rve"]["kind"]]
    try:
        return ds.SamplingBox(sc.get("lower", lo), sc.get("upper", hi))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def build_macro(cfg, base_dir="."):
    mc = cfg["macro"]
    mesh = mc["mesh"]
    if isinstance(mesh, str):
        return fem.read_mesh(os.path.join(base_dir, mesh) if not os.path.isabs(mesh) else mesh)
    opts = {k: v for k, v in mesh.items() if k != "geometry"}
    if mesh["geometry"] == "cook":
        return fem.cook_membrane(**opts)
    full = opts.pop("full_field", False)
    for key in ("cells", "elements_per_cell"):
        if key in opts:
            opts[key] = tuple(opts[key])
    if full:
        opts["inclusion_fraction"] = cfg["rve"].get("inclusion_fraction", 0.2)
    return fem.cantilever(**opts)


def _parse_floats(text, count, flag):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"{flag}: expected {count} comma-separated numbers") from exc
    if len(vals) != count:
        raise UsageError(f"{flag}: expected {count} comma-separated numbers, got {len(vals)}")
    return vals


# --------------------------------------------------------------------------
# commands


def cmd_sample(args):
    cfg = load_config(args.config)
    cell = build_cell(cfg)
    box = sampling_box(cfg)
    count = args.count or cfg.get("sampling", {}).get("count") or (PAPER["count"] if args.paper_scale else DESK["count"])
    seed = args.seed if args.seed is not None else stage_seed(cfg.get("seed", 0), "sample")

    def progress(done, total):
        print(f"sample: {done}/{total} ({100 * done // total}%)", file=sys.stderr, flush=True)

    t0 = time.perf_counter()
    data = ds.build_dataset(cell, box, count, seed, solver_options(cfg), threads=args.threads, progress=progress)
    data.save(args.out)
    if data.rejects:
        data.save_rejects(args.out + ".rejects.csv")
    print(f"wrote {len(data)} records to {args.out} (seed {seed}, {len(data.rejects)} rejected, "
          f"{time.perf_counter() - t0:.1f} s)")
    return EXIT_OK


def _train_options(cfg, seed):
    return surrogate.TrainOptions(seed=seed, **(cfg or {}).get("training", {}))


def cmd_train(args):
    cfg = load_config(args.config) if args.config else None
    data = ds.Dataset.load(args.data)
    D = data.inputs.shape[1]
    if args.arch:
        L, d, N = (int(v) for v in _parse_floats(args.arch, 3, "--arch"))
    elif cfg and "architecture" in cfg:
        a = cfg["architecture"]
        L, d, N = a.get("L", DESK["L"]), a.get("d", D), a.get("N", DESK["N"])
    elif args.paper_scale:
        L, d, N = PAPER["L"], D, PAPER["N"]
    else:
        L, d, N = DESK["L"], D, DESK["N"]
    if not (L >= 1 and N >= 1 and 1 <= d <= D):
        raise UsageError(f"--arch: need L >= 1, N >= 1 and 1 <= d <= D = {D}, got {L},{d},{N}")
    seed = args.seed if args.seed is not None else stage_seed((cfg or {}).get("seed", 0), "train")
    if args.paper_scale:
        kind = str(data.rve.get("description", "")).split()[0] if data.rve else ""
        cap = PAPER["records"].get({"circular": "inclusion"}.get(kind, kind))
        if cap and len(data) > cap:
            idx = np.sort(np.random.default_rng(seed).choice(len(data), cap, replace=False))
            data = data.subset(idx)
    t0 = time.perf_counter()
    model = surrogate.train(data.inputs, data.energies, (L, d, N), _train_options(cfg, seed))
    model.save(args.out)
    m = model.metrics
    print(f"train RMSE {m['train_rmse']:.6e}  validation RMSE {m['validation_rmse']:.6e}  "
          f"(normalized; L={L} d={d} N={N}, {m['n_train']} train / {m['n_validation']} validation, "
          f"{time.perf_counter() - t0:.1f} s)")
    print(f"wrote model to {args.out}")
    return EXIT_OK


def _fmt(a):
    return " ".join(f"{v: .10e}" for v in np.ravel(a))


def cmd_micro(args):
    cfg = load_config(args.config)
    cell = build_cell(cfg)
    if not isinstance(cell, micro.RveProblem):
        raise UsageError("micro needs a 2D cell (rve kind laminate, inclusion or homogeneous)")
    Fbar = np.array(_parse_floats(args.Fbar, 4, "--Fbar")).reshape(2, 2)
    opts = solver_options(cfg)
    sol, C = micro.homogenize(cell, Fbar, opts)
    print(f"psi_bar {sol.psi_bar: .12e}")
    print(f"P_bar   {_fmt(sol.Pbar)}")
    for r, row in enumerate(tensor4_to_matrix(C)):
        print(f"C_bar[{r}] {_fmt(row)}")
    print(f"newton iterations {sol.iterations}, cg iterations {sol.cg_iterations}, residual {sol.residual_norm:.3e}")
    if args.export:
        micro.export_fields(cell, sol, args.export)
        print(f"wrote fields to {args.export}")
    if args.verify:
        if cfg["rve"]["kind"] != "laminate":
            raise UsageError("--verify is only available for the laminate cell")
        frac = cell.volume_fractions()[0]
        lam = oracles.LaminateProblem(cell.materials[0], cell.materials[1], frac)
        psi_a, P_a = oracles.laminate_energy_stress(lam, Fbar)
        C_a = oracles.central_diff_tangent(lambda F: oracles.laminate_energy_stress(lam, F)[1], Fbar)
        rel_psi = abs(sol.psi_bar - psi_a) / max(abs(psi_a), 1e-300)
        rel_P = np.linalg.norm(sol.Pbar - P_a) / max(np.linalg.norm(P_a), 1e-300)
        rel_C = np.linalg.norm(C - C_a) / np.linalg.norm(C_a)
        print(f"{'quantity':<8} {'FFT':>20} {'laminate oracle':>20} {'rel. error':>12}")
        print(f"{'psi':<8} {sol.psi_bar:20.12e} {psi_a:20.12e} {rel_psi:12.3e}")
        for i in range(2):
            for j in range(2):
                print(f"{f'P{i + 1}{j + 1}':<8} {sol.Pbar[i, j]:20.12e} {P_a[i, j]:20.12e}")
        print(f"{'|P|':<8} {'':>20} {'':>20} {rel_P:12.3e}")
        print(f"{'|C|':<8} {'':>20} {'':>20} {rel_C:12.3e}")
        ok = rel_psi < 1e-5 and rel_P < 1e-4 and rel_C < 1e-3
        print("verify: " + ("PASS" if ok else "FAIL"))
        return EXIT_OK if ok else EXIT_FAIL
    return EXIT_OK


def cmd_macro(args):
    cfg = load_config(args.config)
    if "macro" not in cfg:
        raise UsageError(f"{args.config}: no 'macro' section")
    mc = cfg["macro"]
    base = os.path.dirname(os.path.abspath(args.config))
    problem = build_macro(cfg, base)
    kind = args.provider or mc.get("provider", "surrogate")
    if kind == "surrogate":
        path = args.model or mc.get("model")
        if not path:
            raise UsageError("surrogate provider needs --model or macro.model")
        if not os.path.isabs(path) and args.model is None:
            path = os.path.join(base, path)
        if not os.path.exists(path):
            raise UsageError(f"model file not found: {path}")
        objective = args.objective or mc.get("objective", False)
        provider = fem.SurrogateProvider(surrogate.HdmrModel.load(path), objective=objective)
    elif kind == "nested":
        cell = build_cell(cfg)
        if not isinstance(cell, micro.RveProblem):
            raise UsageError("nested provider needs a 2D cell")
        provider = fem.NestedProvider(cell, solver_options(cfg), threads=args.threads)
    else:
        if "materials" in mc:
            mats = [material_from_dict(m) for m in mc["materials"]]
        elif "materials" in cfg["rve"]:
            mats = [material_from_dict(m) for m in cfg["rve"]["materials"]]
        else:
            mats = DEFAULT_MATERIALS.get(cfg["rve"]["kind"])
        provider = fem.DirectProvider(problem.mesh, mats)
    opts = fem.MacroOptions(
        load_steps=args.load_steps or mc.get("load_steps", 10),
        tol=mc.get("tol", 1e-8),
        max_iter=mc.get("max_iter", 25),
    )
    t0 = time.perf_counter()
    sol = fem.solve_macro(problem.mesh, problem.bc, provider, opts=opts)
    fem.export_solution(sol, args.out)
    print(f"provider {kind}: {problem.mesh.n_elements} elements, {opts.load_steps} load steps, "
          f"newton iterations {sol.newton_iterations}, {time.perf_counter() - t0:.1f} s")
    if kind == "nested":
        print(f"micro-solves {provider.n_solves}")
    if problem.tip is not None:
        n = problem.mesh.nearest_node(problem.tip)
        x, y = problem.mesh.nodes[n]
        print(f"tip displacement at ({x:g}, {y:g}): u1 = {sol.u[n, 0]:.10e}  u2 = {sol.u[n, 1]:.10e}")
    print(f"wrote solution to {args.out}")
    return EXIT_OK


def cmd_validate(args):
    from . import validation

    suite = getattr(validation, f"suite_{args.suite}")
    result = suite(seed=args.seed, grid=args.grid)
    for line in result.table:
        print(line)
    width = max(len(c.name) for c in result.checks)
    for c in result.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  {c.value:.3e}  (limit {c.limit:.1e})")
    ok = all(c.passed for c in result.checks)
    print(f"{args.suite}: {'all checks pass' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_FAIL


# --------------------------------------------------------------------------


def _positive_int(text):
    try:
        v = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from exc
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="hdmr-homog", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    threads = {"type": _positive_int, "default": os.cpu_count() or 1, "help": "worker threads"}

    s = sub.add_parser("sample", help="build a (Fbar, psi_bar) dataset")
    s.add_argument("config")
    s.add_argument("--count", type=_positive_int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--threads", **threads)
    s.add_argument("--paper-scale", action="store_true", help="200k-point database")
    s.set_defaults(func=cmd_sample)

    t = sub.add_parser("train", help="fit the HDMR surrogate")
    t.add_argument("--data", required=True)
    t.add_argument("--arch", help="L,d,N")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="optional config for training options")
    t.add_argument("--paper-scale", action="store_true", help="L=15, N=20 and the published record counts")
    t.set_defaults(func=cmd_train)

    m = sub.add_parser("micro", help="solve one cell problem")
    m.add_argument("config")
    m.add_argument("--Fbar", required=True, help="f11,f12,f21,f22")
    m.add_argument("--export")
    m.add_argument("--verify", action="store_true", help="compare with the laminate oracle")
    m.set_defaults(func=cmd_micro)

    M = sub.add_parser("macro", help="solve a macroscopic problem")
    M.add_argument("config")
    M.add_argument("--provider", choices=["surrogate", "nested", "direct"])
    M.add_argument("--objective", action="store_true",
                   help="evaluate the surrogate at the right stretch, stress free at F = I")
    M.add_argument("--model")
    M.add_argument("--out", required=True)
    M.add_argument("--load-steps", type=_positive_int)
    M.add_argument("--threads", **threads)
    M.set_defaults(func=cmd_macro)

    v = sub.add_parser("validate", help="run an oracle suite")
    v.add_argument("suite", choices=["projection", "laminate", "toy1d", "derivatives"])
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--grid", type=_positive_int, default=DESK["grid"])
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("numba").setLevel(logging.WARNING)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"hdmr-homog {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"hdmr-homog {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (HomogError, ValueError, OSError) as exc:
        print(f"hdmr-homog {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
