"""Command-line front end: ``tuckercg {gen,complete,bench}``.

Exit codes
----------
0  success (``complete``: status converged, max_iter or validation_stop)
1  solver error (line search failure, degenerate core, ...)
2  usage error (bad flags, unknown case id)
3  config validation error
4  I/O error (missing or unreadable input, malformed COO file)

The default output directory is taken from ``$TUCKERCG_OUT`` and falls
back to ``./tuckercg_out``.  Flags override values from ``--config``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import jsonschema
import numpy as np

from . import data_bench
from .errors import FormatError, TuckerError
from .manifold import rand_point
from .problem import CompletionProblem
from .solver import SolverConfig, solve
from .tensor_core import set_threads

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_IO = 4

OUT_ENV = "TUCKERCG_OUT"

log = logging.getLogger("tuckercg")

_triple = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 3, "maxItems": 3}
_pos = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "instance": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dims": _triple,
                "ranks": _triple,
                "os": {"type": "number", "minimum": 1},
                "condition_number": {"type": ["number", "null"], "minimum": 1},
                "noise_eps": {"type": ["number", "null"], "minimum": 0},
                "split": {"type": "array", "items": {"type": "number", "minimum": 0},
                          "minItems": 3, "maxItems": 3},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_iter": {"type": "integer", "minimum": 0},
                "train_mse_tol": {"type": "number", "minimum": 0},
                "grad_norm_tol": {"type": "number", "minimum": 0},
                "armijo_c": _pos,
                "armijo_contraction": _pos,
                "max_backtracks": {"type": "integer", "minimum": 0},
                "cg_restart_threshold": {"type": "number", "minimum": 0},
                "method": {"enum": ["ncg", "sd"]},
                "geometry": {"enum": ["preconditioned", "euclidean"]},
                "early_stop_on_validation": {"type": "boolean"},
                "validation_window": {"type": "integer", "minimum": 1},
                "ridge": {"type": ["number", "null"], "minimum": 0},
                "record_time": {"type": "boolean"},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "paths": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "out": {"type": "string"},
                "train": {"type": "string"},
                "test": {"type": ["string", "null"]},
                "validation": {"type": ["string", "null"]},
                "init": {"type": ["string", "null"]},
                "save_factors": {"type": "boolean"},
            },
        },
        "threads": {"type": "integer", "minimum": 1},
    },
}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def validate_config(cfg):
    """Schema check; raises ``CliError`` naming the offending field."""
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise CliError(f"config field {where}: {exc.message}", EXIT_VALIDATION) from None
    return cfg


def load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}", EXIT_IO) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config is not valid JSON: {exc}", EXIT_VALIDATION) from None
    return validate_config(cfg)


def _merge_flags(cfg, args):
    cfg = json.loads(json.dumps(cfg))  # deep copy
    inst, solver, paths = (cfg.setdefault(k, {}) for k in ("instance", "solver", "paths"))
    if args.seed is not None:
        inst["seed"] = args.seed
        solver["seed"] = args.seed
    if "seed" in inst:
        # the initial point follows the instance unless seeded separately
        solver.setdefault("seed", inst["seed"])
    if getattr(args, "geometry", None):
        solver["geometry"] = args.geometry
    if getattr(args, "method", None):
        solver["method"] = args.method
    if getattr(args, "ridge", None) is not None:
        solver["ridge"] = args.ridge
    if getattr(args, "no_timing", False):
        solver["record_time"] = False
    if args.threads is not None:
        cfg["threads"] = args.threads
    paths["out"] = args.out or paths.get("out") or os.environ.get(OUT_ENV) or "tuckercg_out"
    return validate_config(cfg)


def _instance_spec(inst):
    try:
        return data_bench.InstanceSpec(**inst)
    except (TypeError, ValueError) as exc:
        raise CliError(f"instance: {exc}", EXIT_VALIDATION) from None


def _solver_config(solver):
    try:
        return SolverConfig(**solver)
    except (TypeError, ValueError) as exc:
        raise CliError(f"solver: {exc}", EXIT_VALIDATION) from None


def _makedirs(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory: {exc}", EXIT_IO) from None


def cmd_gen(cfg):
    """Write train/test/validation COO files, the ground truth and the instance recipe."""
    out = cfg["paths"]["out"]
    spec = _instance_spec(cfg["instance"])
    try:
        problem, truth = data_bench.gen_instance(spec)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from None
    _makedirs(out)
    empty = data_bench.SparseTensor3.empty(spec.dims)
    try:
        for name in ("train", "test", "validation"):
            t = getattr(problem, name)
            data_bench.save_coo(t if t is not None else empty, os.path.join(out, f"{name}.coo"))
        data_bench.save_factors(truth, os.path.join(out, "truth.npz"))
        with open(os.path.join(out, "instance.json"), "w") as fh:
            json.dump(spec.to_dict(), fh, indent=2)
    except OSError as exc:
        raise CliError(f"cannot write output: {exc}", EXIT_IO) from None
    print(f"wrote {problem.train.nnz} train / "
          f"{problem.test.nnz if problem.test is not None else 0} test entries to {out}")
    return EXIT_OK


def _load_problem(cfg):
    paths, inst = cfg["paths"], cfg["instance"]
    if "train" not in paths:
        spec = _instance_spec(inst)
        try:
            return data_bench.gen_instance(spec)[0]
        except ValueError as exc:
            raise CliError(str(exc), EXIT_VALIDATION) from None
    if "ranks" not in inst:
        raise CliError("config field instance.ranks: required when completing from files",
                       EXIT_VALIDATION)
    try:
        sets = {}
        for name in ("train", "test", "validation"):
            if paths.get(name):
                t = data_bench.load_coo(paths[name])
                sets[name] = t if t.nnz else None
    except OSError as exc:
        raise CliError(f"cannot read input: {exc}", EXIT_IO) from None
    except FormatError as exc:
        raise CliError(f"{paths[name]}: {exc}", EXIT_IO) from None
    if sets["train"] is None:
        raise CliError(f"{paths['train']}: training file has no entries", EXIT_VALIDATION)
    try:
        return CompletionProblem(sets["train"].dims, inst["ranks"], sets["train"],
                                 sets.get("test"), sets.get("validation"))
    except ValueError as exc:
        raise CliError(f"inputs: {exc}", EXIT_VALIDATION) from None


def cmd_complete(cfg):
    """Solve one instance; write ``trace.csv``, ``result.json`` and optionally factors."""
    out = cfg["paths"]["out"]
    solver_cfg = _solver_config(cfg.get("solver", {}))
    problem = _load_problem(cfg)
    init = cfg["paths"].get("init")
    try:
        if init:
            x0 = data_bench.load_factors(init)
            if x0.dims != problem.dims or x0.ranks != problem.ranks:
                raise CliError("init factors do not match dims/ranks", EXIT_VALIDATION)
        else:
            x0 = rand_point(problem.dims, problem.ranks, np.random.default_rng([solver_cfg.seed, 1]))
    except OSError as exc:
        raise CliError(f"cannot read init factors: {exc}", EXIT_IO) from None
    x, trace = solve(problem, x0, solver_cfg)
    _makedirs(out)
    try:
        trace.write_csv(os.path.join(out, "trace.csv"))
        with open(os.path.join(out, "result.json"), "w") as fh:
            json.dump({**trace.summary(), "config": cfg}, fh, indent=2)
        if cfg["paths"].get("save_factors", False):
            data_bench.save_factors(x, os.path.join(out, "factors.npz"))
    except OSError as exc:
        raise CliError(f"cannot write output: {exc}", EXIT_IO) from None
    s = trace.summary()
    print(f"{s['status']}: {s['iterations']} iterations, train MSE {s['final_train_mse']:.3e}, "
          f"test MSE {s['final_test_mse']:.3e}")
    if trace.status == "error":
        print(f"solver error: {trace.message}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_bench(cfg, case_ids, n_seeds=5, full_scale=False):
    registry = data_bench.FULL_CASES if full_scale else data_bench.DESK_CASES
    if any(c.lower() == "all" for c in case_ids):
        case_ids = sorted(registry)
    for c in case_ids:
        if c.upper() not in registry:
            raise CliError(f"unknown case {c!r}; known: {', '.join(sorted(registry))}, all", EXIT_USAGE)
    out = cfg["paths"]["out"]
    solver = cfg.get("solver", {})
    overrides = {k: v for k, v in solver.items() if k not in ("seed", "record_time")}
    record_time = solver.get("record_time", True)
    base_seed = cfg.get("instance", {}).get("seed", 0)
    errors = 0
    for c in case_ids:
        report = data_bench.run_case(c, seeds=range(base_seed, base_seed + n_seeds), out_dir=out,
                                     full_scale=full_scale, record_time=record_time,
                                     solver_overrides=overrides)
        for label, s in report["summary"].items():
            print(f"{report['case']} {label}: median iters to {report['tol']:g} = "
                  f"{s['median_iterations_to_tol']}, reached {s['converged_runs']}/{n_seeds}, "
                  f"time {s['time_mean_s']:.2f}±{s['time_std_s']:.2f} s")
            errors += s["errors"]
    return EXIT_SOLVER if errors else EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="overrides instance and solver seeds")
    common.add_argument("--threads", type=int, help="cap on kernel worker threads")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./tuckercg_out)")
    common.add_argument("--geometry", choices=("preconditioned", "euclidean"))
    common.add_argument("--method", choices=("ncg", "sd"))
    common.add_argument("--ridge", type=float, nargs="?", const=1e-10, metavar="DELTA",
                        help="regularize degenerate core Gram matrices by DELTA * trace / r "
                             "(default DELTA 1e-10)")
    common.add_argument("--no-timing", action="store_true",
                        help="write time_s = 0 so traces are byte-reproducible")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tuckercg", description="Fixed-rank Tucker tensor completion.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate a synthetic instance")
    sub.add_parser("complete", parents=[common], help="run tensor completion")
    b = sub.add_parser("bench", parents=[common], help="run desk benchmark cases")
    b.add_argument("cases", nargs="+", help="case ids S1..S8 or 'all'")
    b.add_argument("--n-seeds", type=int, default=5)
    b.add_argument("--full-scale", action="store_true",
                   help="published sizes (hours to days; no acceptance claims)")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _merge_flags(load_config(args.config), args)
        if "threads" in cfg:
            set_threads(cfg["threads"])
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "complete":
            return cmd_complete(cfg)
        if args.n_seeds < 1:
            raise CliError("--n-seeds must be positive", EXIT_USAGE)
        return cmd_bench(cfg, args.cases, args.n_seeds, args.full_scale)
    except CliError as exc:
        print(f"tuckercg: error: {exc}", file=sys.stderr)
        return exc.code
    except TuckerError as exc:
        print(f"tuckercg: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
