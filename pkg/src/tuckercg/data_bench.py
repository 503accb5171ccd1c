"""Synthetic instances, COO file I/O, and the desk-scale benchmark cases."""
from __future__ import annotations

import json
import logging
import math
import os
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import FormatError
from .manifold import rand_point
from .problem import CompletionProblem, mse_on
from .smallmat import polar_factor
from .solver import SolverConfig, solve
from .tensor_core import SparseTensor3, sparse_eval_values
from .tucker import TuckerPoint

log = logging.getLogger(__name__)

_SHUFFLE_LIMIT = 1 << 24


def dim_quotient(dims, ranks):
    """Dimension of the quotient manifold: ``sum_d (n_d r_d - r_d^2) + r1 r2 r3``."""
    n1, n2, n3 = (int(n) for n in dims)
    r1, r2, r3 = (int(r) for r in ranks)
    return (n1 * r1 - r1 * r1) + (n2 * r2 - r2 * r2) + (n3 * r3 - r3 * r3) + r1 * r2 * r3


@dataclass
class InstanceSpec:
    """Recipe for a synthetic completion instance.

    ``split`` gives train/validation/test fractions of the sampled pool.
    The training set always holds exactly ``round(os * dim_quotient)``
    entries; the pool size follows from the train fraction.
    """

    dims: tuple
    ranks: tuple
    os: float = 10.0
    condition_number: Optional[float] = None
    noise_eps: Optional[float] = None
    split: tuple = (0.5, 0.0, 0.5)
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(n) for n in self.dims)
        self.ranks = tuple(int(r) for r in self.ranks)
        self.split = tuple(float(f) for f in self.split)
        if len(self.dims) != 3 or len(self.ranks) != 3:
            raise ValueError("dims and ranks need three entries each")
        if any(r < 1 or r > n for n, r in zip(self.dims, self.ranks)):
            raise ValueError(f"ranks: {self.ranks} invalid for dims {self.dims}")
        if not self.os >= 1.0:
            raise ValueError(f"os: oversampling ratio must be >= 1, got {self.os}")
        if len(self.split) != 3 or min(self.split) < 0 or not math.isclose(sum(self.split), 1.0):
            raise ValueError(f"split: fractions must be non-negative and sum to 1, got {self.split}")
        if self.split[0] <= 0:
            raise ValueError("split: train fraction must be positive")
        if self.condition_number is not None:
            if not self.condition_number >= 1.0:
                raise ValueError(f"condition_number: must be >= 1, got {self.condition_number}")
            if len(set(self.ranks)) != 1:
                raise ValueError("condition_number: superdiagonal core needs equal ranks")
        if self.noise_eps is not None and self.noise_eps < 0:
            raise ValueError(f"noise_eps: must be non-negative, got {self.noise_eps}")

    def sizes(self):
        """``(|train|, |validation|, |test|)``."""
        m = int(round(self.os * dim_quotient(self.dims, self.ranks)))
        pool = int(round(m / self.split[0]))
        n_val = int(round(pool * self.split[1]))
        n_test = max(pool - m - n_val, 0)
        return m, n_val, n_test

    def to_dict(self):
        return asdict(self)


def sample_indices(dims, count, rng):
    """``count`` distinct linear indices drawn uniformly, in draw order."""
    total = int(np.prod(dims, dtype=np.int64))
    if count > total:
        raise ValueError(f"os: requested {count} entries but the tensor has only {total}")
    if total <= _SHUFFLE_LIMIT:
        return rng.permutation(total)[:count].astype(np.int64)
    seen = set()
    out = np.empty(count, dtype=np.int64)
    filled = 0
    while filled < count:
        for v in rng.integers(0, total, size=max(1024, 2 * (count - filled))).tolist():
            if v not in seen:
                seen.add(v)
                out[filled] = v
                filled += 1
                if filled == count:
                    break
    return out


def _to_triples(lin, dims):
    return np.stack(np.unravel_index(lin, dims), axis=1).astype(np.int64)


def ground_truth(spec, rng):
    Us = [polar_factor(rng.standard_normal((n, r))) for n, r in zip(spec.dims, spec.ranks)]
    if spec.condition_number is None:
        G = rng.standard_normal(spec.ranks)
    else:
        r = spec.ranks[0]
        G = np.zeros(spec.ranks)
        diag = np.arange(r)
        # geometric decay from 1 down to 1 / CN
        G[diag, diag, diag] = np.geomspace(1.0, 1.0 / spec.condition_number, r)
    return TuckerPoint(*Us, G)


def gen_instance(spec):
    """Build ``(problem, truth)`` from ``spec``; deterministic in its fields."""
    rng = np.random.default_rng(spec.seed)
    truth = ground_truth(spec, rng)
    m, n_val, n_test = spec.sizes()
    lin = sample_indices(spec.dims, m + n_val + n_test, rng)

    def subset(part):
        idx = _to_triples(part, spec.dims)
        return SparseTensor3.from_entries(spec.dims, idx, sparse_eval_values(truth, idx))

    train = subset(lin[:m])
    if spec.noise_eps:
        e = rng.standard_normal(m)
        scale = spec.noise_eps * train.norm() / np.linalg.norm(e)
        train = train.with_values(train.vals + scale * e)
    validation = subset(lin[m:m + n_val]) if n_val else None
    test = subset(lin[m + n_val:]) if n_test else None
    return CompletionProblem(spec.dims, spec.ranks, train, test, validation), truth


# --------------------------------------------------------------------------
# COO text format


def save_coo(t, path, base=0):
    """Write ``# dims n1 n2 n3 base=B`` then one ``i j k value`` line per entry."""
    if base not in (0, 1):
        raise ValueError("base must be 0 or 1")
    n1, n2, n3 = t.dims
    with open(path, "w") as fh:
        fh.write(f"# dims {n1} {n2} {n3} base={base}\n")
        for (i, j, k), v in zip(t.idx.tolist(), t.vals.tolist()):
            fh.write(f"{i + base} {j + base} {k + base} {v!r}\n")


def load_coo(path):
    with open(path) as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 6 or parts[0] != "#" or parts[1] != "dims" or not parts[5].startswith("base="):
            raise FormatError("expected header '# dims n1 n2 n3 base={0|1}'", line=1)
        try:
            dims = tuple(int(p) for p in parts[2:5])
            base = int(parts[5][5:])
        except ValueError:
            raise FormatError("non-integer dims or base in header", line=1) from None
        if base not in (0, 1) or min(dims) < 1:
            raise FormatError("invalid dims or base in header", line=1)
        idx, vals = [], []
        for lineno, line in enumerate(fh, start=2):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            fields = s.split()
            if len(fields) != 4:
                raise FormatError(f"expected 4 fields, got {len(fields)}", line=lineno)
            try:
                i, j, k = (int(f) - base for f in fields[:3])
                v = float(fields[3])
            except ValueError:
                raise FormatError(f"cannot parse {s!r}", line=lineno) from None
            if not (0 <= i < dims[0] and 0 <= j < dims[1] and 0 <= k < dims[2]):
                raise FormatError(f"index ({fields[0]}, {fields[1]}, {fields[2]}) outside dims {dims}",
                                  line=lineno)
            idx.append((i, j, k))
            vals.append(v)
    try:
        return SparseTensor3.from_entries(dims, np.array(idx, dtype=np.int64).reshape(-1, 3), vals)
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def save_factors(x, path):
    np.savez(path, U1=x.U1, U2=x.U2, U3=x.U3, G=x.G)


def load_factors(path):
    with np.load(path) as z:
        return TuckerPoint(z["U1"], z["U2"], z["U3"], z["G"])


# --------------------------------------------------------------------------
# benchmark cases


@dataclass
class RunVariant:
    label: str
    instance: dict
    solver: dict = field(default_factory=dict)


@dataclass
class CaseSpec:
    case_id: str
    title: str
    variants: list
    tol: float = 1e-8  # train MSE used for "iterations to tolerance"


def _v(label, dims, ranks, os_, solver=None, **inst):
    return RunVariant(label, dict(dims=dims, ranks=ranks, os=os_, **inst), solver or {})


DESK_CASES = {
    "S1": CaseSpec("S1", "comparison between metrics (steepest descent)", [
        _v("preconditioned", (40, 40, 40), (4, 4, 4), 10,
           dict(method="sd", geometry="preconditioned", max_iter=500)),
        _v("euclidean", (40, 40, 40), (4, 4, 4), 10,
           dict(method="sd", geometry="euclidean", max_iter=500)),
    ]),
    "S2": CaseSpec("S2", "small-scale instances", [
        _v("n30_r3_os10", (30, 30, 30), (3, 3, 3), 10),
        _v("n40_r4_os20", (40, 40, 40), (4, 4, 4), 20),
    ]),
    "S3": CaseSpec("S3", "largest desk instances", [
        _v("n60_r5_os10", (60, 60, 60), (5, 5, 5), 10, split=(0.8, 0.0, 0.2)),
    ]),
    "S4": CaseSpec("S4", "low sampling", [
        _v(f"n50_r5_os{o}", (50, 50, 50), (5, 5, 5), o) for o in (8, 6, 4)
    ]),
    "S5": CaseSpec("S5", "ill-conditioned superdiagonal core", [
        _v(f"cn{c}", (50, 50, 50), (4, 4, 4), 20, condition_number=c) for c in (5, 50, 100)
    ]),
    "S6": CaseSpec("S6", "noisy observations", [
        _v(f"eps{e:.0e}", (30, 30, 30), (3, 3, 3), 10, noise_eps=e, split=(0.1, 0.0, 0.9),
           solver=dict(train_mse_tol=0.0))
        for e in (1e-4, 1e-6, 1e-8)
    ]),
    "S7": CaseSpec("S7", "asymmetric dimensions and ranks", [
        _v("n60x30x30_r5", (60, 30, 30), (5, 5, 5), 10),
        _v("n40_r766", (40, 40, 40), (7, 6, 6), 10),
        _v("n40_r1055", (40, 40, 40), (10, 5, 5), 10),
        _v("n40_r1544", (40, 40, 40), (15, 4, 4), 10),
    ]),
    "S8": CaseSpec("S8", "medium desk instances", [
        _v("n50_r5_os10", (50, 50, 50), (5, 5, 5), 10, split=(0.8, 0.0, 0.2)),
        _v("n50_r5_os20", (50, 50, 50), (5, 5, 5), 20, split=(0.8, 0.0, 0.2)),
    ]),
}

# Published sizes; available for exploration only, far beyond desk budgets.
FULL_CASES = {
    "S1": CaseSpec("S1", "comparison between metrics (steepest descent)", [
        _v("preconditioned", (200,) * 3, (10,) * 3, 10, dict(method="sd", geometry="preconditioned")),
        _v("euclidean", (200,) * 3, (10,) * 3, 10, dict(method="sd", geometry="euclidean")),
    ]),
    "S2": CaseSpec("S2", "small-scale instances", [
        _v(f"n{n}_r10_os{o}", (n,) * 3, (10,) * 3, o, split=(0.9, 0.0, 0.1))
        for n in (100, 150, 200) for o in (10, 20, 30)
    ]),
    "S3": CaseSpec("S3", "large-scale instances", [
        _v(f"n{n}_r{r}", (n,) * 3, (r,) * 3, 10, split=(0.9, 0.0, 0.1))
        for n in (3000, 5000, 10000) for r in (5, 10)
    ]),
    "S4": CaseSpec("S4", "low sampling", [
        _v(f"os{o}", (10000,) * 3, (5,) * 3, o, split=(0.9, 0.0, 0.1)) for o in (8, 6, 5, 4)
    ]),
    "S5": CaseSpec("S5", "ill-conditioning", [
        _v(f"cn{c}", (10000,) * 3, (5,) * 3, 5, condition_number=c, split=(0.9, 0.0, 0.1))
        for c in (5, 50, 100)
    ]),
    "S6": CaseSpec("S6", "noise", [
        _v(f"eps{e:.0e}", (10000,) * 3, (5,) * 3, 10, noise_eps=e, split=(0.9, 0.0, 0.1),
           solver=dict(train_mse_tol=1e-24 if e == 1e-12 else 1e-12))
        for e in (1e-4, 1e-6, 1e-8, 1e-10, 1e-12)
    ]),
    "S7": CaseSpec("S7", "asymmetric instances", [
        _v(f"{a}x{b}", (a, b, b), (5,) * 3, 10, split=(0.9, 0.0, 0.1))
        for a, b in ((20000, 7000), (30000, 6000), (40000, 5000))
    ] + [
        _v(f"r{r[0]}_{r[1]}_{r[2]}", (10000,) * 3, r, 10, split=(0.9, 0.0, 0.1))
        for r in ((7, 6, 6), (10, 5, 5), (15, 4, 4))
    ]),
    "S8": CaseSpec("S8", "medium-scale instances", [
        _v(f"n{n}_r{r}_os{o}", (n,) * 3, (r,) * 3, o, split=(0.9, 0.0, 0.1))
        for n in (500, 1000, 1500) for r in (5, 10, 15) for o in (10, 20, 30, 40)
    ]),
}


def get_case(case_id, full_scale=False):
    registry = FULL_CASES if full_scale else DESK_CASES
    key = str(case_id).upper()
    if key not in registry:
        raise KeyError(f"unknown case {case_id!r}; known: {', '.join(sorted(registry))}")
    return registry[key]


def _median(values):
    """Median with ``None`` (tolerance never reached) ranked as +inf."""
    if not values:
        return None
    m = statistics.median(math.inf if v is None else v for v in values)
    return None if math.isinf(m) else m


def run_case(case_id, seeds=range(5), out_dir=None, full_scale=False, record_time=True,
             solver_overrides=None, variants=None):
    """Run every variant of a case on each seed; return a JSON-ready report.

    ``variants`` optionally restricts the run to the listed labels.  Solver
    failures are recorded per run and never abort the batch.  When
    ``out_dir`` is given, one trace CSV per run and ``report_<case>.json``
    are written there.
    """
    case = get_case(case_id, full_scale)
    if variants is not None:
        known = {v.label for v in case.variants}
        unknown = set(variants) - known
        if unknown:
            raise KeyError(f"unknown variants {sorted(unknown)} for case {case.case_id}")
        case = CaseSpec(case.case_id, case.title,
                        [v for v in case.variants if v.label in set(variants)], case.tol)
    seeds = list(seeds)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    runs = []
    for variant in case.variants:
        for seed in seeds:
            spec = InstanceSpec(seed=seed, **variant.instance)
            cfg_kwargs = dict(variant.solver)
            cfg_kwargs.update(solver_overrides or {})
            cfg = SolverConfig(seed=seed, record_time=record_time, **cfg_kwargs)
            entry = {"case": case.case_id, "variant": variant.label, "seed": seed,
                     "instance": spec.to_dict(), "solver": cfg.to_dict()}
            t0 = time.perf_counter()
            try:
                problem, truth = gen_instance(spec)
                x0 = rand_point(spec.dims, spec.ranks, np.random.default_rng([seed, 1]))
                x, trace = solve(problem, x0, cfg)
            except Exception as exc:  # recorded, batch continues
                log.exception("run %s/%s seed %s failed", case.case_id, variant.label, seed)
                entry.update(status="error", message=str(exc))
                runs.append(entry)
                continue
            entry.update(trace.summary())
            entry["wall_time_s"] = time.perf_counter() - t0
            entry["iterations_to_tol"] = trace.iterations_to(case.tol)
            entry["n_train"] = problem.train.nnz
            entry["n_test"] = problem.test.nnz if problem.test is not None else 0
            if spec.noise_eps:
                clean = sparse_eval_values(truth, problem.train.idx)
                level = spec.noise_eps ** 2 * float(np.dot(clean, clean))
                if problem.test is not None:
                    entry["noise_reference_mse"] = level / problem.test.nnz
                    entry["test_mse_over_reference"] = mse_on(problem, x, "test") / entry["noise_reference_mse"]
            if out_dir is not None:
                name = f"trace_{case.case_id}_{variant.label}_seed{seed}.csv"
                trace.write_csv(os.path.join(out_dir, name))
                entry["trace_file"] = name
            runs.append(entry)

    summary = {}
    for variant in case.variants:
        mine = [r for r in runs if r["variant"] == variant.label]
        times = [r["wall_time_s"] for r in mine if "wall_time_s" in r]
        tests = [r["final_test_mse"] for r in mine if "final_test_mse" in r]
        summary[variant.label] = {
            "median_iterations_to_tol": _median([r.get("iterations_to_tol") for r in mine]),
            "converged_runs": sum(r.get("iterations_to_tol") is not None for r in mine),
            "median_final_test_mse": statistics.median(tests) if tests else None,
            "time_mean_s": statistics.fmean(times) if times else None,
            "time_std_s": statistics.pstdev(times) if len(times) > 1 else 0.0,
            "errors": sum(r.get("status") == "error" for r in mine),
        }
    report = {"case": case.case_id, "title": case.title, "full_scale": full_scale,
              "tol": case.tol, "seeds": seeds, "runs": runs, "summary": summary}
    if out_dir is not None:
        with open(os.path.join(out_dir, f"report_{case.case_id}.json"), "w") as fh:
            json.dump(report, fh, indent=2, default=_json_default)
    return report


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o)}")
