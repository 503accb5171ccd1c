"""Riemannian nonlinear CG (and steepest descent) with Armijo backtracking."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional

from .errors import ConvergenceError, DegenerateCoreError, RankDeficientError
from .manifold import EuclideanGeometry, PreconditionedGeometry
from .problem import DegenerateDirectionError, cost, cost_and_grad, mse_on, stepsize_guess

log = logging.getLogger(__name__)

# A failed line search whose first trial predicted a relative decrease below
# this is reported as convergence (noise floor reached), not as an error.
STAGNATION_RTOL = 1e-10

TRACE_COLUMNS = ("iter", "train_mse", "test_mse", "grad_norm", "step", "backtracks", "time_s")


@dataclass
class SolverConfig:
    max_iter: int = 250
    train_mse_tol: float = 1e-12
    grad_norm_tol: float = 1e-12  # relative to the initial gradient norm
    armijo_c: float = 1e-4
    armijo_contraction: float = 0.5
    max_backtracks: int = 25
    cg_restart_threshold: float = 1e-10
    method: str = "ncg"  # "ncg" | "sd"
    geometry: str = "preconditioned"  # "preconditioned" | "euclidean"
    early_stop_on_validation: bool = False
    validation_window: int = 3
    ridge: Optional[float] = None
    record_time: bool = True
    seed: int = 0

    def __post_init__(self):
        self.method = self.method.lower()
        self.geometry = self.geometry.lower()
        if not 0.0 < self.armijo_c < 1.0:
            raise ValueError(f"armijo_c must lie in (0, 1), got {self.armijo_c}")
        if not 0.0 < self.armijo_contraction < 1.0:
            raise ValueError(f"armijo_contraction must lie in (0, 1), got {self.armijo_contraction}")
        if self.method not in ("ncg", "sd"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.geometry not in ("preconditioned", "euclidean"):
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if self.max_iter < 0 or self.max_backtracks < 0 or self.validation_window < 1:
            raise ValueError("iteration limits must be non-negative")

    def make_geometry(self):
        if self.geometry == "euclidean":
            return EuclideanGeometry()
        return PreconditionedGeometry(ridge=self.ridge)

    def to_dict(self):
        return asdict(self)


@dataclass
class IterRecord:
    iter: int
    train_mse: float
    test_mse: float
    grad_norm: float
    step: float
    backtracks: int
    time_s: float


@dataclass
class RunTrace:
    records: List[IterRecord] = field(default_factory=list)
    status: str = "running"
    message: str = ""

    @property
    def iterations(self):
        return self.records[-1].iter if self.records else 0

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    def iterations_to(self, train_mse):
        """First iteration whose train MSE is at or below ``train_mse``; ``None`` if never."""
        for r in self.records:
            if r.train_mse <= train_mse:
                return r.iter
        return None

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for r in self.records:
                w.writerow([r.iter, repr(r.train_mse), repr(r.test_mse), repr(r.grad_norm),
                            repr(r.step), r.backtracks, repr(r.time_s)])

    def summary(self):
        last = self.records[-1] if self.records else None
        return {
            "status": self.status,
            "message": self.message,
            "iterations": self.iterations,
            "final_train_mse": last.train_mse if last else math.nan,
            "final_test_mse": last.test_mse if last else math.nan,
            "time_s": last.time_s if last else 0.0,
        }


def solve(p, x0, cfg=None, callback=None):
    """Minimize the completion cost from ``x0``.

    Returns ``(x, trace)``.  Failures (line search, degenerate core, inner
    solver) end the run with ``trace.status == "error"`` and the last
    accepted point, rather than raising.
    """
    cfg = cfg or SolverConfig()
    geo = cfg.make_geometry()
    trace = RunTrace()
    has_test = p.test is not None and p.test.nnz > 0
    track_val = cfg.early_stop_on_validation and p.validation is not None and p.validation.nnz > 0
    t_start = time.perf_counter()

    def record(k, x, f, gnorm, step, bt):
        trace.records.append(IterRecord(
            iter=k,
            train_mse=f,
            test_mse=mse_on(p, x, "test") if has_test else math.nan,
            grad_norm=gnorm,
            step=step,
            backtracks=bt,
            time_s=(time.perf_counter() - t_start) if cfg.record_time else 0.0,
        ))
        if callback is not None:
            callback(trace.records[-1], x)

    x = x0
    try:
        f, grad = cost_and_grad(p, x, geo)
    except (DegenerateCoreError, ConvergenceError) as exc:
        trace.status, trace.message = "error", str(exc)
        return x, trace
    gnorm = geo.norm(x, grad)
    gnorm0 = gnorm
    record(0, x, f, gnorm, 0.0, 0)
    if f <= cfg.train_mse_tol or gnorm == 0.0:
        trace.status = "converged"
        return x, trace

    best_val = mse_on(p, x, "validation") if track_val else math.inf
    best_x, rises, last_val = x, 0, best_val
    d = -grad
    prev_step = 1.0
    trace.status = "max_iter"

    for k in range(1, cfg.max_iter + 1):
        try:
            dnorm = geo.norm(x, d)
            slope = geo.inner(x, grad, d)
            if slope >= -cfg.cg_restart_threshold * dnorm * gnorm:
                d = -grad
                slope = -gnorm * gnorm
            try:
                t = stepsize_guess(p, x, d, fallback=prev_step)
            except DegenerateDirectionError:
                t = prev_step
            if not (t > 0.0 and math.isfinite(t)):
                t = prev_step

            bt = 0
            t0 = t
            while True:
                y = geo.retract(x, t * d)
                fy = cost(p, y)
                if fy <= f + cfg.armijo_c * t * slope:
                    break
                bt += 1
                if bt > cfg.max_backtracks:
                    if -t0 * slope <= STAGNATION_RTOL * abs(f):
                        # predicted decrease is lost in the rounding of the cost: stationary
                        trace.status = "converged"
                        trace.message = f"cost stagnated at floating-point resolution (iteration {k})"
                    else:
                        trace.status = "error"
                        trace.message = f"line search failed at iteration {k} after {cfg.max_backtracks} backtracks"
                    return x, trace
                t *= cfg.armijo_contraction
            prev_step = t

            f_new, grad_new = cost_and_grad(p, y, geo)
            if cfg.method == "ncg":
                d_tr = geo.transport(x, t * d, d, y=y)
                g_tr = geo.transport(x, t * d, grad, y=y)
                diff = grad_new - g_tr
                denom = geo.inner(y, diff, d_tr)
                beta = geo.inner(y, grad_new, diff) / denom if denom != 0.0 else 0.0
                beta = max(0.0, beta) if math.isfinite(beta) else 0.0
                d = -grad_new + beta * d_tr
            else:
                d = -grad_new
        except (DegenerateCoreError, ConvergenceError, RankDeficientError) as exc:
            trace.status, trace.message = "error", str(exc)
            return x, trace

        x, f, grad = y, f_new, grad_new
        gnorm = geo.norm(x, grad)
        record(k, x, f, gnorm, t, bt)

        drift = x.orthonormality_error()
        if drift > 1e-10:
            trace.status = "error"
            trace.message = f"factor orthonormality drifted to {drift:.3e}"
            return x, trace
        if f <= cfg.train_mse_tol:
            trace.status = "converged"
            return x, trace
        if gnorm <= cfg.grad_norm_tol * gnorm0:
            trace.status = "converged"
            trace.message = "relative gradient norm below tolerance"
            return x, trace
        if track_val:
            val = mse_on(p, x, "validation")
            rises = rises + 1 if val > last_val else 0
            last_val = val
            if val < best_val:
                best_val, best_x = val, x
            if rises >= cfg.validation_window:
                trace.status = "validation_stop"
                trace.message = f"validation MSE rose {rises} times in a row"
                return best_x, trace
    return x, trace
