"""Iterative amplitude-flow and intensity-flow solvers.

One loop serves three schemes:

  resampled amplitude flow  K > 1 blocks, update k touches block k mod K
  full-batch amplitude flow K = 1
  intensity flow            full batch with the intensity gradient

Each iteration appends a trace row for the CURRENT iterate before applying
the update, so a run that stops after j updates leaves j+1 rows. The ground
truth x enters metrics only (distances, decomposition); the update itself
sees nothing but the measurement block.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .analysis import IterateTrace, decompose, detect_landmarks, dist
from .ensemble import BlockSchedule, MeasurementSet, as_signal, partition_blocks
from .errors import DivergenceError, ParameterError
from .objective import rwf_gradient, wf_gradient


@dataclass(frozen=True)
class SolverConfig:
    """Run parameters.

    mu:         step size. The amplitude path expects mu in (0, 1]; 0 is
                tolerated as an explicit degenerate choice (constant trace).
    gamma:      phase-transition radius used by landmark detection, in (0,1).
    K:          block count; 1 runs full batch.
    max_iters:  update cap T.
    tol:        target relative distance (or, in truth-free mode, the target
                relative loss is tol^2); must satisfy 0 < tol < gamma.
    algorithm:  "rwf" (amplitude) or "wf" (intensity).
    truth_free: stop on the loss criterion instead of the oracle distance.
    """

    mu: float
    gamma: float = 0.1
    K: int = 1
    max_iters: int = 500
    tol: float = 1e-7
    seed: int = 0
    algorithm: str = "rwf"
    truth_free: bool = False

    def __post_init__(self):
        if self.algorithm not in ("rwf", "wf"):
            raise ParameterError(f"algorithm must be 'rwf' or 'wf', got {self.algorithm!r}")
        if self.mu < 0:
            raise ParameterError(f"mu must be nonnegative, got {self.mu}")
        if self.algorithm == "rwf" and self.mu > 1:
            raise ParameterError(f"amplitude path expects mu <= 1, got {self.mu}")
        if not 0 < self.gamma < 1:
            raise ParameterError(f"gamma must lie in (0,1), got {self.gamma}")
        if not 0 < self.tol < self.gamma:
            raise ParameterError(f"need 0 < tol < gamma, got tol={self.tol} gamma={self.gamma}")
        if self.max_iters < 1:
            raise ParameterError(f"max_iters must be at least 1, got {self.max_iters}")
        if self.K < 1:
            raise ParameterError(f"K must be at least 1, got {self.K}")


@dataclass(frozen=True)
class RunReport:
    """Outcome of one solver run.

    final_dist is the absolute sign-ambiguous distance at the last iterate;
    contraction_estimate is the median per-step dist ratio over iterations
    after t_gamma (nan when that window is empty or t_gamma is None).
    """

    trace: IterateTrace
    t_gamma: int | None
    converged: bool
    final_dist: float
    contraction_estimate: float
    wall_time: float
    iterations: int


def rwf_step(z, ensemble: MeasurementSet, block, mu: float):
    """One amplitude-flow update over a block: z - mu * gradient."""
    g = rwf_gradient(ensemble, block, z)
    return np.asarray(z, dtype=np.float64) - mu * g.gradient


def run(config: SolverConfig, ensemble: MeasurementSet, schedule: BlockSchedule | None,
        z0, x) -> RunReport:
    """Iterate from z0 until the relative distance to x drops to tol or the
    update cap is reached.

    schedule=None builds the contiguous K-block partition from config.K;
    an explicit schedule must match both the ensemble and config.K. Raises
    DivergenceError (with the partial trace attached) if an iterate turns
    non-finite or escapes ||z|| > 10 ||z0|| + 10.
    """
    if schedule is None:
        schedule = partition_blocks(ensemble.m, config.K)
    if schedule.m != ensemble.m:
        raise ParameterError(f"schedule covers {schedule.m} rows, ensemble has {ensemble.m}")
    if schedule.K != config.K:
        raise ParameterError(f"schedule has K={schedule.K}, config has K={config.K}")
    x = as_signal(x, ensemble.n)
    xn = float(np.linalg.norm(x))
    if xn == 0.0:
        raise ParameterError("x must be nonzero")
    z = np.array(as_signal(z0, ensemble.n), dtype=np.float64)
    grad_fn = rwf_gradient if config.algorithm == "rwf" else wf_gradient
    y = ensemble.require_observed()
    # truth-free scale: mean(y^2) estimates ||x||^2, making loss/tol^2 comparable
    y2bar = float(y @ y) / y.size
    guard = 10.0 * float(np.linalg.norm(z)) + 10.0

    t0 = time.perf_counter()
    rows = []
    converged = False
    final_d = dist(z, x)
    for k in range(config.max_iters + 1):
        d = dist(z, x)
        rel = d / xn
        g = grad_fn(ensemble, schedule.block(k), z)
        dec = decompose(z, x)
        rows.append((k, dec.alpha, dec.beta / xn, dec.r / xn, dec.omega, rel, g.loss))
        final_d = d
        if config.truth_free:
            converged = g.loss <= config.tol**2 * y2bar
        else:
            converged = rel <= config.tol
        if converged or k == config.max_iters:
            break
        z = z - config.mu * g.gradient
        if not np.all(np.isfinite(z)) or np.linalg.norm(z) > guard:
            partial = IterateTrace.from_rows(rows)
            raise DivergenceError(
                f"iterate escaped at update {k} (non-finite or beyond 10*||z0||+10)",
                trace=partial, iteration=k + 1)
    wall = time.perf_counter() - t0

    trace = IterateTrace.from_rows(rows)
    marks = detect_landmarks(trace, config.gamma)
    contraction = float("nan")
    if marks.t_gamma is not None and marks.t_gamma < len(trace) - 1:
        seg = trace.dist_rel[marks.t_gamma:]
        num, den = seg[1:], seg[:-1]
        ok = den > 0
        if np.any(ok):
            contraction = float(np.median(num[ok] / den[ok]))
    return RunReport(trace=trace, t_gamma=marks.t_gamma, converged=bool(converged),
                     final_dist=float(final_d), contraction_estimate=contraction,
                     wall_time=wall, iterations=len(trace) - 1)


def run_wf(config: SolverConfig, ensemble: MeasurementSet, z0, x) -> RunReport:
    """Full-batch intensity-flow run; accepts any config and forces the
    intensity gradient with K=1."""
    cfg = replace(config, algorithm="wf", K=1)
    return run(cfg, ensemble, None, z0, x)
