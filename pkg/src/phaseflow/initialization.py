"""Initial iterates: random Gaussian and weighted spectral.

The spectral initializer returns z0 = lambda0 * v, where v is the unit
principal eigenvector of the magnitude-weighted covariance

    D = (1/m) sum_i y_i a_i a_i'

and lambda0 = sqrt(pi/2) * mean(y) estimates the signal norm (for Gaussian
rows, E|<a, x>| = sqrt(2/pi) ||x||). v is computed by power iteration; two
execution modes trade memory for speed:

  dense:   materialize D once in n-row chunks (O(m n^2) flops, O(n^2)
           memory), then iterate at O(n^2) per sweep. Default; this is the
           mode whose cost profile the timing experiment measures.
  matfree: never form D; apply v -> (1/m) A'(y * (A v)) at O(m n) per sweep.

Both modes run the identical power iteration and stop rule, so they agree
to the stop tolerance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .ensemble import MeasurementSet, as_signal, _philox
from .errors import ParameterError


@dataclass(frozen=True)
class InitReport:
    """Outcome of an initialization routine.

    correlation and norm_ratio are diagnostics against a known signal and
    stay None unless the caller supplied one.
    """

    z0: np.ndarray
    method: str  # "random" or "spectral"
    wall_time: float
    sweeps: int = 0
    mode: str | None = None
    correlation: float | None = None  # |<z0,x>| / (||z0|| ||x||)
    norm_ratio: float | None = None  # ||z0|| / ||x||


@dataclass(frozen=True)
class InitCondition:
    """Boolean verdict plus margins for the two-part initialization test."""

    satisfied: bool
    correlation: float
    correlation_threshold: float
    correlation_margin: float  # correlation - threshold
    norm_ratio: float
    norm_band: tuple[float, float]
    norm_margin: float  # min distance of norm_ratio to either band edge, >= 0 inside


def random_init(n: int, scale: float = 1.0, seed: int = 0) -> np.ndarray:
    """Draw z0 with i.i.d. N(0, scale^2/n) entries.

    scale should estimate ||x||; 1 when the ground truth is unit-normalized.
    """
    if n < 2:
        raise ParameterError(f"n must be at least 2, got {n}")
    if not scale > 0:
        raise ParameterError(f"scale must be positive, got {scale}")
    return _philox(seed).standard_normal(n) * (scale / np.sqrt(n))


def power_iteration(op, n: int, iterations: int = 200, angle_tol: float = 1e-8,
                    seed: int = 0) -> tuple[np.ndarray, int]:
    """Principal eigenvector of a symmetric PSD operator by power iteration.

    op is either an (n, n) array or a callable v -> op @ v. Starts from a
    seeded random unit vector and stops after `iterations` sweeps or once
    the angle between successive iterates drops below angle_tol, whichever
    comes first. Returns (v, sweeps) with v sign-canonicalized: its first
    nonzero coordinate is positive, so reruns are reproducible.
    """
    if iterations < 1:
        raise ParameterError(f"iterations must be at least 1, got {iterations}")
    apply = op if callable(op) else (lambda v: op @ v)
    v = _philox(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    sweeps = 0
    for _ in range(iterations):
        w = apply(v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start vector in the kernel; any direction is as good as another
            break
        w /= nw
        sweeps += 1
        # angle via chordal distance, sign-insensitive
        gap = min(np.linalg.norm(w - v), np.linalg.norm(w + v))
        ang = 2.0 * np.arcsin(min(1.0, 0.5 * gap))
        v = w
        if ang < angle_tol:
            break
    pivot = np.flatnonzero(v)
    if pivot.size and v[pivot[0]] < 0:
        v = -v
    return v, sweeps


def weighted_covariance(ensemble: MeasurementSet, chunk_rows: int | None = None) -> np.ndarray:
    """Materialize D = (1/m) sum y_i a_i a_i' in row chunks.

    Chunking keeps peak memory at chunk_rows * n alongside the n x n output.
    """
    y = ensemble.require_observed()
    A = ensemble.vectors
    m, n = A.shape
    if chunk_rows is None:
        chunk_rows = max(1, 2_000_000 // n)
    D = np.zeros((n, n))
    for lo in range(0, m, chunk_rows):
        hi = min(m, lo + chunk_rows)
        blk = A[lo:hi]
        D += (blk.T * y[lo:hi]) @ blk
    D /= m
    return D


def spectral_init(ensemble: MeasurementSet, iterations: int = 200, seed: int = 0,
                  mode: str = "dense", x=None, angle_tol: float = 1e-8) -> InitReport:
    """Spectral initial iterate from an observed ensemble.

    Pass x (the ground truth, when known) to fill the correlation and
    norm_ratio diagnostics; it plays no role in the computation itself.
    """
    if mode not in ("dense", "matfree"):
        raise ParameterError(f"mode must be 'dense' or 'matfree', got {mode!r}")
    if iterations < 1:
        raise ParameterError(f"iterations must be at least 1, got {iterations}")
    y = ensemble.require_observed()
    t0 = time.perf_counter()
    if mode == "dense":
        D = weighted_covariance(ensemble)
        v, sweeps = power_iteration(D, ensemble.n, iterations, angle_tol, seed)
    else:
        A = ensemble.vectors

        def apply(v):
            return A.T @ (y * (A @ v)) / ensemble.m

        v, sweeps = power_iteration(apply, ensemble.n, iterations, angle_tol, seed)
    lam0 = np.sqrt(np.pi / 2.0) * float(y.mean())
    z0 = lam0 * v
    wall = time.perf_counter() - t0
    corr = ratio = None
    if x is not None:
        x = as_signal(x, ensemble.n)
        xn = np.linalg.norm(x)
        zn = np.linalg.norm(z0)
        corr = float(abs(z0 @ x) / (zn * xn)) if zn > 0 else 0.0
        ratio = float(zn / xn)
    return InitReport(z0=z0, method="spectral", wall_time=wall, sweeps=sweeps,
                      mode=mode, correlation=corr, norm_ratio=ratio)


def check_init_condition(z0, x) -> InitCondition:
    """Check the two-part basin condition for an initial iterate.

    Requires correlation |<z0,x>| / (||z0|| ||x||) >= 1/(2 sqrt(n log n))
    and ||z0|| inside the band (1 +/- 1/log n) ||x||. Both parts depend
    only on the shape of the pair, so jointly rescaling z0 and x by the
    same positive constant never changes the verdict.
    """
    z0 = as_signal(z0)
    x = as_signal(x, z0.size)
    xn = np.linalg.norm(x)
    if xn == 0.0:
        raise ParameterError("x must be nonzero")
    n = z0.size
    zn = np.linalg.norm(z0)
    corr = float(abs(z0 @ x) / (zn * xn)) if zn > 0 else 0.0
    thr = 1.0 / (2.0 * np.sqrt(n * np.log(n)))
    lo, hi = 1.0 - 1.0 / np.log(n), 1.0 + 1.0 / np.log(n)
    ratio = float(zn / xn)
    ok = corr >= thr and lo <= ratio <= hi
    return InitCondition(
        satisfied=bool(ok),
        correlation=corr,
        correlation_threshold=float(thr),
        correlation_margin=float(corr - thr),
        norm_ratio=ratio,
        norm_band=(float(lo), float(hi)),
        norm_margin=float(min(hi - ratio, ratio - lo)),
    )
