"""Amplitude and intensity losses with their (sub)gradients.

Two empirical objectives over a measurement subset S of size m~:

  amplitude (reshaped):  L(z) = 1/(2 m~) sum_{i in S} (|a_i' z| - y_i)^2
  intensity:             F(z) = 1/(4 m~) sum_{i in S} ((a_i' z)^2 - y_i^2)^2

The amplitude loss is non-smooth at a_i' z = 0; the subgradient convention
takes sign(0) = 0, tested against exact floating-point zero, so those rows
drop out of the gradient. Gradient and loss come out of one fused pass over
the subset (a single GEMV pair).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensemble import MeasurementSet
from .errors import ParameterError


@dataclass(frozen=True)
class GradientResult:
    """Gradient of a per-block empirical loss at one point.

    gradient:       (n,) array
    loss:           loss value at the same point, same subset
    zero_crossings: rows of the subset with a_i' z exactly 0.0 (amplitude
                    objective only; always 0 for the intensity objective)
    """

    gradient: np.ndarray
    loss: float
    zero_crossings: int


def _resolve_subset(ensemble: MeasurementSet, subset):
    """Return (rows, magnitudes, size) for a subset given as slice, index
    array, or None for the full set."""
    y = ensemble.require_observed()
    if subset is None:
        subset = slice(0, ensemble.m)
    if isinstance(subset, slice):
        lo, hi, step = subset.indices(ensemble.m)
        if step != 1:
            raise ParameterError("subset slices must be contiguous (step 1)")
        size = max(0, hi - lo)
    else:
        subset = np.asarray(subset)
        if subset.ndim != 1 or not np.issubdtype(subset.dtype, np.integer):
            raise ParameterError("subset must be a slice or a 1-d integer array")
        if subset.size and (subset.min() < 0 or subset.max() >= ensemble.m):
            raise ParameterError("subset indices outside 0..m-1")
        size = subset.size
    if size == 0:
        raise ParameterError("subset is empty")
    return ensemble.vectors[subset], y[subset], size


def _check_point(z, n: int) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (n,):
        raise ParameterError(f"point has shape {z.shape}, expected ({n},)")
    if not np.all(np.isfinite(z)):
        raise ParameterError("point has non-finite entries")
    return z


def rwf_loss(ensemble: MeasurementSet, subset, z) -> float:
    """Amplitude loss over the subset: 1/(2 m~) sum (|a_i' z| - y_i)^2."""
    A, y, size = _resolve_subset(ensemble, subset)
    z = _check_point(z, ensemble.n)
    d = np.abs(A @ z) - y
    return float(d @ d) / (2.0 * size)


def rwf_gradient(ensemble: MeasurementSet, subset, z) -> GradientResult:
    """Amplitude subgradient 1/m~ sum (|a_i' z| - y_i) sign(a_i' z) a_i.

    Loss and gradient share one pass over the subset. sign(0) = 0 exactly,
    so rows sitting on the kink contribute nothing and are counted in
    zero_crossings.
    """
    A, y, size = _resolve_subset(ensemble, subset)
    z = _check_point(z, ensemble.n)
    u = A @ z
    d = np.abs(u) - y
    # residual with the subgradient sign; rows at u == 0.0 vanish here
    # but their (0 - y_i)^2 term still belongs to the loss, hence d @ d.
    s = np.sign(u)
    g = A.T @ (d * s)
    g /= size
    loss = float(d @ d) / (2.0 * size)
    zeros = int(np.count_nonzero(u == 0.0))
    return GradientResult(gradient=g, loss=loss, zero_crossings=zeros)


def wf_loss(ensemble: MeasurementSet, subset, z) -> float:
    """Intensity loss over the subset: 1/(4 m~) sum ((a_i' z)^2 - y_i^2)^2."""
    A, y, size = _resolve_subset(ensemble, subset)
    z = _check_point(z, ensemble.n)
    q = (A @ z) ** 2 - y**2
    return float(q @ q) / (4.0 * size)


def wf_gradient(ensemble: MeasurementSet, subset, z) -> GradientResult:
    """Intensity gradient 1/m~ sum ((a_i' z)^2 - y_i^2) (a_i' z) a_i."""
    A, y, size = _resolve_subset(ensemble, subset)
    z = _check_point(z, ensemble.n)
    u = A @ z
    q = u**2 - y**2
    g = A.T @ (q * u)
    g /= size
    loss = float(q @ q) / (4.0 * size)
    return GradientResult(gradient=g, loss=loss, zero_crossings=0)
