"""Gaussian sensing ensembles, magnitude observations, and block schedules.

A measurement set holds m sensing vectors a_i drawn i.i.d. from N(0, I_n)
plus, once a signal has been observed, the magnitudes y_i = |<a_i, x>|.
Block schedules partition the row range into K contiguous index sets for
cyclic resampled updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, StateError


def _philox(seed: int | np.random.SeedSequence) -> np.random.Generator:
    # Philox is counter-based: cheap to seed, stable across platforms.
    return np.random.Generator(np.random.Philox(seed))


def as_signal(x, n: int | None = None) -> np.ndarray:
    """Validate and return a signal vector as a float64 array.

    Requires a one-dimensional vector with at least 2 finite entries.
    When n is given the length must match it.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ParameterError(f"signal must be one-dimensional, got shape {x.shape}")
    if x.size < 2:
        raise ParameterError(f"signal needs at least 2 entries, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ParameterError("signal has non-finite entries")
    if n is not None and x.size != n:
        raise ParameterError(f"signal has length {x.size}, expected {n}")
    return x


@dataclass(frozen=True)
class MeasurementSet:
    """Immutable bundle of sensing vectors and (optionally) observations.

    vectors:      (m, n) array, row i is a_i
    seed:         integer that reproduces `vectors` via generate_gaussian_ensemble
    observations: (m,) array of y_i = |<a_i, x>|, or None before observe()
    """

    vectors: np.ndarray
    seed: int
    observations: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.vectors.setflags(write=False)
        if self.observations is not None:
            self.observations.setflags(write=False)

    @property
    def m(self) -> int:
        return self.vectors.shape[0]

    @property
    def n(self) -> int:
        return self.vectors.shape[1]

    def require_observed(self) -> np.ndarray:
        """Return the observation vector, raising StateError if absent."""
        if self.observations is None:
            raise StateError("measurement set has no observations; call observe() first")
        return self.observations


@dataclass(frozen=True)
class BlockSchedule:
    """Contiguous partition of row indices 0..m-1 into K blocks.

    Block sizes are floor(m/K); the last block absorbs the remainder, so
    sizes differ by at most K-1 rows and every row lands in exactly one block.
    """

    m: int
    K: int
    bounds: tuple[tuple[int, int], ...]

    @property
    def block_size(self) -> int:
        # nominal size m~ = floor(m/K); the last block may hold up to K-1 extra rows
        return self.m // self.K

    def block(self, k: int) -> slice:
        """Slice of rows used at iteration k (cyclic: block index is k mod K)."""
        lo, hi = self.bounds[k % self.K]
        return slice(lo, hi)

    def indices(self, t: int) -> np.ndarray:
        """Explicit index array for block t (0-based, t < K)."""
        if not 0 <= t < self.K:
            raise ParameterError(f"block index {t} outside 0..{self.K - 1}")
        lo, hi = self.bounds[t]
        return np.arange(lo, hi)

    @property
    def blocks(self) -> list[np.ndarray]:
        return [self.indices(t) for t in range(self.K)]


def generate_gaussian_ensemble(n: int, m: int, seed: int = 0) -> MeasurementSet:
    """Draw m sensing vectors i.i.d. from N(0, I_n).

    The same (n, m, seed) triple reproduces the identical array bit for bit.
    """
    if n < 2:
        raise ParameterError(f"n must be at least 2, got {n}")
    if m < 1:
        raise ParameterError(f"m must be at least 1, got {m}")
    A = _philox(seed).standard_normal((m, n))
    return MeasurementSet(vectors=A, seed=seed)


def observe(ensemble: MeasurementSet, x) -> MeasurementSet:
    """Record magnitude observations y_i = |<a_i, x>| of a signal.

    Returns a new MeasurementSet sharing the sensing vectors; the input
    ensemble is left untouched. Phase is discarded, so x and -x produce
    identical observations.
    """
    x = as_signal(x, ensemble.n)
    y = np.abs(ensemble.vectors @ x)
    return MeasurementSet(vectors=ensemble.vectors, seed=ensemble.seed, observations=y)


def partition_blocks(m: int, K: int) -> BlockSchedule:
    """Split rows 0..m-1 into K contiguous blocks, remainder to the last."""
    if m < 1:
        raise ParameterError(f"m must be at least 1, got {m}")
    if not 1 <= K <= m:
        raise ParameterError(f"K must satisfy 1 <= K <= m, got K={K}, m={m}")
    size = m // K
    bounds = tuple(
        (t * size, (t + 1) * size if t < K - 1 else m) for t in range(K)
    )
    return BlockSchedule(m=m, K=K, bounds=bounds)
