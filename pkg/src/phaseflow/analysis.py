"""Iterate decomposition, landmark detection, state evolution, and the
Monte-Carlo oracle for the expected amplitude-flow update.

Conventions. For a ground truth x and iterate z, write z = alpha x + p with
<p, x> = 0. The scalars tracked per iteration are

    alpha = <z, x> / ||x||^2      signal coefficient (sign carries phase)
    beta  = ||p||                 orthogonal residual norm
    r     = ||z||
    omega = arctan(|alpha| / beta), pi/2 once beta = 0
    theta = angle between z and x folded to [0, pi/2]

Trace rows store beta and r divided by ||x||, so r^2 = alpha^2 + beta^2
holds row-wise regardless of the signal's scale; with a unit-normalized x
(the default in every experiment) stored and raw values coincide.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .ensemble import as_signal, _philox
from .errors import ParameterError


class Decomposition(NamedTuple):
    alpha: float
    beta: float
    r: float
    omega: float
    theta: float


def dist(z, x) -> float:
    """Sign-ambiguous distance min(||z - x||, ||z + x||)."""
    z = np.asarray(z, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if z.shape != x.shape:
        raise ParameterError(f"shape mismatch: {z.shape} vs {x.shape}")
    return float(min(np.linalg.norm(z - x), np.linalg.norm(z + x)))


def decompose(z, x) -> Decomposition:
    """Split z against the line spanned by x. Requires x != 0.

    Returns absolute quantities (beta and r are not normalized by ||x||).
    """
    z = as_signal(z)
    x = as_signal(x, z.size)
    xsq = float(x @ x)
    if xsq == 0.0:
        raise ParameterError("x must be nonzero")
    alpha = float(z @ x) / xsq
    p = z - alpha * x
    beta = float(np.linalg.norm(p))
    r = float(np.linalg.norm(z))
    omega = float(np.arctan2(abs(alpha), beta)) if beta > 0 else np.pi / 2
    if r == 0.0:
        theta = np.pi / 2  # zero vector carries no direction; endpoint by convention
    else:
        c = abs(z @ x) / (r * np.sqrt(xsq))
        theta = float(np.arccos(np.clip(c, -1.0, 1.0)))
    return Decomposition(alpha=alpha, beta=beta, r=r, omega=float(omega), theta=theta)


def expected_update(z, x) -> np.ndarray:
    """Closed form of E[ sign(a'z) |a'x| a ] over a ~ N(0, I).

    Equals (1 - 2 theta/pi) x + (2 sin theta / pi) (z/||z||) ||x||, where
    theta is the angle between z and x. Defined at the endpoints theta in
    {0, pi/2} by continuity. Requires z != 0 and x != 0.
    """
    z = as_signal(z)
    x = as_signal(x, z.size)
    zn = float(np.linalg.norm(z))
    xn = float(np.linalg.norm(x))
    if zn == 0.0:
        raise ParameterError("z must be nonzero (theta undefined at 0)")
    if xn == 0.0:
        raise ParameterError("x must be nonzero")
    c = float(np.clip((z @ x) / (zn * xn), -1.0, 1.0))
    theta = float(np.arccos(abs(c)))
    # the expectation is even in x (only |a'x| appears), so when <z, x> < 0
    # apply the closed form to -x, which sits at the folded angle theta
    xs = x if c >= 0 else -x
    return (1.0 - 2.0 * theta / np.pi) * xs + (2.0 * np.sin(theta) / np.pi) * (z / zn) * xn


def population_gradient(z, x) -> np.ndarray:
    """Expected amplitude-flow gradient at z: z - expected_update(z, x)."""
    z = as_signal(z)
    return z - expected_update(z, x)


def _mc_chunks(samples: int, chunk: int):
    full, rem = divmod(samples, chunk)
    sizes = [chunk] * full + ([rem] if rem else [])
    return sizes


def mc_expectation_stats(z, x, samples: int, seed: int = 0,
                         chunk: int = 65536) -> tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo mean and standard error of sign(a'z)|a'x| a componentwise.

    Samples are drawn in fixed-size chunks with sub-seeds spawned in a fixed
    order, so results are deterministic for a given (seed, samples, chunk)
    regardless of the execution schedule.
    """
    z = as_signal(z)
    x = as_signal(x, z.size)
    if samples < 1000:
        raise ParameterError(f"samples must be at least 1000, got {samples}")
    sizes = _mc_chunks(int(samples), int(chunk))
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    n = z.size
    total = np.zeros(n)
    total_sq = np.zeros(n)
    for size, child in zip(sizes, children):
        a = _philox(child).standard_normal((size, n))
        w = np.sign(a @ z) * np.abs(a @ x)
        term = a * w[:, None]
        total += term.sum(axis=0)
        total_sq += (term**2).sum(axis=0)
    mean = total / samples
    var = total_sq / samples - mean**2
    stderr = np.sqrt(np.maximum(var, 0.0) / samples)
    return mean, stderr


def mc_expectation_oracle(z, x, samples: int, seed: int = 0) -> np.ndarray:
    """Empirical mean of sign(a'z)|a'x| a over i.i.d. Gaussian a."""
    mean, _ = mc_expectation_stats(z, x, samples, seed)
    return mean


@dataclass(frozen=True)
class StateEvolutionState:
    """One step of the deterministic angle dynamics.

    zeta and rho are the per-step perturbations entering the alpha and beta
    brackets respectively; 0 gives the clean recursion.
    """

    alpha: float
    beta: float
    zeta: float = 0.0
    rho: float = 0.0


def state_evolution_step(s: StateEvolutionState, mu: float) -> StateEvolutionState:
    """Advance (alpha, beta) one step.

    alpha' = [1 - mu (1 - (2/pi) beta / r^2 + zeta)] alpha
             + (2 mu / pi) arcsin(alpha / r)
    beta'  = [1 - mu (1 - (2/pi) beta / r^2 + rho)] beta

    with r^2 = alpha^2 + beta^2. Perturbations carry over unchanged.
    """
    if s.beta < 0:
        raise ParameterError(f"beta must be nonnegative, got {s.beta}")
    rsq = s.alpha**2 + s.beta**2
    if rsq == 0.0:
        raise ParameterError("state (0, 0) has no defined direction")
    common = (2.0 / np.pi) * s.beta / rsq
    a = (1.0 - mu * (1.0 - common + s.zeta)) * s.alpha \
        + (2.0 * mu / np.pi) * np.arcsin(s.alpha / np.sqrt(rsq))
    b = (1.0 - mu * (1.0 - common + s.rho)) * s.beta
    return StateEvolutionState(alpha=float(a), beta=float(b), zeta=s.zeta, rho=s.rho)


def run_state_evolution(alpha0: float, beta0: float, mu: float, steps: int,
                        ceiling: float = 0.0, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Iterate the recursion for `steps` steps; returns arrays of length steps+1.

    ceiling > 0 draws fresh zeta, rho uniformly from [-ceiling, ceiling]
    each step to visualize robustness; 0 runs the clean dynamics.
    """
    if steps < 0:
        raise ParameterError("steps must be nonnegative")
    if ceiling < 0:
        raise ParameterError("ceiling must be nonnegative")
    rng = _philox(seed)
    alphas = np.empty(steps + 1)
    betas = np.empty(steps + 1)
    s = StateEvolutionState(alpha=float(alpha0), beta=float(beta0))
    alphas[0], betas[0] = s.alpha, s.beta
    for k in range(steps):
        if ceiling > 0:
            z, r = rng.uniform(-ceiling, ceiling, size=2)
            s = StateEvolutionState(alpha=s.alpha, beta=s.beta, zeta=float(z), rho=float(r))
        s = state_evolution_step(s, mu)
        alphas[k + 1], betas[k + 1] = s.alpha, s.beta
    return alphas, betas


def fit_perturbations(prev: tuple[float, float], curr: tuple[float, float],
                      mu: float) -> tuple[float, float]:
    """Invert one step: find (zeta, rho) mapping prev to curr exactly.

    Useful for measuring how far an empirical step sits from the clean
    recursion. Requires mu > 0 and prev away from the axes.
    """
    if mu <= 0:
        raise ParameterError("mu must be positive to invert a step")
    a0, b0 = float(prev[0]), float(prev[1])
    a1, b1 = float(curr[0]), float(curr[1])
    rsq = a0**2 + b0**2
    if rsq == 0.0 or a0 == 0.0 or b0 == 0.0:
        raise ParameterError("prev state must have nonzero alpha and beta")
    common = (2.0 / np.pi) * b0 / rsq
    arc = (2.0 * mu / np.pi) * np.arcsin(a0 / np.sqrt(rsq))
    # invert the brackets: a1 = [1 - mu(1 - common + zeta)] a0 + arc, and
    # b1 = [1 - mu(1 - common + rho)] b0
    zeta = (1.0 - (a1 - arc) / a0) / mu - 1.0 + common
    rho = (1.0 - b1 / b0) / mu - 1.0 + common
    return float(zeta), float(rho)


@dataclass(frozen=True)
class SubstageLandmarks:
    """First-crossing iteration indices for the staging thresholds; None
    where the trace never crosses."""

    t_gamma: int | None
    t_gamma2: int | None
    t_omega: int | None
    t_11: int | None
    t_1: int | None


@dataclass(frozen=True)
class IterateTrace:
    """Per-iteration history of a solver run.

    All arrays share one length (iterations + 1, row k recorded before
    update k). alpha, beta, r are relative to ||x|| as described in the
    module docstring; dist_rel = dist(z_k, x)/||x||; loss is the per-block
    empirical loss at z_k.
    """

    k: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    r: np.ndarray
    omega: np.ndarray
    dist_rel: np.ndarray
    loss: np.ndarray

    def __len__(self) -> int:
        return self.k.size

    @classmethod
    def from_rows(cls, rows) -> "IterateTrace":
        if not rows:
            raise ParameterError("trace needs at least one row")
        cols = np.asarray(rows, dtype=np.float64).T
        return cls(k=cols[0].astype(np.int64), alpha=cols[1], beta=cols[2],
                   r=cols[3], omega=cols[4], dist_rel=cols[5], loss=cols[6])


TRACE_HEADER = "k,alpha,beta,r,omega,dist_rel,loss"


def trace_to_csv(trace: IterateTrace, path) -> None:
    """Serialize a trace; floats keep full double precision via repr."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER.split(","))
        for i in range(len(trace)):
            w.writerow([int(trace.k[i]), repr(float(trace.alpha[i])),
                        repr(float(trace.beta[i])), repr(float(trace.r[i])),
                        repr(float(trace.omega[i])), repr(float(trace.dist_rel[i])),
                        repr(float(trace.loss[i]))])


def trace_from_csv(path) -> IterateTrace:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != TRACE_HEADER.split(","):
            raise ParameterError(f"unexpected trace header {header!r}")
        rows = [[float(v) for v in row] for row in r]
    return IterateTrace.from_rows(rows)


def trace_from_state_evolution(alphas, betas) -> IterateTrace:
    """Wrap recursion output as a trace for landmark detection.

    dist_rel follows from (alpha, beta) with a unit signal; loss is not
    modeled by the recursion and is set to 0.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    betas = np.asarray(betas, dtype=np.float64)
    r = np.hypot(alphas, betas)
    omega = np.where(betas > 0, np.arctan2(np.abs(alphas), betas), np.pi / 2)
    # sign ambiguity: distance to the closer of +-x
    d = np.sqrt(np.minimum((1 - alphas) ** 2, (1 + alphas) ** 2) + betas**2)
    ks = np.arange(alphas.size)
    return IterateTrace(k=ks, alpha=alphas, beta=betas, r=r, omega=omega,
                        dist_rel=d, loss=np.zeros_like(alphas))


def _first_index(mask: np.ndarray) -> int | None:
    hits = np.flatnonzero(mask)
    return int(hits[0]) if hits.size else None


def detect_landmarks(trace: IterateTrace, gamma: float, delta: float = 0.2) -> SubstageLandmarks:
    """Locate the staging thresholds on a trace.

    The trace's sign is canonicalized by the final alpha (runs converging
    to -x count as converged to x). Thresholds on row t+1 follow the
    shifted convention: the landmark reports the step index t whose UPDATE
    produced the crossing, and 0 when row 0 already satisfies the predicate.

      t_gamma:  first k with |1 - alpha_k| <= gamma/2 and beta_k <= gamma/2
      t_gamma2: first t with beta_{t+1} <= gamma/2
      t_omega:  first t with omega_{t+1} >= pi/2 - gamma/4
      t_11:     first t with beta_{t+1} <= 3/4
      t_1:      first t with alpha_{t+1} >= delta
    """
    if len(trace) < 1:
        raise ParameterError("trace is empty")
    if not 0 < gamma < 1:
        raise ParameterError(f"gamma must lie in (0,1), got {gamma}")
    if not 0 < delta < 1:
        raise ParameterError(f"delta must lie in (0,1), got {delta}")
    sign = np.sign(trace.alpha[-1])
    if sign == 0:
        sign = 1.0
    a = sign * trace.alpha
    b = trace.beta
    w = trace.omega

    def shifted(mask: np.ndarray) -> int | None:
        # row 0 satisfying the predicate means the landmark is already passed
        if mask[0]:
            return 0
        hit = _first_index(mask[1:])
        return None if hit is None else int(hit)

    t_gamma = _first_index((np.abs(1.0 - a) <= gamma / 2) & (b <= gamma / 2))
    t_gamma2 = shifted(b <= gamma / 2)
    t_omega = shifted(w >= np.pi / 2 - gamma / 4)
    t_11 = shifted(b <= 0.75)
    t_1 = shifted(a >= delta)
    return SubstageLandmarks(t_gamma=t_gamma, t_gamma2=t_gamma2, t_omega=t_omega,
                             t_11=t_11, t_1=t_1)
