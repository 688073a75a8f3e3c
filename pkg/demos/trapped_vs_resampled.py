"""Full batch vs block resampling from the same random starts.

At m = 10n the full-batch amplitude loss has spurious stationary points
that capture a sizable fraction of random starts, and the fraction grows
with n. Reusing each measurement set as K cyclic blocks breaks the trap:
the early iterates are nearly independent of the block they step on.
This script runs both schedules on identical (ensemble, signal, start)
triples, prints the side-by-side outcome, and shows that one stalled
iterate really is stationary (gradient norm at machine scale).
"""

import argparse

import numpy as np

from phaseflow.ensemble import generate_gaussian_ensemble, observe
from phaseflow.initialization import random_init
from phaseflow.objective import rwf_gradient
from phaseflow.solver import SolverConfig, run, rwf_step


def make_triple(n, m, seed):
    rng = np.random.Generator(np.random.Philox(seed))
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    ens = observe(generate_gaussian_ensemble(n, m, 10_000 + seed), x)
    z0 = random_init(n, seed=20_000 + seed)
    return ens, x, z0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--trials", type=int, default=30)
    args = ap.parse_args()
    m = 10 * args.n
    cfg1 = SolverConfig(mu=0.5, gamma=0.1, K=1, max_iters=500, tol=1e-7)
    cfg8 = SolverConfig(mu=0.5, gamma=0.1, K=8, max_iters=500, tol=1e-7)

    full_hits = resampled_hits = 0
    first_stall = None
    print(f"n={args.n} m={m}, {args.trials} shared starts")
    print("seed  K=1 final dist   K=8 final dist")
    for seed in range(args.trials):
        ens, x, z0 = make_triple(args.n, m, seed)
        rep1 = run(cfg1, ens, None, z0, x)
        rep8 = run(cfg8, ens, None, z0, x)
        full_hits += rep1.converged
        resampled_hits += rep8.converged
        flag = "" if rep1.converged else "  <- stalled"
        print(f"{seed:4d}  {rep1.final_dist:13.3e}  {rep8.final_dist:13.3e}{flag}")
        if first_stall is None and not rep1.converged:
            first_stall = (seed, rep1.iterations)
    print(f"\nfull batch  K=1: {full_hits}/{args.trials} recovered")
    print(f"resampled   K=8: {resampled_hits}/{args.trials} recovered")

    if first_stall is not None:
        seed, iters = first_stall
        ens, x, z0 = make_triple(args.n, m, seed)
        z = z0
        for _ in range(iters):  # full batch is deterministic: replay it
            z = rwf_step(z, ens, None, 0.5)
        g = rwf_gradient(ens, None, z)
        d = min(np.linalg.norm(z - x), np.linalg.norm(z + x))
        print(f"\nseed {seed} stalled at dist {d:.3f}: replayed gradient "
              f"norm {np.linalg.norm(g.gradient):.2e}, loss {g.loss:.4f}")
        print("the loss is far from zero yet the gradient vanishes; this is "
              "a minimizer of the empirical objective, not slow progress")


if __name__ == "__main__":
    main()
