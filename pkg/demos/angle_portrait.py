"""Portrait of one descent: components, angle, and the stage landmarks.

Plots alpha_k (signal component), beta_k (orthogonal residual), dist, and
tan omega_k for a single full-batch run, with vertical lines at the four
landmarks. Writes angle_portrait.svg next to the script's working dir.
"""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from phaseflow.analysis import detect_landmarks
from phaseflow.ensemble import generate_gaussian_ensemble, observe
from phaseflow.initialization import random_init
from phaseflow.solver import SolverConfig, run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--seed", type=int, default=19)
    ap.add_argument("--out", default="angle_portrait.svg")
    args = ap.parse_args()
    n, m = args.n, 10 * args.n

    rng = np.random.Generator(np.random.Philox(args.seed))
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    ens = observe(generate_gaussian_ensemble(n, m, args.seed + 7), x)
    z0 = random_init(n, seed=args.seed + 13)
    cfg = SolverConfig(mu=0.5, gamma=0.1, K=1, max_iters=500, tol=1e-7)
    rep = run(cfg, ens, None, z0, x)
    if not rep.converged:
        print("this start stalls at a spurious point; try another --seed")
        return

    tr = rep.trace
    sign = np.sign(tr.alpha[-1]) or 1.0
    alpha = sign * tr.alpha
    marks = detect_landmarks(tr, gamma=0.1)

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 7), sharex=True)
    ax1.plot(alpha, label="alpha")
    ax1.plot(tr.beta, label="beta")
    for name in ("t_11", "t_1", "t_gamma2", "t_gamma"):
        k = getattr(marks, name)
        if k is not None:
            ax1.axvline(k, color="gray", ls=":", lw=1)
            ax1.text(k, 1.02, name, rotation=90, fontsize=7, va="bottom")
    ax1.set_ylabel("component")
    ax1.legend(loc="center right")

    ax2.semilogy(tr.dist_rel, label="dist")
    with np.errstate(divide="ignore"):
        ax2.semilogy(np.tan(tr.omega), label="tan omega")
    ax2.set_xlabel("iteration")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(args.out)
    print(f"wrote {args.out}")
    print(f"t_11={marks.t_11} t_1={marks.t_1} t_gamma2={marks.t_gamma2} "
          f"t_gamma={marks.t_gamma} t_omega={marks.t_omega}; "
          f"{rep.iterations} iterations to dist {rep.final_dist:.2e}")


if __name__ == "__main__":
    main()
