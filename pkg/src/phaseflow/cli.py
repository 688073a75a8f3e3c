"""Command-line entry point.

One subcommand per experiment. Exit codes: 0 success, 2 parameter error,
3 when any trial hit the numeric-divergence guard (results for the healthy
trials are still written and divergent rows are flagged in the CSVs).

Worker count comes from PHASEFLOW_WORKERS (or --workers, which sets it for
the run); BLAS threads are pinned to 1 before numpy loads unless the caller
already chose a value, keeping per-trial arithmetic independent of the
machine's core count.
"""

from __future__ import annotations

import argparse
import os
import sys


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="phaseflow",
        description="Seeded phase-retrieval experiments (CSV + SVG outputs).")
    sub = p.add_subparsers(dest="kind", required=True, metavar="subcommand")

    descriptions = {
        "tgamma_sweep": "stopping-time growth across dimensions",
        "race": "amplitude vs intensity descent from shared starts",
        "omega_trace": "angle dynamics of full-batch runs",
        "timing": "spectral initialization vs descent wall time",
        "substages": "Phase-1 staging landmarks on alpha/beta curves",
        "state_evolution": "deterministic recursion grid plus data overlay",
        "lemma3_check": "closed-form expected update vs Monte-Carlo",
    }
    for kind, help_text in descriptions.items():
        q = sub.add_parser(kind, help=help_text)
        q.add_argument("--n", type=int, nargs="+", default=None, metavar="N",
                       help="dimension grid (default: per-subcommand)")
        q.add_argument("--ratio", type=float, default=None,
                       help="oversampling m/n (default: per-subcommand)")
        q.add_argument("--trials", type=int, default=None,
                       help="trials per cell (default: per-subcommand)")
        q.add_argument("--gamma", type=float, default=0.1,
                       help="phase-transition radius (default 0.1)")
        q.add_argument("--delta", type=float, default=0.2,
                       help="alpha threshold for the T_1 landmark (default 0.2)")
        q.add_argument("--mu", type=float, default=0.5, dest="mu_rwf",
                       help="amplitude-flow step size (default 0.5)")
        q.add_argument("--mu-wf", type=float, default=0.1, dest="mu_wf",
                       help="intensity-flow step size (default 0.1)")
        q.add_argument("--K", type=int, default=None,
                       help="block count, 1 = full batch (default: per-subcommand)")
        q.add_argument("--tol", type=float, default=None,
                       help="target relative distance (default: per-subcommand)")
        q.add_argument("--cap", type=int, default=None, dest="max_iters",
                       help="iteration cap (default: per-subcommand)")
        q.add_argument("--seed", type=int, default=42, dest="master_seed",
                       help="master seed (default 42)")
        q.add_argument("--out", type=str, default=None, dest="output_dir",
                       help="output directory (default runs/<subcommand>)")
        q.add_argument("--workers", type=int, default=None,
                       help="worker threads (default: PHASEFLOW_WORKERS or cores)")
        q.add_argument("--no-plot", action="store_true", help="skip SVG rendering")
        if kind == "lemma3_check":
            q.add_argument("--samples", type=int, default=None,
                           help="Monte-Carlo samples per cell (default 1e6)")
        if kind == "race":
            q.add_argument("--swap-labels", action="store_true",
                           help="exchange curve labels (plumbing check)")
        if kind == "state_evolution":
            q.add_argument("--overlay-n", type=int, default=64,
                           help="overlay dimension (default 64)")
            q.add_argument("--overlay-rows", type=int, default=500_000,
                           help="overlay sample count (default 500000)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers is not None:
        if args.workers < 1:
            print("error: --workers must be >= 1", file=sys.stderr)
            return 2
        os.environ["PHASEFLOW_WORKERS"] = str(args.workers)
    # pin BLAS before numpy comes in; honored only if the user has not chosen
    os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
    os.environ.setdefault("MKL_NUM_THREADS", "1")

    from . import harness
    from .errors import ParameterError

    spec_kwargs = dict(
        kind=args.kind,
        dims=tuple(args.n) if args.n else None,
        oversampling=args.ratio,
        trials=args.trials,
        gamma=args.gamma,
        delta=args.delta,
        mu_rwf=args.mu_rwf,
        mu_wf=args.mu_wf,
        K=args.K,
        tol=args.tol,
        max_iters=args.max_iters,
        master_seed=args.master_seed,
        output_dir=args.output_dir or os.path.join("runs", args.kind),
        plot=not args.no_plot,
    )
    if args.kind == "lemma3_check":
        spec_kwargs["samples"] = args.samples
    if args.kind == "race":
        spec_kwargs["swap_labels"] = args.swap_labels
    if args.kind == "state_evolution":
        spec_kwargs["overlay_n"] = args.overlay_n
        spec_kwargs["overlay_rows"] = args.overlay_rows

    try:
        spec = harness.ExperimentSpec(**spec_kwargs)
        result = harness.run_experiment(spec)
    except ParameterError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    for path in result["csv"] + result["plots"] + [result["manifest"]]:
        print(path)
    if result["diverged"]:
        print(f"warning: {result['diverged']} trial leg(s) hit the divergence guard",
              file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
