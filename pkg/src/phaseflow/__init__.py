"""Phase retrieval from magnitude-only Gaussian measurements.

Solvers (amplitude flow with block resampling, intensity flow), spectral
and random initialization, angle-dynamics analysis with landmark detection,
a deterministic state-evolution recursion, and a seeded experiment harness.

Submodules import lazily so that process-level knobs (BLAS thread pinning
in the CLI) can be set before numpy loads.
"""

from __future__ import annotations

__version__ = "0.1.0"

_EXPORTS = {
    # ensemble
    "MeasurementSet": "ensemble",
    "BlockSchedule": "ensemble",
    "generate_gaussian_ensemble": "ensemble",
    "observe": "ensemble",
    "partition_blocks": "ensemble",
    # objective
    "GradientResult": "objective",
    "rwf_loss": "objective",
    "rwf_gradient": "objective",
    "wf_loss": "objective",
    "wf_gradient": "objective",
    # initialization
    "InitReport": "initialization",
    "InitCondition": "initialization",
    "random_init": "initialization",
    "spectral_init": "initialization",
    "power_iteration": "initialization",
    "check_init_condition": "initialization",
    # solver
    "SolverConfig": "solver",
    "RunReport": "solver",
    "rwf_step": "solver",
    "run": "solver",
    "run_wf": "solver",
    # analysis
    "IterateTrace": "analysis",
    "SubstageLandmarks": "analysis",
    "StateEvolutionState": "analysis",
    "decompose": "analysis",
    "dist": "analysis",
    "expected_update": "analysis",
    "population_gradient": "analysis",
    "mc_expectation_oracle": "analysis",
    "mc_expectation_stats": "analysis",
    "state_evolution_step": "analysis",
    "run_state_evolution": "analysis",
    "fit_perturbations": "analysis",
    "detect_landmarks": "analysis",
    "trace_to_csv": "analysis",
    "trace_from_csv": "analysis",
    # harness
    "ExperimentSpec": "harness",
    "run_experiment": "harness",
    # errors
    "ParameterError": "errors",
    "StateError": "errors",
    "DivergenceError": "errors",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name: str):
    mod = _EXPORTS.get(name)
    if mod is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    import importlib

    return getattr(importlib.import_module(f".{mod}", __name__), name)


def __dir__():
    return __all__
