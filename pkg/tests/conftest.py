"""Shared fixtures and the acceptance-summary hook.

Module tests build problem instances from three independent Philox streams
(ensemble, signal, start vector); colliding streams would make z0 parallel
to x and trivialize recovery.
"""

import os

# pin BLAS before numpy loads: reduction order must not depend on the box
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import numpy as np
import pytest

from phaseflow.ensemble import generate_gaussian_ensemble, observe
from phaseflow.initialization import random_init

# offsets keep the three streams disjoint for any base seed below 10**6
_ENS, _SIG, _INIT = 10_000_000, 20_000_000, 30_000_000


def unit_vector(n, seed):
    v = np.random.Generator(np.random.Philox(seed)).standard_normal(n)
    return v / np.linalg.norm(v)


def make_problem(n, m, seed):
    """(observed ensemble, unit x, random z0) with independent streams."""
    x = unit_vector(n, _SIG + seed)
    ens = observe(generate_gaussian_ensemble(n, m, _ENS + seed), x)
    z0 = random_init(n, 1.0, _INIT + seed)
    return ens, x, z0


@pytest.fixture
def problem():
    return make_problem


# acceptance tests register one verdict line each; the hook prints them all
# after the test summary so they survive output capture
_ACCEPTANCE_LINES = []


def record_acceptance(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in _ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
