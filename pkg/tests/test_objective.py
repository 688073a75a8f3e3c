"""Amplitude and intensity losses and their (sub)gradients."""

import numpy as np
import pytest

from conftest import make_problem, unit_vector
from phaseflow.ensemble import MeasurementSet, observe, partition_blocks
from phaseflow.errors import ParameterError
from phaseflow.objective import rwf_gradient, rwf_loss, wf_gradient, wf_loss


def single_sample(a, y):
    ens = MeasurementSet(vectors=np.array([a], dtype=np.float64), seed=0,
                         observations=np.array([y], dtype=np.float64))
    return ens


def central_diff(loss_fn, ens, z, h=1e-6):
    g = np.empty_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        g[i] = (loss_fn(ens, None, z + e) - loss_fn(ens, None, z - e)) / (2 * h)
    return g


def test_rwf_loss_zero_at_truth():
    ens, x, _ = make_problem(8, 40, 0)
    assert rwf_loss(ens, None, x) == 0.0
    assert rwf_loss(ens, None, -x) == 0.0


def test_rwf_loss_direct_value():
    ens = single_sample([1.0, 0.0], 1.0)
    assert rwf_loss(ens, None, np.array([3.0, 0.0])) == 2.0


def test_rwf_gradient_direct_value():
    ens = single_sample([1.0, 0.0], 1.0)
    res = rwf_gradient(ens, None, np.array([2.0, 0.0]))
    assert np.allclose(res.gradient, [1.0, 0.0])
    assert res.zero_crossings == 0
    assert res.loss == 0.5


def test_rwf_gradient_zero_crossing():
    # a'z = 0 exactly: sign(0) = 0 kills the row, but its loss term stays
    ens = single_sample([1.0, 0.0], 1.0)
    res = rwf_gradient(ens, None, np.array([0.0, 5.0]))
    assert np.array_equal(res.gradient, [0.0, 0.0])
    assert res.zero_crossings == 1
    assert res.loss == 0.5


def test_rwf_gradient_vanishes_at_minimizers():
    ens, x, _ = make_problem(10, 80, 1)
    for zz in (x, -x):
        res = rwf_gradient(ens, None, zz)
        assert np.linalg.norm(res.gradient) < 1e-14
        assert res.loss == 0.0


def test_rwf_finite_difference_oracle():
    # 100 random instances, n <= 20, m <= 200, away from zero crossings
    rng = np.random.Generator(np.random.Philox(99))
    worst = 0.0
    for trial in range(100):
        n = int(rng.integers(2, 21))
        m = int(rng.integers(n, 201))
        ens, x, _ = make_problem(n, m, 500 + trial)
        z = rng.standard_normal(n)
        res = rwf_gradient(ens, None, z)
        if res.zero_crossings:
            continue
        fd = central_diff(rwf_loss, ens, z)
        rel = np.linalg.norm(res.gradient - fd) / max(np.linalg.norm(fd), 1e-30)
        worst = max(worst, rel)
    assert worst <= 1e-5


def test_wf_loss_values():
    ens = single_sample([1.0, 0.0], 1.0)
    assert wf_loss(ens, None, np.array([2.0, 0.0])) == 2.25
    ens2, x, _ = make_problem(6, 30, 2)
    assert wf_loss(ens2, None, x) == 0.0
    z = unit_vector(6, 77)
    assert wf_loss(ens2, None, z) == wf_loss(ens2, None, -z)


def test_wf_gradient_values():
    ens = single_sample([1.0, 0.0], 1.0)
    res = wf_gradient(ens, None, np.array([2.0, 0.0]))
    assert np.allclose(res.gradient, [6.0, 0.0])
    assert res.zero_crossings == 0
    z0 = np.zeros(2)
    assert np.array_equal(wf_gradient(ens, None, z0).gradient, [0.0, 0.0])


def test_wf_finite_difference_oracle():
    rng = np.random.Generator(np.random.Philox(101))
    worst = 0.0
    for trial in range(100):
        n = int(rng.integers(2, 21))
        m = int(rng.integers(n, 201))
        ens, x, _ = make_problem(n, m, 900 + trial)
        z = rng.standard_normal(n)
        res = wf_gradient(ens, None, z)
        fd = central_diff(wf_loss, ens, z)
        rel = np.linalg.norm(res.gradient - fd) / max(np.linalg.norm(fd), 1e-30)
        worst = max(worst, rel)
    assert worst <= 1e-6


def test_gradients_are_odd():
    ens, x, _ = make_problem(7, 35, 3)
    rng = np.random.Generator(np.random.Philox(5))
    for _ in range(20):
        z = rng.standard_normal(7)
        ga = rwf_gradient(ens, None, z).gradient
        gb = rwf_gradient(ens, None, -z).gradient
        assert np.array_equal(gb, -ga)
        wa = wf_gradient(ens, None, z).gradient
        wb = wf_gradient(ens, None, -z).gradient
        assert np.array_equal(wb, -wa)


def test_full_gradient_is_weighted_block_average():
    ens, x, _ = make_problem(6, 29, 4)
    sched = partition_blocks(29, 4)
    z = unit_vector(6, 13)
    full = rwf_gradient(ens, None, z).gradient
    acc = np.zeros(6)
    for t in range(4):
        idx = sched.indices(t)
        acc += len(idx) * rwf_gradient(ens, sched.block(t), z).gradient
    assert np.allclose(acc / 29, full, rtol=1e-12, atol=1e-14)


def test_subset_forms_agree():
    ens, x, _ = make_problem(5, 40, 6)
    z = unit_vector(5, 21)
    by_slice = rwf_gradient(ens, slice(10, 30), z)
    by_array = rwf_gradient(ens, np.arange(10, 30), z)
    assert np.array_equal(by_slice.gradient, by_array.gradient)
    assert by_slice.loss == by_array.loss


def test_subset_validation():
    ens, x, _ = make_problem(5, 40, 7)
    z = unit_vector(5, 22)
    with pytest.raises(ParameterError):
        rwf_loss(ens, slice(3, 3), z)  # empty
    with pytest.raises(ParameterError):
        rwf_loss(ens, slice(0, 40, 2), z)  # strided
    with pytest.raises(ParameterError):
        rwf_loss(ens, np.array([0, 40]), z)  # out of range
    with pytest.raises(ParameterError):
        rwf_gradient(ens, None, np.array([1.0, np.inf, 0, 0, 0]))


def test_losses_nonnegative_and_zero_counts_bounded():
    ens, x, _ = make_problem(6, 50, 8)
    rng = np.random.Generator(np.random.Philox(31))
    for _ in range(25):
        z = rng.standard_normal(6) * rng.uniform(0.1, 4.0)
        res = rwf_gradient(ens, None, z)
        assert res.loss >= 0.0
        assert 0 <= res.zero_crossings <= 50
        assert wf_loss(ens, None, z) >= 0.0
