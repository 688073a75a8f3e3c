"""End-to-end acceptance checks, one test per criterion.

Each test registers a verdict line (echoed after the run by the conftest
hook) and then asserts the requirement as written. Two checks are expected
to fail on this configuration: full-batch amplitude descent from a random
start (criterion 3's regime) stalls at spurious stationary points for a
growing fraction of seeds as n rises, which also breaks the no-intercept
iteration-count fit of criterion 4. The failures are left honest; the
verdict lines carry the measured numbers and the nearby readings that do
hold (with-intercept fit, resampled K=8 fit).
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import make_problem, record_acceptance, unit_vector
from phaseflow.ensemble import generate_gaussian_ensemble, observe
from phaseflow.harness import ExperimentSpec, run_experiment
from phaseflow.objective import rwf_gradient, rwf_loss, wf_gradient, wf_loss
from phaseflow.solver import SolverConfig, run

DIMS_FIT = (100, 200, 400, 800)
TOL_GRID = (1e-3, 1e-5, 1e-7)


# ---------------------------------------------------------------------------
# shared heavy computations


@pytest.fixture(scope="module")
def recovery_runs():
    """100 full-batch runs at n=100, m=10n, mu=0.5, shared by criteria 3, 4."""
    cfg = SolverConfig(mu=0.5, gamma=0.1, K=1, max_iters=500, tol=1e-7)
    t0 = time.perf_counter()
    reports = []
    for seed in range(100):
        ens, x, z0 = make_problem(100, 1000, seed)
        reports.append(run(cfg, ens, None, z0, x))
    return reports, time.perf_counter() - t0


def _first_crossings(trace, targets):
    d = trace.dist_rel
    out = {}
    for t in targets:
        idx = np.nonzero(d <= t)[0]
        out[t] = int(idx[0]) if idx.size else None
    return out


def _collect_medians(K, seeds_per_cell, seed_base):
    """Median iterations-to-tol per (n, tol) cell over converged runs."""
    cfg = SolverConfig(mu=0.5, gamma=0.1, K=K, max_iters=500, tol=1e-7)
    meds, conv = [], {}
    for n in DIMS_FIT:
        cross = {t: [] for t in TOL_GRID}
        hits = 0
        for seed in range(seeds_per_cell):
            ens, x, z0 = make_problem(n, 10 * n, seed_base + 1000 * n + seed)
            rep = run(cfg, ens, None, z0, x)
            if not rep.converged:
                continue
            hits += 1
            for t, k in _first_crossings(rep.trace, TOL_GRID).items():
                if k is not None:
                    cross[t].append(k)
        conv[n] = hits
        for t in TOL_GRID:
            meds.append((n, t, float(np.median(cross[t])) if cross[t] else None))
        print(f"fit cell n={n} K={K}: {hits}/{seeds_per_cell} converged")
    return meds, conv


@pytest.fixture(scope="module")
def iteration_medians():
    return _collect_medians(K=1, seeds_per_cell=200, seed_base=0)


def _fit_plane(meds, intercept):
    """Least squares of median T on (log n, log 1/tol); centered R^2."""
    pts = [(n, t, T) for n, t, T in meds if T is not None]
    y = np.array([T for _, _, T in pts], dtype=np.float64)
    cols = [np.log([n for n, _, _ in pts]),
            np.log([1.0 / t for _, t, _ in pts])]
    if intercept:
        cols.append(np.ones_like(y))
    X = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return coef, r2


# ---------------------------------------------------------------------------
# criteria


def test_criterion_01_lemma3_oracle(tmp_path):
    t0 = time.perf_counter()
    res = run_experiment(ExperimentSpec(kind="lemma3_check", plot=False,
                                        output_dir=str(tmp_path)))
    secs = time.perf_counter() - t0
    agg = res["aggregates"]
    frac = agg["fraction_within"]
    ok = agg["cells"] == 50 and frac is not None and frac >= 0.98 and secs <= 120
    record_acceptance(
        f"[ 1] {'PASS' if ok else 'FAIL'} closed-form update vs 1e6-sample "
        f"monte carlo: {agg['within_3sigma']}/{agg['components']} components "
        f"within 3 sigma ({100 * frac:.1f}%, need >=98%) over {agg['cells']} "
        f"(z, x) pairs in {secs:.0f}s")
    assert agg["cells"] == 50
    assert secs <= 120
    assert frac >= 0.98


def _fd_gradient(loss_fn, ens, z, h=1e-6):
    out = np.empty(z.size)
    for j in range(z.size):
        e = np.zeros(z.size)
        e[j] = h
        out[j] = (loss_fn(ens, None, z + e) - loss_fn(ens, None, z - e)) / (2 * h)
    return out


def test_criterion_02_gradient_oracle():
    worst_rwf = worst_wf = 0.0
    for i in range(100):
        g = np.random.Generator(np.random.Philox(60_000 + i))
        n = int(g.integers(2, 21))
        m = int(g.integers(max(n, 10), 201))
        x = unit_vector(n, 61_000 + i)
        ens = observe(generate_gaussian_ensemble(n, m, 62_000 + i), x)
        for _ in range(100):
            z = g.standard_normal(n)
            # keep the amplitude objective differentiable at z: no margin
            # smaller than the finite-difference step can resolve
            if np.min(np.abs(ens.vectors @ z)) > 1e-4 * np.linalg.norm(z):
                break
        else:
            pytest.fail("could not draw a point away from zero crossings")
        r = rwf_gradient(ens, None, z)
        assert r.zero_crossings == 0
        fd = _fd_gradient(rwf_loss, ens, z)
        worst_rwf = max(worst_rwf, float(np.linalg.norm(r.gradient - fd)
                                         / np.linalg.norm(fd)))
        w = wf_gradient(ens, None, z)
        fdw = _fd_gradient(wf_loss, ens, z)
        worst_wf = max(worst_wf, float(np.linalg.norm(w.gradient - fdw)
                                       / np.linalg.norm(fdw)))
    ok = worst_rwf <= 1e-5 and worst_wf <= 1e-6
    record_acceptance(
        f"[ 2] {'PASS' if ok else 'FAIL'} finite-difference gradient oracle, "
        f"100 instances: worst relative error amplitude {worst_rwf:.2e} "
        f"(need <=1e-5), intensity {worst_wf:.2e} (need <=1e-6)")
    assert worst_rwf <= 1e-5
    assert worst_wf <= 1e-6


def test_criterion_03_recovery_rate(recovery_runs):
    reports, secs = recovery_runs
    hits = sum(1 for r in reports if r.converged)
    record_acceptance(
        f"[ 3] {'PASS' if hits >= 95 and secs <= 60 else 'FAIL'} recovery "
        f"n=100 m=1000 K=1 mu=0.5: {hits}/100 seeds reached dist<=1e-7 "
        f"within 500 iterations (need >=95) in {secs:.0f}s; the rest sit at "
        f"stationary points of the full-batch amplitude loss")
    assert secs <= 60
    assert hits >= 95, (
        f"full-batch descent from a random start recovered {hits}/100 seeds; "
        f"the shortfall is a real property of this regime, not a bug")


def test_criterion_04_two_phase_structure(recovery_runs, iteration_medians):
    reports, _ = recovery_runs
    ratios = []
    for rep in reports:
        if not rep.converged or rep.t_gamma is None:
            continue
        d = rep.trace.dist_rel
        seg = d[rep.t_gamma:]
        prev, nxt = seg[:-1], seg[1:]
        keep = prev > 1e-14
        ratios.extend((nxt[keep] / prev[keep]).tolist())
    med_ratio = float(np.median(ratios))
    record_acceptance(
        f"[ 4] {'PASS' if med_ratio <= 0.9 else 'FAIL'} phase-2 contraction: "
        f"median per-step dist ratio after t_gamma {med_ratio:.3f} over "
        f"{len(ratios)} steps (need <=0.9)")

    meds, conv = iteration_medians
    coef0, r2_0 = _fit_plane(meds, intercept=False)
    coef1, r2_1 = _fit_plane(meds, intercept=True)
    meds8, _ = _collect_medians(K=8, seeds_per_cell=50, seed_base=5_000_000)
    coef8, r2_8 = _fit_plane(meds8, intercept=False)
    conv_txt = ", ".join(f"{n}: {conv[n]}/200" for n in DIMS_FIT)
    record_acceptance(
        f"[ 4] {'PASS' if r2_0 >= 0.8 else 'FAIL'} iteration fit "
        f"T = a*log n + b*log(1/tol) on converged-run medians: "
        f"a={coef0[0]:.2f} b={coef0[1]:.2f} R2={r2_0:.3f} (need >=0.8); "
        f"with intercept a={coef1[0]:.2f} b={coef1[1]:.2f} c={coef1[2]:.1f} "
        f"R2={r2_1:.3f}; resampled K=8 no-intercept R2={r2_8:.3f}; "
        f"converged {conv_txt}")
    assert med_ratio <= 0.9
    # leave the with-intercept and K=8 readings as printed diagnostics only:
    # the requirement names the two-term model on this regime's medians
    assert r2_0 >= 0.8, (
        f"no-intercept fit explains R2={r2_0:.3f} of the medians; the "
        f"log n / log(1/tol) plane needs a negative constant term here "
        f"(with intercept R2={r2_1:.3f})")


def test_criterion_05_tgamma_scaling(tmp_path):
    t0 = time.perf_counter()
    res = run_experiment(ExperimentSpec(kind="tgamma_sweep", plot=False,
                                        output_dir=str(tmp_path)))
    secs = time.perf_counter() - t0
    agg = res["aggregates"]
    dims = (100, 200, 400, 800, 1600)
    t05 = {n: agg[str(n)]["t_gamma_05"]["median"] for n in dims}
    t01 = {n: agg[str(n)]["t_gamma_01"]["median"] for n in dims}
    assert all(v is not None for v in list(t05.values()) + list(t01.values()))
    r05 = t05[1600] / t05[100]
    r01 = t01[1600] / t01[100]
    below = all(t05[n] <= t01[n] for n in dims)
    ok = r05 <= 2.5 and r01 <= 2.5 and below and secs <= 1800
    record_acceptance(
        f"[ 5] {'PASS' if ok else 'FAIL'} t_gamma growth over n=100..1600: "
        f"T(1600)/T(100) = {r05:.2f} at gamma 0.5, {r01:.2f} at gamma 0.1 "
        f"(need <=2.5); gamma-0.5 curve pointwise below gamma-0.1: {below}; "
        f"{secs:.0f}s")
    assert secs <= 1800
    assert r05 <= 2.5
    assert r01 <= 2.5
    assert below


def test_criterion_06_race_ordering(tmp_path):
    res = run_experiment(ExperimentSpec(kind="race", plot=False,
                                        output_dir=str(tmp_path)))
    agg = res["aggregates"]
    wins = {n: agg[str(n)]["rwf_win_fraction"] for n in (100, 200, 500)}
    ok = all(f >= 0.90 for f in wins.values())
    txt = ", ".join(f"{round(100 * wins[n])}/100 at n={n}" for n in wins)
    record_acceptance(
        f"[ 6] {'PASS' if ok else 'FAIL'} shared-seed race to dist<=1e-5: "
        f"amplitude (mu=0.5) beats intensity (mu=0.1) in {txt} (need >=90)")
    for n, f in wins.items():
        assert f >= 0.90, f"n={n}: amplitude won only {100 * f:.0f}/100"


def test_criterion_07_angle_growth(tmp_path):
    res = run_experiment(ExperimentSpec(kind="omega_trace", plot=False,
                                        output_dir=str(tmp_path)))
    agg = res["aggregates"]["500"]
    conv = agg["converged"]
    mono = agg["monotone_fraction"]["median"]
    tan0 = agg["tan_omega0"]["median"]
    target = 1.0 / math.sqrt(500 * math.log(500))
    factor = max(tan0 / target, target / tan0)
    ok = conv >= 20 and mono is not None and mono >= 0.95 and factor <= 3
    record_acceptance(
        f"[ 7] {'PASS' if ok else 'FAIL'} angle dynamics at n=500: "
        f"{conv} converged seeds (need >=20), median fraction of "
        f"non-decreasing phase-1 omega steps {mono:.3f} (need >=0.95), "
        f"median tan omega0 {tan0:.4f} vs 1/sqrt(n log n)={target:.4f} "
        f"(factor {factor:.2f}, need <=3)")
    assert conv >= 20
    assert mono >= 0.95
    assert factor <= 3


def test_criterion_08_timing_ratio(tmp_path):
    res = run_experiment(ExperimentSpec(kind="timing", plot=False,
                                        output_dir=str(tmp_path)))
    dims = (500, 1000, 2000, 4000)
    ratios = [res["aggregates"][str(n)]["ratio"] for n in dims]
    assert all(r is not None for r in ratios)
    increasing = all(b > a for a, b in zip(ratios, ratios[1:]))
    txt = ", ".join(f"{r:.1f}" for r in ratios)
    record_acceptance(
        f"[ 8] {'PASS' if increasing else 'FAIL'} spectral-init seconds over "
        f"descent-to-0.1 seconds, medians of 7 repetitions, n=500..4000: "
        f"{txt} (need increasing)")
    assert increasing, f"ratios not increasing: {txt}"


def test_criterion_09_state_evolution_tracking(tmp_path):
    res = run_experiment(ExperimentSpec(kind="state_evolution", plot=False,
                                        output_dir=str(tmp_path)))
    agg = res["aggregates"]
    expo = agg["exponent_fit"]["exponent"]
    dev = agg["overlay_max_alpha_dev_10"]
    ok = expo <= 0.1 and dev is not None and dev <= 0.1
    record_acceptance(
        f"[ 9] {'PASS' if ok else 'FAIL'} two-variable recursion: landmark "
        f"steps grow with n-exponent {expo:.3f} (need <=0.1); alpha overlay "
        f"deviation over first 10 iterations at n=64, 5e5 rows: {dev:.3f} "
        f"(need <=0.1)")
    assert expo <= 0.1
    assert dev <= 0.1


_TINY = {
    "tgamma_sweep": dict(dims=(24, 30), trials=2, K=2, max_iters=40),
    "race": dict(dims=(24,), trials=2, K=2, tol=1e-3, max_iters=300),
    "omega_trace": dict(dims=(30,), trials=3, K=1, tol=1e-4, max_iters=60),
    "timing": dict(dims=(24, 30), trials=2),
    "substages": dict(dims=(64,), trials=2, K=2, tol=1e-3, max_iters=150),
    "state_evolution": dict(dims=(128, 512), overlay_n=32,
                            overlay_rows=20_000, max_iters=6),
    "lemma3_check": dict(dims=(2, 3), trials=2, samples=2000),
}


def test_criterion_10_determinism(tmp_path, monkeypatch):
    bad = []
    for kind, kw in _TINY.items():
        blobs = []
        for tag, workers in (("a", "1"), ("b", "1"), ("c", "2")):
            monkeypatch.setenv("PHASEFLOW_WORKERS", workers)
            res = run_experiment(ExperimentSpec(
                kind=kind, plot=False, output_dir=str(tmp_path / f"{kind}_{tag}"),
                **kw))
            blob = {}
            for p in map(Path, res["csv"]):
                if p.name == "timing.csv":
                    continue  # wall-clock columns are exempt by design
                blob[p.name] = p.read_bytes()
            blobs.append(blob)
        if not (blobs[0] == blobs[1] == blobs[2]):
            bad.append(kind)
    ok = not bad
    record_acceptance(
        f"[10] {'PASS' if ok else 'FAIL'} determinism: "
        f"{len(_TINY) - len(bad)}/{len(_TINY)} subcommands byte-identical "
        f"across two runs and worker counts 1, 2 (timing.csv exempt)"
        + (f"; mismatched: {', '.join(bad)}" if bad else ""))
    assert not bad, f"outputs changed across runs/workers for: {bad}"
