"""Acceptance criteria 1-9.

Each test records one PASS/FAIL line (printed in the terminal summary) and then
asserts at the stated tolerance.  Simulation runs are shared between criteria
through module-scoped fixtures.
"""

import filecmp
import itertools
import time
import warnings

import numpy as np
import pytest

from conftest import brute_force_paths, random_model, record_criterion
from schmm_lmpc.config import load_config
from schmm_lmpc.lmpc import CostWeights, synthesize_gain
from schmm_lmpc.presets import double_integrator_3d, reference_model
from schmm_lmpc.runtime import run_simulation, time_to_threshold
from schmm_lmpc.schmm import (FilterState, SchmmModel, DelayTrace, dropout_probability, em_fit,
                              filter_update, incremental_em_update, init_model, sample_trace, save_model)
from schmm_lmpc.topology import AgentDynamics, build_compact, build_global, random_connected_graph

TARGET_MEANS = (46.00, 49.85, 58.17)
CSV_FILES = ["states.csv", "inputs.csv", "errors.csv", "delta_max.csv", "delays.csv", "channel.csv"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """Criterion-1 training run, reused as the channel model of criterion 7."""
    gen = reference_model()
    trace = sample_trace(gen, 10_000, 2024)
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        model, hist = em_fit(init_model(3, 4, trace, rng_seed=0), trace, 50, 1e-8)
    elapsed = time.perf_counter() - t0
    path = tmp_path_factory.mktemp("trained") / "trained.model"
    save_model(model, path)
    return {"model": model, "history": hist, "elapsed": elapsed, "path": path, "generator": gen}


def _run_ring(trained, outdir):
    cfg = load_config(pytest_data() / "example2.cfg").with_overrides(
        network__channel_model=str(trained["path"]), network__agent_model=str(trained["path"]),
        simulation__steps=2000, simulation__output=str(outdir))
    t0 = time.perf_counter()
    result = run_simulation(cfg)
    elapsed = time.perf_counter() - t0
    result.write(outdir)
    return result, elapsed


def pytest_data():
    from pathlib import Path
    return Path(__file__).resolve().parents[1] / "src" / "schmm_lmpc" / "data"


@pytest.fixture(scope="module")
def ring_run(trained, tmp_path_factory):
    return _run_ring(trained, tmp_path_factory.mktemp("ring") / "run")


@pytest.fixture(scope="module")
def complete_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("complete") / "run"
    cfg = load_config(pytest_data() / "example1.cfg").with_overrides(
        simulation__steps=1000, simulation__output=str(out))
    result = run_simulation(cfg)
    result.write(out)
    return result


# --------------------------------------------------------------------------

def test_criterion_1_model_recovery(trained):
    model, gen = trained["model"], trained["generator"]
    means = model.mu[:3]
    best = min(itertools.permutations(means), key=lambda p: np.abs(np.subtract(p, TARGET_MEANS)).max())
    mean_err = float(np.abs(np.subtract(best, TARGET_MEANS)).max())
    drop_err = abs(dropout_probability(model) - dropout_probability(gen))
    ok = mean_err <= 2.0 and drop_err <= 0.02 and trained["elapsed"] < 60.0
    record_criterion(1, ok, f"means {np.round(np.sort(means), 2).tolist()} (max err {mean_err:.3f} ms), "
                            f"dropout err {drop_err:.4f}, {trained['elapsed']:.1f} s")
    assert mean_err <= 2.0
    assert drop_err <= 0.02
    assert trained["elapsed"] < 60.0


def test_criterion_2_em_monotone():
    worst = 0.0
    for case in range(50):
        rng = np.random.default_rng(case)
        n = int(rng.integers(1, 5))
        g = int(rng.integers(1, 4))
        T = int(rng.integers(2, 501))
        trace = sample_trace(random_model(rng, n, g), T, case)
        start = random_model(rng, n, g)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            _, hist = em_fit(start, trace, 30, 0.0)
        worst = min(worst, float(np.diff(hist).min()))
    ok = worst >= -1e-9
    record_criterion(2, ok, f"50 pairs, largest decrease {max(0.0, -worst):.2e} (slack 1e-9)")
    assert ok


def test_criterion_3_filter_vs_enumeration():
    matches = 0
    for case in range(100):
        rng = np.random.default_rng(10_000 + case)
        n = int(rng.integers(1, 4))
        model = random_model(rng, n, int(rng.integers(1, 4)))
        T = int(rng.integers(1, 9))
        taus = sample_trace(model, T, case).samples
        filt = FilterState.initial(model)
        for tau in taus:
            filt = filter_update(model, filt, tau)
        _, marg = brute_force_paths(model, taus)
        matches += filt.last_state == int(np.argmax(marg[-1]))
    record_criterion(3, matches == 100, f"{matches}/100 cases")
    assert matches == 100


def test_criterion_4_incremental_contracts():
    gen = reference_model()
    rng = np.random.default_rng(4)
    noop = all(incremental_em_update(gen, float(t), 0.0, bin_width=10.0).equals(gen)
               for t in sample_trace(gen, 50, 4).samples)
    # stationary (constant) stream; its batch-EM fixed point is computed offline
    tau = 48.0
    start = SchmmModel(pi=[1.0], trans=[[1.0]], mix=[[0.7, 0.3]], mu=[44.0, 1e5], sigma=[3.0, 1e-4])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fixed, _ = em_fit(start, DelayTrace(np.full(200, tau)), 200, 0.0)
    fixed_point = np.r_[fixed.pi, fixed.trans.ravel(), fixed.mu[:-1], fixed.sigma[:-1]]

    def distance(m):
        return float(np.linalg.norm(np.r_[m.pi, m.trans.ravel(), m.mu[:-1], m.sigma[:-1]] - fixed_point))

    model, dists = start, [distance(start)]
    for k in range(1, 1001):
        model = incremental_em_update(model, tau, 0.1)
        if k % 100 == 0:
            dists.append(distance(model))
    monotone = bool(np.all(np.diff(dists) <= 1e-6))
    ok = noop and monotone
    record_criterion(4, ok, f"eta=0 no-op {noop}; distances {dists[0]:.3g} -> {dists[-1]:.3g}, "
                            f"monotone {monotone}")
    assert noop
    assert monotone


def test_criterion_5_gain_certificates():
    A, B, tr = double_integrator_3d(0.01)
    dyn = AgentDynamics(A, B, tr)
    weights = CostWeights.identity(6, 4)
    worst_rho, worst_dv, worst_recon, count = 0.0, -np.inf, 0.0, 0
    for case in range(100):
        rng = np.random.default_rng(case)
        N = int(rng.integers(1, 8))
        g = random_connected_graph(N, rng, p_extra=float(rng.uniform(0.0, 0.7)))
        A_m, B_m = build_global([dyn] * N)
        for i in range(N):
            gain = synthesize_gain(build_compact(g, A_m, B_m, i), weights)
            E = rng.normal(size=(100, 6 * N))
            E_next = E @ gain.closed_loop.T
            dV = ((E_next @ gain.P_v) * E_next).sum(axis=1) - ((E @ gain.P_v) * E).sum(axis=1)
            worst_rho = max(worst_rho, gain.spectral_radius)
            worst_dv = max(worst_dv, float(dV.max()))
            worst_recon = max(worst_recon, gain.reconstruction_error)
            count += 1
    ok = worst_rho < 1 and worst_dv < 0 and worst_recon < 1e-8
    record_criterion(5, ok, f"{count} gains on 100 graphs: max rho {worst_rho:.6f}, max dV {worst_dv:.3g}, "
                            f"max |K - Pi Omega^-1| {worst_recon:.1e}")
    assert ok


def test_criterion_6_cost_bound(ring_run, complete_run):
    gaps = [float((r.J - r.V).max()) for r in (ring_run[0], complete_run)]
    ok = max(gaps) <= 1e-8
    record_criterion(6, ok, f"max J - V over {ring_run[0].J.size + complete_run.J.size} agent-steps: {max(gaps):.3g}")
    assert ok


def test_criterion_7_distributed_consensus(ring_run):
    res, elapsed = ring_run
    e0, eT = res.e_norm[0], res.e_norm[-1]
    d0, dT = res.delta_max[0], res.delta_max[-1]
    ratios = eT / e0
    ok = bool(np.all(ratios < 0.01)) and dT < 0.01 * d0 and elapsed < 120.0
    k = time_to_threshold(res.e_norm, res.delta_max)
    record_criterion(7, ok, f"N=7, 20 s: worst error ratio {ratios.max():.2e}, delta_max ratio {dT / d0:.2e}, "
                            f"threshold at {k * res.ts / 1000 if k is not None else float('nan'):.2f} s, "
                            f"runtime {elapsed:.1f} s")
    assert np.all(ratios < 0.01)
    assert dT < 0.01 * d0
    assert elapsed < 120.0


def test_criterion_8_centralized_anchor(complete_run):
    res = complete_run
    k = time_to_threshold(res.e_norm, res.delta_max)
    t_s = float("inf") if k is None else k * res.ts / 1000.0
    drift = res.max_drift()
    ok = t_s <= 5.0 and drift < 0.05
    record_criterion(8, ok, f"N=9 complete: threshold at {t_s:.2f} s (limit 5 s), "
                            f"max model drift {drift:.4f} (limit 0.05)")
    assert t_s <= 5.0
    assert drift < 0.05


def test_criterion_9_determinism(trained, ring_run, tmp_path):
    first = ring_run[0]
    out_a = tmp_path / "a"
    first.write(out_a)
    second, _ = _run_ring(trained, tmp_path / "b")
    match, mismatch, errors = filecmp.cmpfiles(out_a, tmp_path / "b", CSV_FILES, shallow=False)
    ok = match == CSV_FILES
    record_criterion(9, ok, f"{len(match)}/{len(CSV_FILES)} CSV files bitwise identical")
    assert ok
