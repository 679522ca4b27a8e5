"""End-to-end acceptance checks. Run with ``pytest tests/test_acceptance.py -s`` to see the summary lines."""
import time

import numpy as np
import pytest

from branchjump.branching import born_weights, decompose_basis, decompose_projectors
from branchjump.evolution import evolver_for
from branchjump.hilbert import random_state
from branchjump.model import (
    built_in_measurement,
    built_in_rabi,
    bundled_scenario_names,
    load_bundled,
    projectors_from_basis,
    random_model,
)
from branchjump.rates import RateField, current_matrix, current_matrix_experience
from branchjump.trajectory import run_ensemble
from branchjump.verify import MasterEquationError, equivariance_report, integrate_master_equation


def report(number, ok, detail):
    print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


def fuzz_models(n, seed=2026, **kw):
    rng = np.random.default_rng(seed)
    return [random_model(rng, **kw) for _ in range(n)]


def test_criterion_1_equivariance_on_random_models():
    start = time.perf_counter()
    devs = [equivariance_report(m, tolerance=1e-5).max_abs_deviation for m in fuzz_models(20, max_dim=8, t_max=10.0)]
    elapsed = time.perf_counter() - start
    worst = max(devs)
    report(1, worst <= 1e-5 and elapsed <= 60, f"max deviation {worst:.2e}, {elapsed:.1f} s")


def test_criterion_2_current_forms_agree():
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(50):
        m = random_model(rng)
        psi = random_state(m.dim, rng)
        h = m.schedule[0].hamiltonian
        j_proj = current_matrix(decompose_projectors(psi, projectors_from_basis(m.basis)), h)
        j_exp = current_matrix_experience(decompose_basis(psi, m.basis), m.basis, h)
        worst = max(worst, np.max(np.abs(j_proj - j_exp)))
    report(2, worst <= 1e-12, f"max |difference| {worst:.2e} over 50 models")


@pytest.mark.parametrize("omega", [1.0, 2.5])
def test_criterion_3_rabi_closed_forms(omega):
    m = built_in_rabi(omega)
    quarter = np.pi / (2 * omega)
    ts = np.linspace(0, quarter, 402)[1:-1]
    J, T, w = RateField(m).at(ts)
    err_j = np.max(np.abs(J[:, 1, 0] - omega * np.sin(2 * omega * ts)))
    err_t = np.max(np.abs(T[:, 1, 0] - 2 * omega * np.tan(omega * ts)))
    full = np.linspace(0, m.t_max, 1001)
    err_w = np.max(np.abs(born_weights(evolver_for(m).states(full), m.basis)[:, 1] - np.sin(omega * full) ** 2))
    worst = max(err_j, err_t, err_w)
    report(3, worst <= 1e-9, f"omega={omega}: J {err_j:.1e}, T {err_t:.1e}, w {err_w:.1e}")


def test_criterion_4_rabi_monte_carlo():
    start = time.perf_counter()
    stats = run_ensemble(built_in_rabi(1.0), 10_000, 42, 1e-3)
    elapsed = time.perf_counter() - start
    sigma = 0.005
    f_quarter = stats.occupation[stats.index_near(np.pi / 4), 1]
    f_half = stats.occupation[stats.index_near(np.pi / 2), 1]
    ok = abs(f_quarter - 0.5) <= 4 * sigma and abs(f_half - 1.0) <= 4 * sigma and elapsed <= 60
    report(4, ok, f"f(pi/4)={f_quarter:.4f}, f(pi/2)={f_half:.4f}, {elapsed:.1f} s")


def test_criterion_5_measurement_statistics():
    m = built_in_measurement([np.sqrt(0.36), np.sqrt(0.64)])
    start = time.perf_counter()
    stats = run_ensemble(m, 10_000, 7, 1e-3)
    elapsed = time.perf_counter() - start
    final = stats.occupation[-1]
    sigma = np.sqrt(np.array([0.36, 0.64]) * np.array([0.64, 0.36]) / 10_000)
    within = np.all(np.abs(final[1:] - [0.36, 0.64]) <= 4 * sigma)
    born_ready = decompose_basis(evolver_for(m).state(m.t_max), m.basis).reported_weights()[0]
    ok = within and born_ready == 0.0 and final[0] <= 1e-3 and elapsed <= 60
    report(5, ok, f"final {final[1]:.4f}/{final[2]:.4f}, ready Born {born_ready}, ready empirical {final[0]}, {elapsed:.1f} s")


def _structural_violations(m):
    out = []
    ev = evolver_for(m)
    ts = np.linspace(0, m.t_max, 41)[1:-1]
    J, T, w = RateField(m).at(ts)
    scale = max(1.0, np.abs(J).max())
    if np.max(np.abs(J + np.swapaxes(J, 1, 2))) > 1e-10 * scale:
        out.append("antisymmetry")
    if np.any(T < 0):
        out.append("negative rate")
    h = 1e-6
    segs = ev.segments_for(ts)
    plus = born_weights(ev.states(ts + h, segs), m.basis)
    minus = born_weights(ev.states(ts - h, segs), m.basis)
    if np.max(np.abs(J.sum(axis=2) - (plus - minus) / (2 * h))) > 1e-6:
        out.append("row sums")
    states = ev.states(np.linspace(0, m.t_max, 101))
    if np.max(np.abs(np.linalg.norm(states, axis=1) ** 2 - 1)) > 1e-9:
        out.append("norm")
    grid = np.linspace(0, m.t_max, 21)
    p = integrate_master_equation(m, born_weights(states[:1], m.basis)[0], grid)
    if np.max(np.abs(p.sum(axis=1) - 1)) > 1e-8:
        out.append("probability conservation")
    a = run_ensemble(m, 300, 5, 1e-2, threads=1, keep_trajectories=True, batch_size=64)
    b = run_ensemble(m, 300, 5, 1e-2, threads=4, keep_trajectories=True, batch_size=64)
    c = run_ensemble(m, 300, 5, 1e-2, threads=1, keep_trajectories=True, batch_size=300)
    if not (np.array_equal(a.counts, b.counts) and np.array_equal(a.counts, c.counts)):
        out.append("determinism")
    elif [t.jump_events for t in a.trajectories] != [t.jump_events for t in b.trajectories]:
        out.append("determinism")
    return out


def test_criterion_6_structural_invariants():
    models = [load_bundled(name) for name in bundled_scenario_names()]
    models += fuzz_models(10, seed=11, max_dim=8, t_max=4.0)
    models += fuzz_models(3, seed=12, max_dim=6, t_max=3.0, n_segments=3)
    failures = {}
    for k, m in enumerate(models):
        bad = _structural_violations(m)
        if bad:
            failures[m.name or k] = bad
    report(6, not failures, f"{len(models)} models, failures {failures or 'none'}")


def test_criterion_7_mutation_detected():
    models = [built_in_rabi(1.0), built_in_measurement([np.sqrt(0.36), np.sqrt(0.64)])]
    models += fuzz_models(5, seed=3, max_dim=8, t_max=10.0)
    detected = 0
    for m in models:
        try:
            r = equivariance_report(m, tolerance=1e-5, rectify=False)
            detected += not r.passed
        except MasterEquationError:
            detected += 1
    report(7, detected == len(models), f"mutation caught on {detected}/{len(models)} models")
