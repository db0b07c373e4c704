"""One test per acceptance criterion; each prints a pass/fail line in the terminal summary."""

from __future__ import annotations

import random
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compcbf.automata import compute_run_fragments
from compcbf.barrier import GridSpec, verify_local
from compcbf.casestudies import (KURAMOTO_KEY_X1, KURAMOTO_KEY_X4, ROOM_KEY, data_json, kuramoto_case,
                                 kuramoto_certificates, room_case, room_certificate)
from compcbf.cli import decomposition_files
from compcbf.comparison import Linear, Power, check_small_gain, gamma_matrix, max_form_conversion
from compcbf.automata import Automaton
from compcbf.policy import simulate
from compcbf.synthesis import INFEASIBLE_OVERLAP, Template, synthesize_cegis
from compcbf.system import (TWO_PI, build_kuramoto_network, build_room_network, kuramoto_monolithic_step,
                            room_monolithic_step, step_interconnected)

from test_automata import lasso_oracle, random_automaton
from test_synthesis import toy_config, toy_problem

GOLDEN = Path(__file__).resolve().parent / "golden" / "example1"
PI = np.pi


def test_1_example_decomposition(record):
    t0 = time.perf_counter()
    files = decomposition_files(Automaton.from_json(data_json("example1.json")))
    elapsed = time.perf_counter() - t0
    names = ("fragments.json", "fragments_by_prop.json", "triplets.json")
    same = [files[n].encode() == (GOLDEN / n).read_bytes() for n in names]
    ok = all(same) and elapsed < 1.0
    record("1 (example decomposition)", ok, f"golden files identical {sum(same)}/3, {elapsed:.3f} s")
    assert ok


def _gains(n):
    rooms, _ = build_room_network(n)
    osc, _ = build_kuramoto_network(n)
    g_room = gamma_matrix([room_certificate()] * n, rooms.wiring())
    certs = kuramoto_certificates(osc)
    wiring = osc.wiring()
    g_x1 = gamma_matrix([certs[KURAMOTO_KEY_X1]] * n, wiring)
    g_x4 = gamma_matrix([certs[KURAMOTO_KEY_X4]] * n, wiring)
    return [(g_room, 0.95, 5e-3), (g_x1, 0.8736, 1e-3), (g_x4, 0.5824, 1e-3)]


def test_2_gain_reproduction(record):
    t0 = time.perf_counter()
    rows = [(g[(0, 1)].c, want, tol, check_small_gain(g)) for g, want, tol in _gains(100)]
    elapsed = time.perf_counter() - t0
    # the off-diagonal gain does not depend on the network size
    large = [(g[(0, 1)].c, check_small_gain(g)) for g, _, _ in _gains(1000)]
    ok = (all(abs(c - want) <= tol and sg for c, want, tol, sg in rows) and elapsed < 1.0
          and all(abs(c - r[0]) < 1e-15 and sg for (c, sg), r in zip(large, rows)))
    detail = ", ".join(f"{c:.6f} (want {want} +- {tol:g})" for c, want, tol, _ in rows)
    record("2 (gain reproduction)", ok, f"{detail}; small-gain all pass; {elapsed:.3f} s at N=100")
    assert ok


def test_3a_room_certificate_verification(record):
    cert = room_certificate()
    sys, _ = build_room_network(3)
    t0 = time.perf_counter()
    rep = verify_local(cert, sys.subsystems[0], GridSpec(state_step=1e-2, tolerance=5e-2))
    elapsed = time.perf_counter() - t0
    ok = rep.passed and elapsed < 60.0
    status = ", ".join(f"{k} {v.status} (worst+margin {v.worst_with_margin:.4g})" for k, v in rep.conditions.items())
    record("3a (room certificate)", ok, f"{status}; {elapsed:.1f} s")
    assert ok, rep.to_text()


def test_3b_oscillator_certificate_regions(record):
    sys, _ = build_kuramoto_network(3)
    spec = GridSpec(state_step=1e-2, inset=1e-3, tolerance=5e-2, conditions=("alpha", "initial", "unsafe"))
    t0 = time.perf_counter()
    reps = [verify_local(c, sys.subsystems[0], spec) for c in kuramoto_certificates(sys).values()]
    elapsed = time.perf_counter() - t0
    ok = all(r.passed for r in reps) and elapsed < 60.0
    status = "; ".join(", ".join(f"{k} {v.status}" for k, v in r.conditions.items()) for r in reps)
    record("3b (oscillator certificates)", ok, f"{status}; {elapsed:.1f} s")
    assert ok


def _room_rollouts(n, runs, horizon, seed=0):
    case = room_case(n)
    barrier = case.barrier_fn(ROOM_KEY)
    rng = np.random.default_rng(seed)
    return [simulate(case.system, case.policy, case.labeling, rng.uniform(20.5, 22.5, n), horizon, barrier)
            for _ in range(runs)]


def _oscillator_rollouts(n, runs, horizon, seed=0):
    case = kuramoto_case(n)
    rng = np.random.default_rng(seed)
    out = {}
    for key, (lo, hi), bad in ((KURAMOTO_KEY_X1, (5 * PI / 12, 7 * PI / 12), [(0, PI / 3), (2 * PI / 3, PI)]),
                               (KURAMOTO_KEY_X4, (17 * PI / 12, 19 * PI / 12), [(PI, 4 * PI / 3), (5 * PI / 3, TWO_PI)])):
        out[key] = ([simulate(case.system, case.policy, case.labeling, rng.uniform(lo, hi, n), horizon)
                     for _ in range(runs)], bad)
    return out


def _entries(states, bad):
    # any single subsystem inside an unsafe interval counts as an entry
    return int(sum(np.count_nonzero((states >= lo) & (states <= hi)) for lo, hi in bad))


@pytest.fixture(scope="module")
def room_traces():
    t0 = time.perf_counter()
    traces = _room_rollouts(1000, 50, 200)
    return traces, time.perf_counter() - t0


def test_4_closed_loop_safety(record, room_traces):
    traces, room_time = room_traces
    t0 = time.perf_counter()
    osc = _oscillator_rollouts(1000, 5, 200)
    elapsed = room_time + time.perf_counter() - t0
    room_entries = sum(_entries(t.states, [(0.0, 20.0), (23.0, 45.0)]) for t in traces)
    b_max = max(float(t.barrier.max()) for t in traces)
    osc_entries = {k.label(): sum(_entries(t.states, bad) for t in ts) for k, (ts, bad) in osc.items()}
    ok = room_entries == 0 and b_max <= 40.0 + 1e-6 and not any(osc_entries.values()) and elapsed < 300.0
    record("4 (closed-loop safety)", ok,
           f"rooms: {room_entries} unsafe entries, max B {b_max:.4f}; oscillators: {osc_entries}; {elapsed:.1f} s")
    assert ok


def test_5_decrease_along_rollouts(record, room_traces):
    traces, _ = room_traces
    worst = max(float(np.max(t.barrier[1:] - 0.95 * t.barrier[:-1])) for t in traces)
    ok = worst <= 1e-6
    record("5 (decrease along rollouts)", ok, f"max B(k+1) - 0.95 B(k) = {worst:.4f} (bound 1e-6)")
    assert ok


def test_6_oracle_equivalence(record):
    rng = random.Random(2024)
    mismatches = 0
    for _ in range(200):
        a = random_automaton(rng)
        mismatches += set(compute_run_fragments(a)) != lasso_oracle(a)
    nrng = np.random.default_rng(6)
    rooms, _ = build_room_network(5)
    osc, _ = build_kuramoto_network(5)
    step_err = 0.0
    for _ in range(100):
        x = nrng.uniform(0, 45, 5)
        u = nrng.uniform(0, 1, 5)
        step_err = max(step_err, float(np.max(np.abs(step_interconnected(rooms, x, u) - room_monolithic_step(x, u)))))
        x = nrng.uniform(0, TWO_PI, 5)
        u = nrng.choice(np.arange(-6, 7) / 10.0, 5)
        d = np.mod(step_interconnected(osc, x, u) - kuramoto_monolithic_step(x, u), TWO_PI)
        step_err = max(step_err, float(np.max(np.minimum(d, TWO_PI - d))))
    ok = mismatches == 0 and step_err <= 1e-12
    record("6 (oracle equivalence)", ok, f"{mismatches} fragment mismatches in 200 automata; max step error {step_err:.2e}")
    assert ok


def test_7_cegis_soundness(record):
    t0 = time.perf_counter()
    sub, regions = toy_problem()
    res = synthesize_cegis(Template.polynomial(1, 2), sub, regions, sub.inputs, toy_config(), name="toy")
    indep = res.success and verify_local(res.certificate, sub,
                                         GridSpec(state_step=1e-2, internal_step=1e-2, tolerance=1e-3)).passed
    sub2, overlap = toy_problem(unsafe=(0.1, 2.0))
    bad = synthesize_cegis(Template.polynomial(1, 2), sub2, overlap, sub2.inputs, toy_config())
    elapsed = time.perf_counter() - t0
    rejected = not bad.success and bad.iterations == 0 and bad.reason == INFEASIBLE_OVERLAP
    ok = indep and rejected and elapsed < 120.0
    record("7 (CEGIS soundness)", ok, f"toy certificate after {res.iterations} iterations, independent check "
           f"{'passes' if indep else 'fails'}; overlap rejected before iterating: {rejected}; {elapsed:.1f} s")
    assert ok


unit = st.floats(min_value=1e-6, max_value=1 - 1e-6)
positive = st.floats(min_value=1e-3, max_value=1e3)
gamma_hat = st.one_of(positive.map(Linear), st.tuples(positive, st.floats(0.25, 4.0)).map(lambda t: Power(*t)))
level = st.floats(min_value=0.0, max_value=1e4)
MAX_FORM = {"cases": 0, "violations": 0}


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(unit, gamma_hat, unit, level, level)
def _max_form_case(k, g_hat, p, b, w):
    kappa, gamma_w = max_form_conversion(Linear(k), g_hat, p)
    additive = k * b + g_hat(w)
    bound = max(kappa(b), gamma_w(w))
    MAX_FORM["cases"] += 1
    MAX_FORM["violations"] += additive > bound * (1 + 1e-12)


def test_8_max_form_conversion(record):
    MAX_FORM.update(cases=0, violations=0)
    _max_form_case()
    ok = MAX_FORM["violations"] == 0 and MAX_FORM["cases"] >= 1000
    record("8 (max-form conversion)", ok, f"{MAX_FORM['violations']} violations in {MAX_FORM['cases']} random tuples")
    assert ok


@pytest.mark.slow
def test_4_full_scale_rollouts():
    traces = _room_rollouts(10_000, 3, 200)
    assert all(_entries(t.states, [(0.0, 20.0), (23.0, 45.0)]) == 0 for t in traces)
    assert max(float(t.barrier.max()) for t in traces) <= 40.0 + 1e-6
    for ts, bad in _oscillator_rollouts(10_000, 1, 200).values():
        assert all(_entries(t.states, bad) == 0 for t in ts)
