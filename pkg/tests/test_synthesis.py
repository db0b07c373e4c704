from __future__ import annotations

import numpy as np
import pytest

from compcbf.barrier import GridSpec, LocalCertificate, verify_local
from compcbf.comparison import Linear, Power
from compcbf.polynomial import Polynomial
from compcbf.regions import Box, Region
from compcbf.synthesis import (BUDGET_EXHAUSTED, INFEASIBLE_OVERLAP, CegisConfig, SynthesisError, SynthesisRegions,
                               Template, counterexample_search, synthesize_cegis)
from compcbf.system import subsystem_from_json

TOY = {"state_dim": 1, "internal_dim": 1, "inputs": {"finite": [-0.5, 0.0, 0.5]},
       "transition": ["0.5*x0 + u0 + 0.1*w0"], "state_region": [[[-2, 2]]], "internal_region": [[[-1, 1]]]}


def toy_problem(unsafe=(1.5, 2.0)):
    sub = subsystem_from_json(TOY)
    regions = SynthesisRegions(Region.of(Box.cube(-0.2, 0.2, 1)), Region.of(Box.cube(*unsafe, 1)),
                               sub.state_region, sub.internal_region)
    return sub, regions


def toy_config(**kw):
    base = dict(tolerance=1e-3, kappa_candidates=(Linear(0.5), Linear(0.8)),
                gamma_candidates=(Linear(0.1), Linear(0.5)))
    base.update(kw)
    return CegisConfig(**base)


@pytest.fixture(scope="module")
def toy_result():
    sub, regions = toy_problem()
    return synthesize_cegis(Template.polynomial(1, 2), sub, regions, sub.inputs, toy_config(), name="toy")


def test_toy_certificate_passes_independent_check(toy_result):
    assert toy_result.success and toy_result.level_ok
    cert = toy_result.certificate
    sub, _ = toy_problem()
    rep = verify_local(cert, sub, GridSpec(state_step=1e-2, internal_step=1e-2, tolerance=1e-3))
    assert rep.passed, rep.to_text()
    assert cert.eps_upper <= cert.eps_lower


def test_toy_certificate_by_hand(toy_result):
    # independent dense check of the four conditions, every input tried per state
    cert = toy_result.certificate
    xs = np.linspace(-2, 2, 2001)
    ws = np.linspace(-1, 1, 201)
    b = cert.barrier(xs[:, None])
    assert np.all(b >= cert.alpha(np.abs(xs)) - 1e-3)
    assert np.all(b[np.abs(xs) <= 0.2] <= cert.eps_upper + 1e-12)
    assert np.all(b[xs >= 1.5] > cert.eps_lower)
    best = np.full(xs.size, np.inf)
    for u in (-0.5, 0.0, 0.5):
        nxt = 0.5 * xs[:, None] + u + 0.1 * ws[None, :]
        ok = nxt <= 2.0
        excess = cert.barrier(nxt[..., None]) - cert.kappa_hat(b)[:, None] - cert.gamma_hat(np.abs(ws))[None, :]
        excess = np.where(ok, excess, np.inf)
        best = np.minimum(best, excess.max(axis=1))
    assert best.max() <= 1e-3


def test_overlap_fails_before_iterating():
    sub, regions = toy_problem(unsafe=(0.1, 2.0))
    res = synthesize_cegis(Template.polynomial(1, 2), sub, regions, sub.inputs, toy_config())
    assert not res.success and res.reason == INFEASIBLE_OVERLAP and res.iterations == 0


def test_zero_budget():
    sub, regions = toy_problem()
    res = synthesize_cegis(Template.polynomial(1, 2), sub, regions, sub.inputs, toy_config(max_iterations=0))
    assert not res.success and res.reason == BUDGET_EXHAUSTED and res.iterations == 0


def test_small_budget_reports_counterexamples():
    sub, regions = toy_problem()
    res = synthesize_cegis(Template.polynomial(1, 2), sub, regions, sub.inputs, toy_config(max_iterations=2))
    assert not res.success and res.reason == BUDGET_EXHAUSTED and res.iterations == 2
    assert res.counterexamples


def test_deterministic_log(toy_result):
    sub, regions = toy_problem()
    again = synthesize_cegis(Template.polynomial(1, 2), sub, regions, sub.inputs, toy_config(), name="toy")
    assert again.log_csv() == toy_result.log_csv()
    assert toy_result.log_csv().splitlines()[0] == ("iteration,alpha,kappa_hat,gamma_hat,resolution,"
                                                    "learner_violation,witnesses,new_witnesses,worst_condition,"
                                                    "worst_violation,event")


def test_witness_set_grows_while_counterexamples_remain(toy_result):
    rows = [r for r in toy_result.log if r.get("event") == "counterexamples added"]
    assert rows and all(r["new_witnesses"] > 0 for r in rows)
    counts = [r["witnesses"] for r in toy_result.log]
    assert counts == sorted(counts) or len(set(r["kappa_hat"] for r in toy_result.log)) > 1


def test_random_learner_runs():
    sub, regions = toy_problem()
    res = synthesize_cegis(Template.polynomial(1, 2), sub, regions, sub.inputs,
                           toy_config(learner_mode="random", max_iterations=5, random_samples=500))
    assert res.iterations <= 5
    if res.success:
        assert verify_local(res.certificate, sub, GridSpec(state_step=1e-2, internal_step=1e-2, tolerance=1e-3)).passed


def test_counterexample_search_finds_unsafe_witness():
    sub, regions = toy_problem()
    zero = LocalCertificate(Polynomial.univariate([0.0]), Power(1e-3, 2.0), 0.0, 0.5, regions.initial,
                            regions.unsafe, regions.state, regions.internal,
                            kappa_hat=Linear(0.5), gamma_hat=Linear(0.1))
    cex = counterexample_search(zero, sub, regions, sub.inputs, 0.1)
    assert cex is not None and cex.condition == "unsafe"
    assert cex.magnitude == pytest.approx(0.5 + 1e-9)


def test_counterexample_search_residual_is_within_tolerance(toy_result):
    # at x = 0, w = 0 the decrease bound holds with equality for any valid barrier,
    # so at zero tolerance only a sub-tolerance residual may remain
    sub, regions = toy_problem()
    cex = counterexample_search(toy_result.certificate, sub, regions, sub.inputs, 0.01)
    assert cex is None or cex.magnitude <= 1e-3


def test_template_and_config_validation():
    t = Template.polynomial(1, 2)
    assert t.parameter_count == 3
    assert Template.from_json(t.to_json()).parameter_count == 3
    with pytest.raises(SynthesisError):
        CegisConfig.from_json({"max_iteration": 3})
    with pytest.raises(SynthesisError):
        CegisConfig(kappa_candidates=(Power(0.5, 2.0),))
    cfg = toy_config()
    assert CegisConfig.from_json(cfg.to_json()) == cfg


def test_unbounded_region_rejected():
    sub, regions = toy_problem()
    wide = SynthesisRegions(regions.initial, regions.unsafe, Region.of(Box.cube(-np.inf, np.inf, 1)),
                            regions.internal)
    with pytest.raises(SynthesisError):
        synthesize_cegis(Template.polynomial(1, 2), sub, wide, sub.inputs, toy_config())
