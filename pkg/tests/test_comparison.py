from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compcbf.comparison import (Chain, GainMatrix, Identity, KFnError, Linear, Power, SmallGainError, Verdict, Zero,
                                check_small_gain, compare_identity, compose, compose_all, find_phi, gamma_matrix,
                                inverse, kfn_from_json, kfn_to_json, max_cycle_mean, max_form_conversion)
from compcbf.barrier import LocalCertificate
from compcbf.polynomial import Polynomial
from compcbf.regions import Box, Region

coef = st.floats(min_value=1e-2, max_value=1e2)
expo = st.floats(min_value=0.25, max_value=4.0)
kfn = st.one_of(st.just(Identity()), coef.map(Linear), st.tuples(coef, expo).map(lambda t: Power(*t)))
radius = st.floats(min_value=0.0, max_value=50.0)


def test_power_composition_closed_form():
    f = compose(Power(2.0, 3.0), Power(0.5, 2.0))
    # 2 (0.5 r^2)^3 = 0.25 r^6
    assert isinstance(f, Power)
    assert f.c == pytest.approx(0.25) and f.e == pytest.approx(6.0)


def test_normalization_of_unit_exponent_and_coefficient():
    assert compose(Linear(2.0), Linear(0.5)) == Identity()
    assert isinstance(compose(Power(3.0, 2.0), Power(1.0, 0.5)), Linear)


def test_chain_applies_right_to_left():
    c = Chain((Linear(2.0), Power(1.0, 2.0)))
    assert c(3.0) == pytest.approx(18.0)


def test_zero_gain():
    assert compose(Linear(3.0), Zero()) == Zero()
    assert compare_identity(Zero())[0] is Verdict.TRUE
    with pytest.raises(KFnError):
        Zero().inverse()


def test_invalid_coefficients():
    with pytest.raises(KFnError):
        Linear(0.0)
    with pytest.raises(KFnError):
        Power(1.0, -1.0)


@settings(max_examples=200, deadline=None)
@given(kfn, kfn, radius)
def test_compose_matches_pointwise(f, g, r):
    assert compose(f, g)(r) == pytest.approx(f(g(r)), rel=1e-9, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(kfn, radius)
def test_inverse_round_trip(f, r):
    assert inverse(f)(f(r)) == pytest.approx(r, rel=1e-9, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(kfn, min_size=1, max_size=4))
def test_json_round_trip(fs):
    f = compose_all(fs)
    g = kfn_from_json(kfn_to_json(f))
    for r in (0.0, 0.3, 2.0, 7.5):
        assert g(r) == pytest.approx(f(r), rel=1e-12, abs=1e-15)


def test_compare_identity_verdicts():
    assert compare_identity(Linear(0.9))[0] is Verdict.TRUE
    assert compare_identity(Linear(1.1))[0] is Verdict.FALSE
    assert compare_identity(Identity())[0] is Verdict.FALSE
    # c r^2 < r only on r < 1/c: false globally, true on a bounded range
    assert compare_identity(Power(0.5, 2.0))[0] is Verdict.FALSE
    assert compare_identity(Power(0.5, 2.0), bound=1.0)[0] is Verdict.TRUE


def test_max_form_conversion_formula():
    # kappa = 1 - (1 - psi)(1 - kappa_hat), gamma_w = gamma_hat / ((1 - kappa_hat) psi)
    kappa, gamma_w = max_form_conversion(Linear(0.65), Linear(0.5), 1 - 1e-9)
    assert kappa.c == pytest.approx(1 - 1e-9 * 0.35, abs=1e-15)
    assert gamma_w.c == pytest.approx(0.5 / (0.35 * (1 - 1e-9)), rel=1e-12)
    kappa, gamma_w = max_form_conversion(Linear(0.5), Power(0.2, 2.0), 0.5)
    assert kappa.c == pytest.approx(0.75)
    assert isinstance(gamma_w, Power) and gamma_w.c == pytest.approx(0.8) and gamma_w.e == 2.0


def test_max_form_conversion_rejects_non_linear_and_out_of_range():
    with pytest.raises(KFnError):
        max_form_conversion(Power(0.5, 2.0), Linear(1.0))
    with pytest.raises(KFnError):
        max_form_conversion(Linear(1.2), Linear(1.0))
    with pytest.raises(KFnError):
        max_form_conversion(Linear(0.5), Linear(1.0), 1.5)


def _cert(kappa_hat, gamma_hat, alpha):
    box = Region.of(Box.cube(0.0, 1.0, 1))
    return LocalCertificate(Polynomial.univariate([1.0, 0.0]), alpha, 0.0, 0.0, box, Region.empty(), box,
                            Region.of(Box.cube(0.0, 1.0, 2)), kappa_hat=kappa_hat, gamma_hat=gamma_hat)


def test_gamma_matrix_entries():
    c = _cert(Linear(0.65), Linear(0.5), Linear(1.5))
    g = gamma_matrix([c] * 4, [(i, (i + 1) % 4) for i in range(4)] + [((i + 1) % 4, i) for i in range(4)])
    assert g[(0, 0)].c == pytest.approx(1 - 0.35e-9)
    # gamma_w o alpha^-1 = 0.5 / (0.35 psi) / 1.5
    assert g[(0, 1)].c == pytest.approx(0.5 / (0.35 * (1 - 1e-9)) / 1.5, rel=1e-12)
    assert isinstance(g[(0, 2)], Zero)


def _brute_small_gain(m: np.ndarray) -> bool:
    """Every simple cycle product below one, by enumerating vertex sequences."""
    n = len(m)
    for k in range(1, n + 1):
        for cyc in itertools.permutations(range(n), k):
            if cyc[0] != min(cyc):
                continue
            prod = 1.0
            for a, b in zip(cyc, cyc[1:] + cyc[:1]):
                prod *= m[a, b]
            if prod >= 1.0 - 1e-12 and all(m[a, b] > 0 for a, b in zip(cyc, cyc[1:] + cyc[:1])):
                return False
    return True


def test_karp_small_gain_matches_cycle_enumeration():
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(150):
        n = int(rng.integers(2, 6))
        m = np.where(rng.random((n, n)) < 0.5, rng.uniform(0.3, 1.8, (n, n)), 0.0)
        if not (m > 0).any():
            continue
        g = GainMatrix(n, {(i, j): Linear(float(m[i, j])) for i in range(n) for j in range(n) if m[i, j] > 0})
        mismatches += check_small_gain(g) != _brute_small_gain(m)
    assert mismatches == 0


def test_max_cycle_mean_simple():
    w = np.full((2, 2), -np.inf)
    w[0, 1], w[1, 0] = math.log(2.0), math.log(0.25)
    assert max_cycle_mean(w) == pytest.approx(0.5 * math.log(0.5))


def test_find_phi_scales_every_entry_below_identity():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(2, 6))
        m = np.where(rng.random((n, n)) < 0.6, rng.uniform(0.2, 3.0, (n, n)), 0.0)
        g = GainMatrix(n, {(i, j): Linear(float(m[i, j])) for i in range(n) for j in range(n) if m[i, j] > 0})
        if not g.entries or not check_small_gain(g):
            continue
        phis = find_phi(g)
        for (i, j), f in g.entries.items():
            assert compose_all([phis[i].inverse(), f, phis[j]])(1.0) < 1.0


def test_find_phi_rejects_failing_matrix():
    g = GainMatrix(2, {(0, 1): Linear(2.0), (1, 0): Linear(0.9)})
    assert not check_small_gain(g)
    with pytest.raises(SmallGainError):
        find_phi(g)


def test_nonlinear_cycle_check():
    g = GainMatrix(2, {(0, 1): Power(0.5, 2.0), (1, 0): Power(0.5, 0.5)})
    # composition 0.5 (0.5 r^0.5)^2 = 0.125 r
    assert check_small_gain(g)
    g = GainMatrix(2, {(0, 1): Power(0.5, 2.0), (1, 0): Power(3.0, 0.5)})
    assert not check_small_gain(g)


def test_find_phi_two_subsystem_scaling():
    g = GainMatrix(2, {(0, 0): Linear(0.9), (1, 1): Linear(0.9), (0, 1): Linear(1.5), (1, 0): Linear(0.5)})
    phis = find_phi(g)
    d1, d2 = phis[0](1.0), phis[1](1.0)
    assert 1.5 * d2 / d1 < 1.0 and 0.5 * d1 / d2 < 1.0


def test_small_gain_simple_cases():
    assert not check_small_gain(GainMatrix(2, {(0, 1): Linear(2.0), (1, 0): Linear(0.6)}))
    assert not check_small_gain(GainMatrix(1, {(0, 0): Identity()}))
    n = 6
    g = GainMatrix(n, {(i, j): Linear(0.95) for i in range(n) for j in range(n)})
    assert check_small_gain(g) and all(p == Identity() for p in find_phi(g))
