import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from partavg.errors import BoundNotApplicable
from partavg.objectives import quadratic_objective
from partavg.param_space import make_contiguous_partition
from partavg.theory import (
    TheoryInputs,
    bound_rhs_iid,
    bound_rhs_niid,
    linear_speedup_regime,
    lr_constraint_iid,
    lr_constraint_niid,
    max_eta_iid,
    speedup_eta,
    theory_inputs_for,
)


def inputs(**kw):
    base = dict(lipschitz=(1.0, 2.0), noise_var=(0.5, 1.0), m=4, K=100, tau=2, eta=0.1,
                f_init=3.0, f_inf=1.0, beta_sq=(1.0, 1.0), kappa_sq=(0.2, 0.4))
    base.update(kw)
    return TheoryInputs(**base)


def test_iid_constraint_examples():
    r = lr_constraint_iid(1.0, 1, 1.0)
    assert r.satisfied and r.slack == 0.0
    assert lr_constraint_iid(1.0, 2, 0.5).satisfied
    r = lr_constraint_iid(1.0, 2, 0.6)
    assert not r.satisfied and r.slack == pytest.approx(-0.32)


def test_max_eta_examples():
    assert max_eta_iid(1.0, 2) == 0.5
    assert max_eta_iid(2.0, 1) == 0.5
    assert max_eta_iid(1.0, 8) < max_eta_iid(1.0, 2)


@given(L=st.floats(1e-3, 1e3), tau=st.integers(1, 200))
def test_max_eta_sits_on_the_boundary(L, tau):
    eta = max_eta_iid(L, tau)
    assert abs(lr_constraint_iid(L, tau, eta).slack) <= 1e-12
    assert not lr_constraint_iid(L, tau, eta * (1 + 1e-9)).satisfied


def test_niid_examples():
    r = lr_constraint_niid(1.0, 1, 1.0, 0.5)
    assert r.cap_strict == 0.5 and r.cap_relaxed == 1.0 and r.satisfied_strict
    r = lr_constraint_niid(1.0, 2, 1.0, 0.1)
    assert r.cap_strict == pytest.approx(1 / math.sqrt(12)) == r.cap_relaxed
    assert round(r.cap_strict, 4) == 0.2887
    caps = [lr_constraint_niid(1.0, 3, b, 0.01).cap_strict for b in (1.0, 2.0, 5.0)]
    assert caps[0] > caps[1] > caps[2]
    with pytest.raises(ValueError):
        lr_constraint_niid(1.0, 2, 0.5, 0.1)


def test_iid_bound_terms():
    b = bound_rhs_iid(inputs(noise_var=(0.0, 0.0)))
    assert b.total == pytest.approx(2 * 2.0 / (0.1 * 100))
    b = bound_rhs_iid(inputs(tau=1))
    assert b.terms["drift"] == 0.0
    half = bound_rhs_iid(inputs(m=8)).terms["noise"]
    assert half * 2 == bound_rhs_iid(inputs(m=4)).terms["noise"]
    b = bound_rhs_iid(inputs())
    # 0.4 + 0.1/4 * (0.5 + 2) + 0.01 * (0.5 + 4)
    assert b.terms == pytest.approx({"optimization": 0.4, "noise": 0.0625, "drift": 0.045})
    assert b.total == pytest.approx(0.5075)


def test_niid_bound_terms():
    b = bound_rhs_niid(inputs(kappa_sq=(0.0, 0.0)))
    assert b.terms["heterogeneity"] == 0.0
    b = bound_rhs_niid(inputs())
    assert b.terms["noise"] == pytest.approx(4 * 0.1 / 4 * 2.5)
    assert b.alternatives["noise_alt"] == pytest.approx(2 * 0.1 / 4 * 2.5)
    assert b.terms["heterogeneity"] == pytest.approx(6 * 0.01 * 2 * (0.2 + 4 * 0.4))
    b1 = bound_rhs_niid(inputs(tau=1))
    assert b1.terms["drift"] == 0.0 == b1.terms["heterogeneity"]
    skewed = bound_rhs_niid(inputs(weights=(0.7, 0.1, 0.1, 0.1)))
    assert skewed.terms["noise"] == pytest.approx(4 * 0.1 * 0.52 * 2.5)


@given(eta=st.floats(1e-4, 2.0), tau=st.integers(1, 10), L=st.floats(0.1, 10.0))
def test_refusal_matches_constraint(eta, tau, L):
    inp = inputs(lipschitz=(L,), noise_var=(1.0,), kappa_sq=(0.1,), beta_sq=(1.0,), tau=tau, eta=eta)
    ok = lr_constraint_iid(L, tau, eta).satisfied
    try:
        bound_rhs_iid(inp)
        assert ok
    except BoundNotApplicable:
        assert not ok
    ok2 = lr_constraint_niid(L, tau, 1.0, eta).satisfied_relaxed
    try:
        bound_rhs_niid(inp)
        assert ok2
    except BoundNotApplicable:
        assert not ok2


def test_speedup():
    assert speedup_eta(5, 5) == 1.0
    assert speedup_eta(4, 100) == 0.2
    assert speedup_eta(1, 10_000) == 0.01
    assert linear_speedup_regime(4, 65) and not linear_speedup_regime(4, 64)


def test_inputs_validation():
    with pytest.raises(ValueError):
        inputs(f_init=0.0)
    with pytest.raises(ValueError):
        inputs(lipschitz=(0.0, 1.0))


def test_inputs_from_quadratic():
    scheme = make_contiguous_partition(4, 2)
    q = quadratic_objective(4, [1.0, 3.0], [0.5, 1.0], shifts=np.ones((2, 4)), scheme=scheme)
    inp = theory_inputs_for(q, scheme, m=2, K=10, tau=2, eta=0.1, x0=np.zeros(4))
    assert inp.lipschitz == (1.0, 3.0)
    assert inp.noise_var == pytest.approx((0.25, 1.0))
    assert inp.f_init == pytest.approx(0.5 * (2 * 1 + 2 * 3))
    assert inp.f_inf == 0.0
