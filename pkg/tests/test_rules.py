import pickle

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lavreg.core import error_functionals, make_problem, sphere_direction
from lavreg.errors import InvalidParameterError, UndefinedRatioError
from lavreg.operators import (
    build_diagonal_operator,
    build_integration_operator,
    diagonal_spectrum,
)
from lavreg.ratelab import fit_rate, make_witness
from lavreg.rules import (
    INFINITY,
    ParameterChoiceOutcome,
    apriori_outcome,
    apriori_rule,
    balance_outcome,
    md_discrepancy,
    md_rule,
    quasi_optimality_ratio,
)


@pytest.fixture(scope="module")
def harm():
    return build_diagonal_operator(diagonal_spectrum("harmonic", 100))


def test_md_small_data_gives_infinity(harm):
    f = np.full(100, 1e-4)
    out = md_rule(harm, f, delta=1e-3)
    assert out.gamma is INFINITY and out.is_infinite
    assert not np.any(out.solution)
    assert out.as_dict()["gamma"] == "INFINITY"


def test_md_band(harm):
    u = harm.entries @ sphere_direction(100, 0)
    prob = make_problem(harm, u, 1e-3, noise_seed=3)
    out = md_rule(harm, prob.f_noisy, 1e-3, 1.5, 2.0)
    d = md_discrepancy(harm, out.gamma, prob.f_noisy)
    assert 1.5e-3 * (1 - 1e-10) <= d <= 2e-3 * (1 + 1e-10)
    assert out.diagnostics["discrepancy"] == pytest.approx(d, rel=1e-12)


def test_md_band_integration():
    op = build_integration_operator(64)
    u = op.entries @ sphere_direction(64, 1)
    prob = make_problem(op, u, 1e-4, noise_seed=1)
    out = md_rule(op, prob.f_noisy, 1e-4)
    d = md_discrepancy(op, out.gamma, prob.f_noisy)
    assert 1.5e-4 <= d <= 2e-4


@pytest.mark.parametrize("b0,b1", [(0.5, 2.0), (1.0, 2.0), (1.8, 1.5)])
def test_md_rejects_band(harm, b0, b1):
    with pytest.raises(InvalidParameterError):
        md_rule(harm, np.ones(100), 1e-3, b0, b1)


def test_apriori_examples():
    assert apriori_rule(1e-4, 1.0, 1.0) == pytest.approx(1e-2)
    assert apriori_rule(1e-6, 0.5, 2.0) == pytest.approx(2e-4)
    with pytest.raises(InvalidParameterError):
        apriori_rule(1e-4, 1.5)
    with pytest.raises(InvalidParameterError):
        apriori_rule(0.0, 0.5)


def test_apriori_bound_rate():
    op = build_diagonal_operator(diagonal_spectrum("harmonic", 400))
    w = make_witness(op, 0.5, seed=0)
    c = np.linalg.norm(w.w) ** (-1 / 1.5)
    deltas = 10.0 ** -np.arange(2, 9)
    vals = []
    for d in deltas:
        g = apriori_rule(d, 0.5, c)
        vals.append(np.linalg.norm(g * w.u / (op.diagonal + g)) + d / g)
    assert abs(fit_rate(deltas, vals).slope - 1 / 3) <= 0.05


def test_infinity_singleton():
    assert pickle.loads(pickle.dumps(INFINITY)) is INFINITY
    assert repr(INFINITY) == "INFINITY"
    with pytest.raises(InvalidParameterError):
        ParameterChoiceOutcome(INFINITY, np.ones(3), "md")
    with pytest.raises(InvalidParameterError):
        ParameterChoiceOutcome(float("inf"), np.zeros(3), "md")


def test_ratio_ordering_balance(harm):
    w = make_witness(harm, 0.5, seed=1, kind="sphere")
    prob = make_problem(harm, w.u, 1e-4, noise_seed=2)
    out = balance_outcome(harm, w.u, prob.f_noisy, 1e-4)
    ef = error_functionals(harm, w.u, 1e-4)
    weak, strong = quasi_optimality_ratio(harm, prob, out, ef)
    assert strong >= weak
    assert np.isfinite(weak) and np.isfinite(strong)


def test_ratio_undefined(harm):
    prob = make_problem(harm, np.zeros(100), 1e-4)
    out = apriori_outcome(harm, prob.f_noisy, 1e-4, 1.0)
    ef = error_functionals(harm, np.zeros(100), 1e-4)
    with pytest.raises(UndefinedRatioError):
        quasi_optimality_ratio(harm, prob, out, ef)


def test_md_convergence_trend():
    op = build_diagonal_operator(diagonal_spectrum("harmonic", 200))
    u = op.entries @ sphere_direction(200, 4)
    errs = []
    for d in 10.0 ** -np.arange(2, 8):
        prob = make_problem(op, u, d, noise_seed=5)
        out = md_rule(op, prob.f_noisy, d)
        errs.append(np.linalg.norm(out.solution - u))
    errs = np.array(errs)
    assert np.all(errs[1:] <= 1.1 * errs[:-1])
    assert errs[-1] < 0.1 * errs[0]


@settings(max_examples=20, deadline=None)
@given(t=st.floats(1e-3, 1e3), seed=st.integers(0, 500))
def test_md_scale_invariant(t, seed):
    op = build_diagonal_operator(diagonal_spectrum("harmonic", 60))
    u = op.entries @ sphere_direction(60, seed)
    prob = make_problem(op, u, 1e-3, noise_seed=seed)
    a = md_rule(op, prob.f_noisy, 1e-3)
    b = md_rule(op, t * prob.f_noisy, t * 1e-3)
    assert b.gamma == pytest.approx(a.gamma, rel=1e-10)
    np.testing.assert_allclose(b.solution, t * a.solution, rtol=1e-9, atol=1e-15 * t)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), delta=st.floats(1e-6, 1e-2),
       b0=st.floats(1.05, 3.0), width=st.floats(0.0, 2.0))
def test_md_band_property(seed, delta, b0, width):
    op = build_diagonal_operator(diagonal_spectrum("harmonic", 50))
    u = op.entries @ sphere_direction(50, seed)
    prob = make_problem(op, u, delta, noise_seed=seed)
    b1 = b0 + width
    out = md_rule(op, prob.f_noisy, delta, b0, b1)
    if out.is_infinite:
        assert np.linalg.norm(prob.f_noisy) <= b1 * delta
    else:
        d = md_discrepancy(op, out.gamma, prob.f_noisy)
        assert b0 * delta * (1 - 1e-10) <= d <= b1 * delta * (1 + 1e-10)
