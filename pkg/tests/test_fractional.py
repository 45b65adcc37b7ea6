import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lavreg.errors import AccuracyWarning, InvalidParameterError
from lavreg.fractional import (
    QuadratureSpec,
    frac_power_apply,
    frac_power_matrix,
    neg_frac_power_apply,
    tanh_sinh_nodes,
)
from lavreg.operators import (
    build_abel_operator,
    build_diagonal_operator,
    build_integration_operator,
)


@pytest.fixture(scope="module")
def v32():
    return build_integration_operator(32)


def test_integer_power_exact(v32):
    np.testing.assert_array_equal(frac_power_matrix(v32, 1).entries, v32.entries)
    np.testing.assert_array_equal(frac_power_matrix(v32, 2).entries,
                                  v32.entries @ v32.entries)


def test_diagonal_oracle_small():
    op = build_diagonal_operator([1, 1 / 4, 1 / 16])
    np.testing.assert_allclose(frac_power_matrix(op, 0.5).entries,
                               np.diag([1, 0.5, 0.25]), atol=1e-8)


def test_semigroup_integration(v32):
    h = frac_power_matrix(v32, 0.5)
    defect = np.linalg.norm(h.entries @ h.entries - v32.entries, 2)
    assert defect <= 1e-6 * v32.norm
    assert h.meta["quad_error"] <= 1e-8


def test_result_keeps_certificate_metadata(v32):
    h = frac_power_matrix(v32, 0.3)
    assert h.m_constant == v32.m_constant
    assert h.accretive


def test_neg_power_diagonal_oracle():
    op = build_diagonal_operator([1, 0.5])
    w, diag = neg_frac_power_apply(op, 0.5, np.array([1.0, 1.0]))
    np.testing.assert_allclose(w, [1, np.sqrt(2)], atol=1e-8)
    assert not diag.source_condition_violated


def test_neg_power_nullspace_flagged():
    op = build_diagonal_operator([1, 0.5, 0.0])
    _, diag = neg_frac_power_apply(op, 0.5, np.array([0.0, 0.0, 1.0]))
    assert diag.source_condition_violated
    assert diag.growth_exponent < -0.99


def test_neg_power_round_trip(v32):
    w = np.random.default_rng(5).standard_normal(32)
    u = v32.entries @ w
    z, diag = neg_frac_power_apply(v32, 0.3, u)
    back = frac_power_apply(v32, 0.3, z)
    assert np.linalg.norm(back - u) <= 1e-4 * np.linalg.norm(u)
    assert not diag.source_condition_violated


def test_abel_identification():
    # V^alpha discretizes the Abel operator; the gap is discretization error
    n = 64
    v = build_integration_operator(n)
    for alpha in (0.3, 0.5, 0.7):
        a = build_abel_operator(n, alpha)
        gap = np.linalg.norm(frac_power_matrix(v, alpha).entries - a.entries, 2)
        assert gap <= 0.2 * a.norm


def test_invalid_powers(v32):
    with pytest.raises(InvalidParameterError):
        frac_power_matrix(v32, 0.0)
    with pytest.raises(InvalidParameterError):
        neg_frac_power_apply(v32, 1.0, np.ones(32))
    with pytest.raises(InvalidParameterError):
        QuadratureSpec(node_count=2)


def test_nodes_nested():
    t, wf, wc = tanh_sinh_nodes(201, -5.0, 5.0)
    assert np.all(np.diff(t) > 0)
    assert t[0] > -5.0 and t[-1] < 5.0
    # both levels integrate a smooth function on the interval
    f = np.exp(-t * t)
    assert len(t) == 401 and np.count_nonzero(wc) == 201
    assert abs(wf @ f - np.sqrt(np.pi) * 0.9999999999984626) < 1e-12
    assert abs(wc @ f - wf @ f) < 1e-9


def test_accuracy_warning_on_coarse_quadrature(v32):
    with pytest.warns(AccuracyWarning):
        frac_power_matrix(v32, 0.5, QuadratureSpec(node_count=21))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        frac_power_matrix(v32, 0.5, QuadratureSpec(node_count=21), warn=False)


# ----------------------------------------------------------------- properties

@settings(max_examples=25, deadline=None)
@given(lam=st.lists(st.floats(1e-4, 1.0), min_size=1, max_size=8),
       p=st.floats(0.05, 0.95))
def test_diagonal_oracle(lam, p):
    op = build_diagonal_operator(lam)
    got = np.diag(frac_power_matrix(op, p).entries)
    expect = np.asarray(lam) ** p
    assert np.max(np.abs(got - expect)) <= 1e-8 * expect.max()


@pytest.mark.parametrize("kind", ["diag", "int"])
@pytest.mark.parametrize("p,q", [(0.25, 0.25), (0.25, 0.5), (0.25, 0.75), (0.5, 0.25),
                                 (0.5, 0.5), (0.75, 0.25)])
def test_semigroup_property(p, q, kind):
    op = (build_diagonal_operator(1.0 / np.arange(1, 33)) if kind == "diag"
          else build_integration_operator(32))
    ap = frac_power_matrix(op, p).entries
    aq = frac_power_matrix(op, q).entries
    apq = frac_power_matrix(op, p + q).entries
    assert np.linalg.norm(ap @ aq - apq, 2) <= 1e-5 * op.norm ** (p + q)


@settings(max_examples=10, deadline=None)
@given(lam=st.floats(1e-3, 1.0))
def test_power_continuous_in_p(lam):
    op = build_diagonal_operator([lam, 1.0])
    ps = np.linspace(0.05, 0.95, 10)
    vals = np.array([frac_power_matrix(op, p).entries[0, 0] for p in ps])
    np.testing.assert_allclose(vals, lam ** ps, atol=1e-8)
