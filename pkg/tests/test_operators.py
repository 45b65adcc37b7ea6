import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lavreg.core import worst_case_direction
from lavreg.errors import InvalidDimensionError, InvalidParameterError
from lavreg.operators import (
    build_abel_operator,
    build_diagonal_operator,
    build_integration_operator,
    certification_grid,
    certify,
    diagonal_spectrum,
    export_csv,
    range_null_decompose,
    resolvent_apply,
    resolvent_norm,
)


def test_integration_n2():
    op = build_integration_operator(2)
    np.testing.assert_array_equal(op.entries, [[0.25, 0.0], [0.5, 0.25]])
    assert op.accretive and op.m_constant == 1.0
    assert op.grid_step == 0.5


def test_integration_symmetric_part_rank_one():
    op = build_integration_operator(4)
    a = op.entries
    np.testing.assert_allclose((a + a.T) / 2, np.full((4, 4), 0.125), atol=1e-15)
    eig = np.linalg.eigvalsh((a + a.T) / 2)
    np.testing.assert_allclose(eig, [0, 0, 0, 0.5], atol=1e-14)
    assert certify(op).passed


def test_integration_resolvent_bound_n64():
    op = build_integration_operator(64)
    for g in np.geomspace(1e-4, 1e2, 13):
        assert g * resolvent_norm(op, g) <= 1 + 1e-8


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
def test_abel_certified(alpha):
    op = build_abel_operator(32, alpha)
    cert = certify(op)
    assert cert.passed
    assert cert.min_symmetric_eig >= -1e-10


def test_abel_alpha_to_one():
    v = build_integration_operator(16).entries
    a = build_abel_operator(16, 1 - 1e-9).entries
    np.testing.assert_allclose(a, v, atol=1e-7)


def test_abel_half_semigroup_consistency():
    a = build_abel_operator(32, 0.5)
    v = build_integration_operator(32)
    defect = np.linalg.norm(a.entries @ a.entries - v.entries, 2)
    assert defect <= 0.05 * v.norm


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.2, 1.5])
def test_abel_rejects_alpha(bad):
    with pytest.raises(InvalidParameterError):
        build_abel_operator(8, bad)


def test_diagonal_basic():
    op = build_diagonal_operator([1.0, 0.0])
    np.testing.assert_array_equal(op.entries, np.diag([1.0, 0.0]))
    dec = range_null_decompose(op, np.array([1.0, 1.0]))
    np.testing.assert_allclose(dec.u_range, [1, 0], atol=1e-15)
    np.testing.assert_allclose(dec.u_null, [0, 1], atol=1e-15)


def test_diagonal_rejects_empty_and_negative():
    with pytest.raises(InvalidDimensionError):
        build_diagonal_operator([])
    with pytest.raises(InvalidParameterError):
        build_diagonal_operator([1.0, -0.1])


def test_diagonal_resolvent_closed_form():
    n = 50
    lam = 1.0 / np.arange(1, n + 1)
    op = build_diagonal_operator(lam)
    v = np.random.default_rng(1).standard_normal(n)
    np.testing.assert_allclose(resolvent_apply(op, 0.3, v), v / (lam + 0.3), rtol=1e-14)


def test_resolvent_small_examples():
    np.testing.assert_allclose(resolvent_apply(build_diagonal_operator([1, 1, 1]), 1.0,
                                               np.array([2.0, 0, 0])), [1, 0, 0])
    np.testing.assert_allclose(resolvent_apply(build_diagonal_operator([1, 2]), 2.0,
                                               np.array([3.0, 4.0])), [1, 1])
    assert resolvent_norm(build_diagonal_operator([0, 1]), 0.5) == pytest.approx(2.0)
    assert resolvent_norm(build_diagonal_operator([1, 1, 1]), 1.0) == pytest.approx(0.5)


def test_resolvent_residual_integration():
    op = build_integration_operator(64)
    v = np.random.default_rng(2).standard_normal(64)
    x = resolvent_apply(op, 0.1, v)
    assert np.linalg.norm(op.entries @ x + 0.1 * x - v) <= 1e-12 * np.linalg.norm(v)


def test_resolvent_rejects_bad_input():
    op = build_integration_operator(8)
    with pytest.raises(InvalidParameterError):
        resolvent_apply(op, 0.0, np.ones(8))
    with pytest.raises(InvalidDimensionError):
        resolvent_apply(op, 1.0, np.ones(7))


def test_resolvent_norm_lower_bound_from_worst_direction():
    op = build_integration_operator(64)
    g = 1e-2
    val = resolvent_norm(op, g)
    assert 1 / (g + op.norm) <= val <= 1 / g * (1 + 1e-8)
    eps = g / 10
    u = np.random.default_rng(0).standard_normal(64)
    v = worst_case_direction(op, u, eps, warn=False).v
    assert np.linalg.norm(resolvent_apply(op, g, v)) >= (1 - eps / g) / g
    assert val >= (1 - eps / g) / g


def test_null_component_limit():
    op = build_diagonal_operator([1.0, 0.1, 0.0])
    u = np.array([1.0, 2.0, 3.0])
    un = range_null_decompose(op, u).u_null
    gammas = 2.0 ** -np.arange(4, 21)
    gaps = np.array([np.linalg.norm(g * resolvent_apply(op, g, u) - un) for g in gammas])
    assert np.all(np.diff(gaps) < 0)
    # leading terms gamma * u_i / lambda_i
    np.testing.assert_allclose(gaps[-1] / gammas[-1], np.sqrt(401.0), rtol=1e-4)


def test_trivial_nullspace_decomposition():
    op = build_integration_operator(16)
    u = np.random.default_rng(3).standard_normal(16)
    dec = range_null_decompose(op, u)
    assert np.linalg.norm(dec.u_null) == 0
    np.testing.assert_allclose(dec.u_range, u)


def test_certification_grid_default():
    g = certification_grid()
    assert len(g) == 25 and g[0] == pytest.approx(1e-6) and g[-1] == pytest.approx(1e3)


def test_export_csv_roundtrip(tmp_path):
    op = build_abel_operator(6, 0.4)
    path = tmp_path / "a.csv"
    export_csv(op, path)
    back = np.loadtxt(path, delimiter=",")
    np.testing.assert_array_equal(back, op.entries)


def test_spectrum_kinds():
    assert diagonal_spectrum("harmonic", 3).tolist() == [1.0, 0.5, 1 / 3]
    assert diagonal_spectrum("geometric", 3).tolist() == [0.5, 0.25, 0.125]
    lam = diagonal_spectrum("clamped", 10, floor=0.3)
    assert lam.min() == pytest.approx(0.3)
    lam = diagonal_spectrum("harmonic", 4, zeros=2)
    assert lam.tolist()[-2:] == [0.0, 0.0] and len(lam) == 6


# ----------------------------------------------------------------- properties

ops = st.sampled_from([
    build_integration_operator(24),
    build_abel_operator(24, 0.3),
    build_abel_operator(24, 0.7),
    build_diagonal_operator(diagonal_spectrum("harmonic", 24, zeros=3)),
])


@settings(max_examples=30, deadline=None)
@given(op=ops, seed=st.integers(0, 2**31 - 1))
def test_resolvent_monotone(op, seed):
    u = np.random.default_rng(seed).standard_normal(op.dim)
    vals = [np.linalg.norm(resolvent_apply(op, g, u)) for g in certification_grid()]
    assert np.all(np.diff(vals) <= 1e-12 * np.abs(vals[:-1]))


@settings(max_examples=30, deadline=None)
@given(op=ops, gamma=st.floats(1e-6, 1e3))
def test_nonnegativity_bound(op, gamma):
    assert gamma * resolvent_norm(op, gamma) <= op.m_constant * (1 + 1e-8)


@settings(max_examples=30, deadline=None)
@given(op=ops, seed=st.integers(0, 2**31 - 1))
def test_decomposition_norm_bound(op, seed):
    u = np.random.default_rng(seed).standard_normal(op.dim)
    dec = range_null_decompose(op, u)
    assert np.linalg.norm(dec.u_range + dec.u_null - u) <= 1e-10 * np.linalg.norm(u)
    assert np.linalg.norm(dec.u_null) <= op.m_constant * np.linalg.norm(u) * (1 + 1e-8)
    assert np.linalg.norm(op.entries @ dec.u_null) <= 1e-10 * op.norm * max(
        np.linalg.norm(dec.u_null), 1.0)
