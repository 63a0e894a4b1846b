import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import hetero_scenario, scalar_scenario
from sysrisk.errors import ConfigurationError, DimensionError
from sysrisk.model import (
    BankType,
    InitialDatum,
    InitLaw,
    Scenario,
    apply_drift,
    apply_drift_transpose,
    build_drift_matrix,
    build_vol_matrix,
    drift_vol,
    project_theta,
    running_cost,
    terminal_cost,
)

pos = st.floats(0.01, 5.0)
banks_st = st.lists(st.tuples(pos, pos, pos), min_size=1, max_size=12).map(
    lambda ts: tuple(BankType(*t) for t in ts)
)


def test_drift_matrix_two_banks():
    A = build_drift_matrix((BankType(1.0, 1.0, 1.0), BankType(2.0, 1.0, 1.0)))
    np.testing.assert_allclose(A, [[-0.5, 0.5], [1.0, -1.0]])


@given(banks_st)
def test_drift_rows_sum_to_zero(banks):
    A = build_drift_matrix(banks)
    assert np.all(np.abs(A.sum(axis=1)) <= 1e-12 * (1 + np.abs(A).max()))


@given(banks_st, st.integers(0, 2**31 - 1))
def test_structured_products_match_matrix(banks, seed):
    r = np.random.default_rng(seed)
    a = np.array([b.a for b in banks])
    x = r.normal(size=(3, len(banks)))
    A = build_drift_matrix(banks)
    np.testing.assert_allclose(apply_drift(a, x), x @ A.T, atol=1e-12)
    np.testing.assert_allclose(apply_drift_transpose(a, x), x @ A, atol=1e-12)


def test_constant_vector_is_stationary():
    banks = tuple(BankType(a, 1.0, 1.0) for a in (0.3, 1.0, 2.5))
    np.testing.assert_allclose(build_drift_matrix(banks) @ np.full(3, 4.2), 0.0, atol=1e-14)


def test_vol_matrix_layout():
    S = build_vol_matrix((BankType(1, 1, 0.2), BankType(1, 1, 0.5)), 0.3)
    np.testing.assert_allclose(S, [[0.3, 0.2, 0.0], [0.3, 0.0, 0.5]])
    cov = S @ S.T
    np.testing.assert_allclose(cov, [[0.13, 0.09], [0.09, 0.34]])


def test_drift_vol_bundle():
    dv = drift_vol(hetero_scenario())
    assert dv.A.shape == (4, 4) and dv.Sigma.shape == (4, 5)


def test_costs():
    assert terminal_cost([1.0, 3.0], [0.0, 1.0], 2.0) == pytest.approx(2.0 / 2 * (1 + 4))
    assert running_cost([1.0], [0.0], 0.5, 1.0, 2.0) == pytest.approx(1.0 + 0.5)
    with pytest.raises(DimensionError):
        terminal_cost([1.0, 2.0], [0.0], 1.0)


def test_costs_vectorised():
    x = np.ones((5, 3))
    y = np.zeros((5, 3))
    np.testing.assert_allclose(terminal_cost(x, y, 1.0), np.ones(5))


@given(st.floats(-1e6, 1e6), st.floats(-10, 10), st.floats(0, 10))
def test_projection_idempotent_and_inside(v, lo, width):
    hi = lo + width
    p = project_theta(v, lo, hi)
    assert lo <= p <= hi
    assert project_theta(p, lo, hi) == p


def test_validation_errors_name_the_assumption():
    with pytest.raises(ConfigurationError, match="A_s1.*sigma0"):
        scalar_scenario(sigma0=-1.0)
    with pytest.raises(ConfigurationError, match="A_Theta"):
        scalar_scenario(theta_lo=1.0, theta_hi=0.0)
    with pytest.raises(ConfigurationError, match="A_s1.*a=0"):
        scalar_scenario(allow_degenerate=False)
    with pytest.raises(ConfigurationError, match="A_s1.*a=-1"):
        scalar_scenario(banks=(BankType(-1.0, 1.0, 0.0),))
    with pytest.raises(ConfigurationError, match="exceeds K"):
        scalar_scenario(banks=(BankType(8.0, 8.0, 0.0),))
    with pytest.raises(ConfigurationError, match="init has"):
        scalar_scenario(init=(InitialDatum(0, 0), InitialDatum(0, 0)))


def test_single_point_theta_is_admissible():
    s = scalar_scenario(theta_lo=0.0, theta_hi=0.0)
    assert s.theta_lo == s.theta_hi


def test_init_law_nested_across_bank_counts():
    law = InitLaw(0.0, 1.0, 0.5, 0.2)
    x4, y4 = law.sample(4, 10, seed=3)
    x2, y2 = law.sample(2, 10, seed=3)
    assert np.array_equal(x4[:, :2], x2) and np.array_equal(y4[:, :2], y2)
    xs, _ = law.sample(2, 5, seed=3, path_start=5)
    assert np.array_equal(xs, x2[5:])


def test_initial_data_explicit_broadcast():
    s = hetero_scenario()
    x0, y = s.initial_data(3)
    assert x0.shape == (3, 4)
    np.testing.assert_allclose(x0[2], [1.0, -0.5, 0.3, 0.0])


def test_deterministic_flag():
    assert scalar_scenario().is_deterministic()
    assert not hetero_scenario().is_deterministic()
    assert not Scenario(banks=(BankType(1, 1, 1),), init=InitLaw()).is_deterministic()
