import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sysrisk.errors import ConfigurationError, DimensionError
from sysrisk.measures import (
    CanonicalPoint,
    EmpiricalMeasure,
    EmpiricalMeasureFlow,
    HatSPoint,
    composite_metrics,
    empirical_from_state,
    flow_distance,
    l2_time_norm,
    per_knot_w2,
    sliced_w2,
    wasserstein2,
)


def brute_force_w2(A, B):
    """Minimum over all permutations; the reference for small equal-size measures."""
    n = A.shape[0]
    C = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
    rows = np.arange(n)
    best = min(C[rows, list(p)].sum() for p in itertools.permutations(range(n)))
    return float(np.sqrt(best / n))


def _measure(r, n):
    return EmpiricalMeasure(r.normal(size=(n, 5)))


def test_w2_matches_permutation_minimum():
    r = np.random.default_rng(11)
    for _ in range(100):
        n = int(r.integers(1, 7))
        mu, nu = _measure(r, n), _measure(r, n)
        d = wasserstein2(mu, nu)
        assert d.exact
        assert float(d) == brute_force_w2(mu.atoms, nu.atoms)


def test_w2_single_atoms_is_euclidean():
    a = np.array([[1.0, 2, 3, 4, 5]])
    b = np.array([[1.0, 2, 3, 4, 8]])
    assert float(wasserstein2(EmpiricalMeasure(a), EmpiricalMeasure(b))) == 3.0


@given(st.integers(1, 10), st.integers(0, 2**31 - 1))
def test_w2_metric_axioms(n, seed):
    r = np.random.default_rng(seed)
    mu, nu, rho = _measure(r, n), _measure(r, n), _measure(r, n)
    assert float(wasserstein2(mu, mu)) == 0.0
    assert float(wasserstein2(mu, nu)) == pytest.approx(float(wasserstein2(nu, mu)), rel=1e-12)
    assert float(wasserstein2(mu, rho)) <= float(wasserstein2(mu, nu)) + float(wasserstein2(nu, rho)) + 1e-12


def test_w2_permutation_invariant():
    r = np.random.default_rng(3)
    A = r.normal(size=(6, 5))
    B = r.normal(size=(6, 5))
    d1 = wasserstein2(EmpiricalMeasure(A), EmpiricalMeasure(B))
    d2 = wasserstein2(EmpiricalMeasure(A[::-1]), EmpiricalMeasure(B[[3, 1, 0, 5, 2, 4]]))
    assert float(d1) == pytest.approx(float(d2), rel=1e-14)


def test_sliced_fallback_is_flagged():
    r = np.random.default_rng(4)
    mu, nu = _measure(r, 300), _measure(r, 300)
    d = wasserstein2(mu, nu)
    assert not d.exact
    unequal = wasserstein2(_measure(r, 5), _measure(r, 7))
    assert not unequal.exact


def test_sliced_w2_zero_for_duplicated_atoms():
    r = np.random.default_rng(5)
    A = r.normal(size=(5, 5))
    assert sliced_w2(A, np.concatenate([A, A])) == pytest.approx(0.0, abs=1e-12)


def test_sliced_w2_translation():
    # every projection of a translation by v moves by <dir, v>; average of squares is |v|^2 * E<dir,e>^2
    r = np.random.default_rng(6)
    A = r.normal(size=(400, 5))
    v = np.array([1.0, 0, 0, 0, 0])
    d = sliced_w2(A, A + v)
    assert 0.2 < d < 0.8


def test_sliced_never_exceeds_exact():
    r = np.random.default_rng(7)
    for _ in range(20):
        A, B = r.normal(size=(8, 5)), r.normal(size=(8, 5))
        assert sliced_w2(A, B) <= float(wasserstein2(EmpiricalMeasure(A), EmpiricalMeasure(B))) + 1e-12


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        wasserstein2(EmpiricalMeasure(np.zeros((2, 5))), EmpiricalMeasure(np.zeros((2, 4))))
    with pytest.raises(DimensionError):
        empirical_from_state(np.ones((3, 3)), np.zeros(3), np.zeros(2))


def _flow(r, n, steps=4, X=None):
    X = r.normal(size=(n, steps + 1)) if X is None else X
    return EmpiricalMeasureFlow.from_paths(np.ones((n, 3)), np.zeros(n), X, np.linspace(0, 1, steps + 1))


def test_flow_distance_is_sup_over_knots():
    r = np.random.default_rng(8)
    f, g = _flow(r, 4), _flow(r, 4)
    per = per_knot_w2(f, g)
    d = flow_distance(f, g)
    assert float(d) == per.max() and d.exact
    assert float(flow_distance(f, f)) == 0.0


def test_flow_grid_mismatch():
    r = np.random.default_rng(9)
    with pytest.raises(DimensionError):
        flow_distance(_flow(r, 3, 4), _flow(r, 3, 5))


def test_flow_pairings():
    X = np.array([[0.0, 1.0], [2.0, 3.0]])
    f = EmpiricalMeasureFlow.from_paths(np.ones((2, 3)), np.zeros(2), X, [0.0, 1.0])
    np.testing.assert_allclose(f.pairings(lambda x: x), [1.0, 2.0])
    assert f.at(1).x_mean() == 2.0
    assert f.at(0).integrate(np.square) == 2.0


def test_composite_hat_metric():
    r = np.random.default_rng(10)
    f = _flow(r, 3)
    g = _flow(r, 3)
    mu = f.at(0)
    p1 = HatSPoint(mu, np.zeros(5), f)
    p2 = HatSPoint(mu, np.ones(5), g)
    m = composite_metrics(p1, p2)
    assert m.d_hatS == pytest.approx(0.0 + 1.0 + float(flow_distance(f, g)))
    assert composite_metrics(p1, p1).d_hatS == 0.0


def test_composite_canonical_metric():
    t = np.linspace(0, 1, 5)
    a = CanonicalPoint(np.zeros((3, 2)), np.zeros(5), np.zeros((3, 5)), np.zeros(5), t)
    b = CanonicalPoint(np.ones((3, 2)), np.full(5, 0.5), np.ones((3, 5)), np.ones(5), t)
    m = composite_metrics(a, b, truncation=2)
    s2 = np.sqrt(2.0)
    assert m.d1 == pytest.approx(0.5 * s2 / (1 + s2) + 0.25 * s2 / (1 + s2))
    assert m.d2 == 0.5
    assert m.d3 == pytest.approx(0.5 * 0.5 + 0.25 * 0.5)
    assert m.d4 == pytest.approx(1.0)
    assert m.d_omega == pytest.approx(m.d1 + m.d2 + m.d3 + m.d4)
    assert m.tail_bound == pytest.approx(0.5)
    assert composite_metrics(a, a).d_omega == 0.0


def test_composite_rejects_mixed_points():
    t = np.linspace(0, 1, 3)
    a = CanonicalPoint(np.zeros((1, 2)), np.zeros(3), np.zeros((1, 3)), np.zeros(3), t)
    with pytest.raises(ConfigurationError):
        composite_metrics(a, "x")
    with pytest.raises(ConfigurationError):
        composite_metrics(a, a, truncation=0)


def test_l2_time_norm():
    t = np.linspace(0, 1, 101)
    assert l2_time_norm(np.ones(101), t) == pytest.approx(1.0)
