import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import hetero_scenario, scalar_scenario
from sysrisk.control import (
    RandomizedPolicy,
    SolverOptions,
    backward_adjoint,
    conditional_expectation,
    emit_controls,
    evaluate_strong_cost,
    evaluate_weak_cost,
    gateaux_derivative,
    gradient_check,
    optimize_picard,
    pathwise_cost,
    random_admissible_controls,
    trapezoid_weights,
)
from sysrisk.errors import AdmissibilityError, ConfigurationError
from sysrisk.lq import riccati_value, solve_riccati
from sysrisk.sde import OpenLoopControl, constant_control, sample_noise, scenario_grid, simulate_paths


def _noise(s, paths, seed=0):
    return sample_noise(scenario_grid(s), s.n_banks, paths, seed)


def test_trapezoid_weights_integrate_linear_exactly():
    w = trapezoid_weights(10, 0.1)
    t = np.linspace(0, 1, 11)
    assert w @ (3 * t + 1) == pytest.approx(2.5)


def test_scalar_cost_of_constant_control():
    # J(c) = (1 + c)^2 + c^2 on the Euler grid
    s = scalar_scenario()
    for c in (-0.5, 0.0, 0.3):
        est = evaluate_strong_cost(constant_control(c), s, _noise(s, 1))
        assert est.value == pytest.approx((1 + c) ** 2 + c**2, abs=1e-12)


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_gateaux_exact_for_deterministic_quadratic(c, d):
    s = scalar_scenario()
    noise = _noise(s, 1)
    g = gateaux_derivative(np.full(51, c), np.full(51, d), s, noise)
    # d/de [(1 + c + e d)^2 + (c + e d)^2] at e = 0
    assert g == pytest.approx(2 * d * (1 + c) + 2 * c * d, abs=1e-10)


def test_gateaux_zero_direction_and_admissibility():
    s = scalar_scenario(theta_lo=-0.1, theta_hi=0.1)
    noise = _noise(s, 1)
    assert gateaux_derivative(np.zeros(51), np.zeros(51), s, noise) == 0.0
    with pytest.raises(AdmissibilityError):
        gateaux_derivative(np.zeros(51), np.full(51, 0.5), s, noise)


def test_gradient_check_first_order():
    s = scalar_scenario()
    h = 1.0 - np.linspace(0, 1, 51) / 2
    rows = gradient_check(np.zeros(51), h, s, _noise(s, 1))
    errs = [abs(r.fd_derivative - r.gateaux) for r in rows]
    assert rows[-1].rel_err < 1e-3
    for e1, e2 in zip(errs, errs[1:]):
        assert 9.0 < e1 / e2 < 11.0


def test_gateaux_matches_finite_difference_stochastic():
    s = hetero_scenario()
    noise = _noise(s, 4000, seed=3)
    th = np.full((4000, 51), 0.2)
    h = np.tile(np.sin(np.linspace(0, 3, 51)), (4000, 1))
    g = gateaux_derivative(th, h, s, noise)
    eps = 1e-4
    fd = (evaluate_strong_cost(OpenLoopControl(th + eps * h), s, noise).value
          - evaluate_strong_cost(OpenLoopControl(th - eps * h), s, noise).value) / (2 * eps)
    assert g == pytest.approx(fd, rel=2e-2)


def test_regression_exact_on_affine_targets():
    r = np.random.default_rng(1)
    X = r.normal(size=(200, 3))
    Y = r.normal(size=(200, 3))
    target = X @ r.normal(size=(3, 3)) + Y @ r.normal(size=(3, 3)) + 0.7
    for basis in ("affine", "quadratic"):
        fit, _ = conditional_expectation(X, Y, target, basis, np.ones(3), np.ones(3))
        np.testing.assert_allclose(fit, target, atol=1e-9)


def test_regression_constant_features_do_not_break():
    X = np.ones((50, 2))
    Y = np.zeros((50, 2))
    target = np.full((50, 2), 3.0)
    fit, _ = conditional_expectation(X, Y, target, "affine", np.ones(2), np.ones(2))
    np.testing.assert_allclose(fit, target)


def test_bankwise_basis_exact_for_homogeneous_linear_targets():
    r = np.random.default_rng(2)
    N = 6
    X = r.normal(size=(300, N))
    Y = r.normal(size=(300, N))
    target = 0.5 * X - 0.2 * Y + 0.3 * X.mean(axis=1, keepdims=True)
    fit, _ = conditional_expectation(X, Y, target, "bankwise", np.ones(N), np.ones(N))
    np.testing.assert_allclose(fit, target, atol=1e-9)


def test_unknown_basis():
    with pytest.raises(ConfigurationError):
        SolverOptions(basis="cubic")
    s = scalar_scenario()
    p = simulate_paths(s, constant_control(0.0), _noise(s, 2))
    with pytest.raises(ConfigurationError):
        backward_adjoint(p, s, "cubic")


def test_adjoint_terminal_condition_and_q_shape():
    s = hetero_scenario()
    p = simulate_paths(s, constant_control(0.1), _noise(s, 300))
    adj = backward_adjoint(p, s, with_q=True)
    np.testing.assert_allclose(adj.p[:, -1], 2 * s.alpha / 4 * (p.X[:, -1] - p.Y))
    assert adj.q.shape == (300, 50, 4, 5)
    assert np.isfinite(adj.sup_second_moment())


def test_optimizer_scalar():
    s = scalar_scenario()
    res = optimize_picard(s, _noise(s, 1))
    assert res.cost.value == pytest.approx(0.5, abs=1e-9)
    np.testing.assert_allclose(res.paths.theta, -0.5, atol=1e-6)
    assert res.trace.stop_reason == "converged"
    assert res.fixed_point_gap(s) < 1e-6


def test_optimizer_constrained_clamps():
    s = scalar_scenario(theta_lo=-0.1, theta_hi=0.1)
    res = optimize_picard(s, _noise(s, 1))
    assert np.all(res.paths.theta >= -0.1) and np.all(res.paths.theta <= 0.1)
    assert res.cost.value == pytest.approx(0.82, abs=2e-3)


def test_optimizer_max_iter_returns_best():
    s = hetero_scenario()
    res = optimize_picard(s, _noise(s, 500), SolverOptions(max_iter=2, damping=0.3))
    assert res.trace.stop_reason == "max_iter"
    assert res.cost.value == min(res.trace.costs)


def test_optimizer_heterogeneous_matches_riccati():
    s = hetero_scenario()
    res = optimize_picard(s, _noise(s, 5000, seed=9))
    x0, y = s.initial_data(1)
    v = riccati_value(solve_riccati(s), x0[0], y[0])
    assert abs(res.cost.value - v) < 3 * res.cost.se + 0.01 * v
    costs = np.array(res.trace.costs)
    assert costs[-1] <= costs[0]


def test_point_mass_weak_cost_equals_strong_cost():
    s = hetero_scenario()
    noise = _noise(s, 200)
    c = constant_control(0.3)
    assert evaluate_weak_cost(RandomizedPolicy.point_mass(c), s, noise).value == evaluate_strong_cost(c, s, noise).value


def test_mixture_is_average_of_components():
    s = hetero_scenario()
    noise = _noise(s, 4000)
    pol = RandomizedPolicy((constant_control(0.0), constant_control(1.0)), (0.25, 0.75))
    which = pol.choose(noise)
    assert abs(which.mean() - 0.75) < 0.03
    emitted = emit_controls(pol, s, noise)
    np.testing.assert_array_equal(emitted[:, 0], which.astype(float))
    per0 = pathwise_cost(simulate_paths(s, constant_control(0.0), noise))
    per1 = pathwise_cost(simulate_paths(s, constant_control(1.0), noise))
    expected = np.where(which == 1, per1, per0).mean()
    assert evaluate_weak_cost(pol, s, noise).value == pytest.approx(expected, rel=1e-14)


def test_sampler_policy():
    s = scalar_scenario()
    noise = _noise(s, 10)
    pol = RandomizedPolicy(sampler=lambda idx, u, x0, y, nz: np.outer(u - 0.5, np.ones(51)))
    th = emit_controls(pol, s, noise)
    assert th.shape == (10, 51)
    with pytest.raises(ConfigurationError):
        RandomizedPolicy()
    with pytest.raises(ConfigurationError):
        RandomizedPolicy((constant_control(0),), (0.5,))


def test_random_controls_admissible_and_reproducible():
    s = scalar_scenario(theta_lo=-0.3, theta_hi=0.7)
    a = random_admissible_controls(s, 20, seed=5)
    b = random_admissible_controls(s, 20, seed=5)
    for x, y in zip(a, b):
        assert np.array_equal(x.values, y.values)
        assert x.values.min() >= -0.3 and x.values.max() <= 0.7
    assert len({tuple(c.values) for c in a}) == 20
