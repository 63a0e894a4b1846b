import numpy as np
import pytest

from conftest import hetero_scenario, scalar_scenario
from sysrisk.errors import AdmissibilityError, ConfigurationError, DimensionError
from sysrisk.model import BankType, InitialDatum, Scenario
from sysrisk.sde import (
    FeedbackControl,
    OpenLoopControl,
    constant_control,
    make_time_grid,
    moment_report,
    sample_noise,
    scenario_grid,
    simulate_paths,
)


def test_time_grid_validation():
    g = make_time_grid(2.0, 4)
    np.testing.assert_allclose(g.knots, [0, 0.5, 1, 1.5, 2])
    with pytest.raises(ConfigurationError):
        make_time_grid(0.0, 4)
    with pytest.raises(ConfigurationError):
        make_time_grid(1.0, 0)


def test_noise_independent_of_thread_count():
    g = make_time_grid(1.0, 20)
    a = sample_noise(g, 6, 50, seed=4, workers=1)
    b = sample_noise(g, 6, 50, seed=4, workers=4)
    assert np.array_equal(a.dW, b.dW) and np.array_equal(a.dW0, b.dW0)


def test_noise_nested_in_banks_and_paths():
    g = make_time_grid(1.0, 10)
    big = sample_noise(g, 5, 40, seed=1)
    small = sample_noise(g, 3, 40, seed=1)
    tail = sample_noise(g, 5, 10, seed=1, path_start=30)
    assert np.array_equal(big.dW[:, :, :3], small.dW)
    assert np.array_equal(big.dW0, small.dW0)
    assert np.array_equal(big.dW[30:], tail.dW)


def test_brownian_paths_start_at_zero():
    n = sample_noise(make_time_grid(1.0, 8), 2, 3, seed=0)
    W0, W = n.brownian_paths()
    assert W0.shape == (3, 9) and W.shape == (3, 9, 2)
    assert np.all(W0[:, 0] == 0) and np.all(W[:, 0] == 0)
    np.testing.assert_allclose(np.diff(W0, axis=1), n.dW0)


def test_deterministic_open_loop_closed_form():
    # a=0, sigma=sigma0=0: X_t = x0 + u * sum(theta) dt
    s = scalar_scenario(steps=10)
    noise = sample_noise(scenario_grid(s), 1, 1, seed=0)
    theta = np.linspace(-1, 1, 11)
    p = simulate_paths(s, OpenLoopControl(theta), noise)
    expected = 1.0 + np.concatenate([[0.0], np.cumsum(theta[:-1]) * 0.1])
    np.testing.assert_allclose(p.X[0, :, 0], expected, atol=1e-14)


def test_equal_states_stay_equal_without_noise():
    banks = tuple(BankType(a, 1.0, 0.0) for a in (0.5, 1.0, 2.0))
    s = Scenario(banks=banks, init=tuple(InitialDatum(0.7, 0.0) for _ in banks), allow_degenerate=True)
    p = simulate_paths(s, constant_control(0.3), sample_noise(scenario_grid(s), 3, 2, seed=0))
    np.testing.assert_allclose(p.X[..., 0], p.X[..., 2], atol=1e-14)
    np.testing.assert_allclose(p.X[0, -1, 0], 0.7 + 0.3 * 1.0, atol=1e-12)


def test_common_noise_moves_all_banks_together():
    banks = tuple(BankType(a, 1.0, 0.0) for a in (0.5, 2.0))
    s = Scenario(banks=banks, init=tuple(InitialDatum(0.0, 0.0) for _ in banks), sigma0=0.4, allow_degenerate=True)
    noise = sample_noise(scenario_grid(s), 2, 5, seed=2)
    p = simulate_paths(s, constant_control(0.0), noise)
    W0, _ = noise.brownian_paths()
    np.testing.assert_allclose(p.X[..., 0], 0.4 * W0, atol=1e-12)
    np.testing.assert_allclose(p.X[..., 1], 0.4 * W0, atol=1e-12)


def test_feedback_control_is_evaluated_on_state():
    s = scalar_scenario(steps=20)
    noise = sample_noise(scenario_grid(s), 1, 2, seed=0)
    fb = FeedbackControl(lambda t, x, y: np.clip(-x[:, 0], -5, 5))
    p = simulate_paths(s, fb, noise)
    # dx = -x dt: Euler gives (1 - dt)^k
    np.testing.assert_allclose(p.X[0, :, 0], (1 - 0.05) ** np.arange(21), rtol=1e-12)
    np.testing.assert_allclose(p.theta[0], -p.X[0, :, 0])


def test_inadmissible_controls_rejected():
    s = scalar_scenario(theta_lo=-0.1, theta_hi=0.1)
    noise = sample_noise(scenario_grid(s), 1, 1, seed=0)
    with pytest.raises(AdmissibilityError):
        simulate_paths(s, constant_control(0.2), noise)
    with pytest.raises(AdmissibilityError):
        simulate_paths(s, FeedbackControl(lambda t, x, y: np.full(x.shape[0], 1.0)), noise)


def test_shape_errors():
    s = hetero_scenario()
    with pytest.raises(DimensionError):
        simulate_paths(s, constant_control(0.0), sample_noise(scenario_grid(s), 3, 2, seed=0))
    with pytest.raises(DimensionError):
        simulate_paths(s, OpenLoopControl(np.zeros(7)), sample_noise(scenario_grid(s), 4, 2, seed=0))


def test_moment_report_on_deterministic_path():
    s = scalar_scenario(steps=64)
    p = simulate_paths(s, constant_control(1.0), sample_noise(scenario_grid(s), 1, 1, seed=0))
    rep = moment_report(p, rho_exp=1.0)
    assert rep.max_sup_moment == pytest.approx(2.0**3)
    # linear path with slope 1: largest increment over a window delta is delta
    np.testing.assert_allclose(rep.modulus, rep.deltas**2, rtol=1e-12)


def test_moment_report_finite_for_stochastic_case():
    s = hetero_scenario(mc_paths=200)
    p = simulate_paths(s, constant_control(0.5), sample_noise(scenario_grid(s), 4, 200, seed=1))
    rep = moment_report(p, s.rho_exp)
    assert np.all(np.isfinite(rep.sup_moment))
    assert np.all(np.diff(rep.modulus) <= 0)  # deltas are decreasing
