"""Noise generation and Euler-Maruyama simulation of the N-bank system."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from . import rng
from .errors import AdmissibilityError, ConfigurationError, DimensionError
from .model import Scenario, apply_drift


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def knots(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)


def make_time_grid(T: float, steps: int) -> TimeGrid:
    if not T > 0:
        raise ConfigurationError(f"horizon T={T} must be > 0")
    if int(steps) != steps or steps < 1:
        raise ConfigurationError(f"steps={steps} must be a positive integer")
    return TimeGrid(float(T), int(steps))


def scenario_grid(s: Scenario) -> TimeGrid:
    return make_time_grid(s.horizon, s.steps)


@dataclass(frozen=True)
class NoiseBundle:
    """Brownian increments: ``dW0`` is ``(paths, steps)``, ``dW`` is ``(paths, steps, N)``."""

    grid: TimeGrid
    dW0: np.ndarray
    dW: np.ndarray
    seed: int
    path_start: int = 0

    @property
    def n_paths(self) -> int:
        return self.dW0.shape[0]

    @property
    def n_banks(self) -> int:
        return self.dW.shape[2]

    def brownian_paths(self):
        """Cumulative paths ``W0`` ``(paths, steps+1)`` and ``W`` ``(paths, steps+1, N)``."""
        W0 = np.concatenate([np.zeros((self.n_paths, 1)), np.cumsum(self.dW0, axis=1)], axis=1)
        W = np.concatenate(
            [np.zeros((self.n_paths, 1, self.n_banks)), np.cumsum(self.dW, axis=1)], axis=1
        )
        return W0, W


def sample_noise(
    grid: TimeGrid,
    n_banks: int,
    n_paths: int,
    seed: int,
    *,
    path_start: int = 0,
    workers: int = 1,
) -> NoiseBundle:
    """Increments for ``W^0`` (stream 0) and ``W^i`` (stream ``i``).

    Each Brownian index has its own keystream with path ``p`` occupying
    positions ``[p * steps, (p + 1) * steps)``; ``workers`` only changes
    scheduling, not the numbers.
    """
    if n_paths < 1:
        raise ConfigurationError("need at least one path")
    if n_banks < 1:
        raise ConfigurationError("need at least one bank")
    scale = np.sqrt(grid.dt)

    def one(j):
        return scale * rng.normals(seed, rng.stream_code(rng.BROWNIAN, j), path_start, n_paths, grid.steps)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            blocks = list(ex.map(one, range(n_banks + 1)))
    else:
        blocks = [one(j) for j in range(n_banks + 1)]
    dW = np.stack(blocks[1:], axis=2) if n_banks else np.empty((n_paths, grid.steps, 0))
    return NoiseBundle(grid, blocks[0], dW, seed, path_start)


# -- controls -----------------------------------------------------------------

@dataclass(frozen=True)
class FeedbackControl:
    """Markov feedback ``fn(t, x, y) -> theta`` with ``x, y`` of shape ``(paths, N)``."""

    fn: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    name: str = "feedback"


@dataclass(frozen=True)
class OpenLoopControl:
    """Control values on the knots, shape ``(steps+1,)`` or ``(paths, steps+1)``."""

    values: np.ndarray
    name: str = "open_loop"

    def on(self, n_paths: int, steps: int) -> np.ndarray:
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 0:
            v = np.full(steps + 1, float(v))
        if v.shape[-1] != steps + 1:
            raise DimensionError(f"control has {v.shape[-1]} knots, grid has {steps + 1}")
        if v.ndim == 1:
            return np.broadcast_to(v, (n_paths, steps + 1))
        if v.shape[0] != n_paths:
            raise DimensionError(f"control has {v.shape[0]} paths, noise has {n_paths}")
        return v


ControlSpec = Union[FeedbackControl, OpenLoopControl]


def constant_control(c: float) -> OpenLoopControl:
    return OpenLoopControl(np.asarray(float(c)), name=f"const({c:g})")


def check_admissible(theta: np.ndarray, lo: float, hi: float) -> None:
    theta = np.asarray(theta)
    bad = ~((theta >= lo) & (theta <= hi))
    if bad.any():
        v = theta[bad].flat[0]
        raise AdmissibilityError(f"control value {v!r} outside Theta=[{lo}, {hi}]")


@dataclass(frozen=True)
class PathBundle:
    """State ``X`` ``(paths, steps+1, N)``, control ``theta`` ``(paths, steps+1)``,
    targets ``Y`` ``(paths, N)``."""

    X: np.ndarray
    theta: np.ndarray
    Y: np.ndarray
    noise: NoiseBundle
    scenario: Scenario

    @property
    def grid(self) -> TimeGrid:
        return self.noise.grid

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]


def simulate_paths(
    scenario: Scenario,
    control: ControlSpec,
    noise: NoiseBundle,
    *,
    x0: np.ndarray | None = None,
    y: np.ndarray | None = None,
) -> PathBundle:
    """Euler-Maruyama: ``X_{k+1} = X_k + (A X_k + theta_k u) dt + Sigma dW_k``."""
    N = scenario.n_banks
    P = noise.n_paths
    grid = noise.grid
    if noise.n_banks != N:
        raise DimensionError(f"noise has {noise.n_banks} banks, scenario has {N}")
    if x0 is None or y is None:
        dx0, dy = scenario.initial_data(P, seed=noise.seed, path_start=noise.path_start)
        x0 = dx0 if x0 is None else x0
        y = dy if y is None else y
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (P, N))
    y = np.broadcast_to(np.asarray(y, dtype=float), (P, N)).copy()

    a, u, sig = scenario.a, scenario.u, scenario.sigma
    dt = grid.dt
    knots = grid.knots
    lo, hi = scenario.theta_lo, scenario.theta_hi

    X = np.empty((P, grid.steps + 1, N))
    X[:, 0] = x0
    if isinstance(control, OpenLoopControl):
        theta = np.array(control.on(P, grid.steps), dtype=float)
        check_admissible(theta, lo, hi)
        feedback = None
    else:
        theta = np.empty((P, grid.steps + 1))
        feedback = control.fn

    common = scenario.sigma0 * noise.dW0
    for k in range(grid.steps + 1):
        if feedback is not None:
            th = np.broadcast_to(np.asarray(feedback(knots[k], X[:, k], y), dtype=float), (P,))
            check_admissible(th, lo, hi)
            theta[:, k] = th
        if k == grid.steps:
            break
        xk = X[:, k]
        drift = apply_drift(a, xk) + theta[:, k, None] * u
        X[:, k + 1] = xk + drift * dt + common[:, k, None] + sig * noise.dW[:, k]
    return PathBundle(X, theta, y, noise, scenario)


# -- moment diagnostics -------------------------------------------------------

@dataclass(frozen=True)
class MomentReport:
    rho_exp: float
    sup_moment: np.ndarray  # per bank, E[sup_t |X_t|^(2+rho)]
    deltas: np.ndarray
    modulus: np.ndarray  # per delta, max over banks of E[sup_{|t-s|<=delta} |X_t - X_s|^2]

    @property
    def max_sup_moment(self) -> float:
        return float(self.sup_moment.max())


def moment_report(paths: PathBundle, rho_exp: float, deltas=None) -> MomentReport:
    X = paths.X
    if X.size == 0:
        raise ConfigurationError("empty path bundle")
    grid = paths.grid
    sup_moment = np.mean(np.max(np.abs(X), axis=1) ** (2 + rho_exp), axis=0)
    if deltas is None:
        deltas = grid.horizon / 2.0 ** np.arange(1, 7)
    deltas = np.asarray(deltas, dtype=float)
    M = grid.steps
    # running max over lags, so larger windows reuse smaller ones
    lags = np.minimum(np.floor(deltas / grid.dt + 1e-9).astype(int), M)
    max_lag = int(lags.max()) if lags.size else 0
    best = np.zeros((X.shape[0], X.shape[2]))
    by_lag = {0: best.copy()}
    for lag in range(1, max_lag + 1):
        d2 = np.max((X[:, lag:] - X[:, :-lag]) ** 2, axis=1)
        best = np.maximum(best, d2)
        by_lag[lag] = best.copy()
    modulus = np.array([by_lag[int(L)].mean(axis=0).max() for L in lags])
    return MomentReport(rho_exp, sup_moment, deltas, modulus)
