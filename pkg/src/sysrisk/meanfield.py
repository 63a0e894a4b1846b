"""Conditional McKean-Vlasov particle system with common noise.

Particles within one repetition share the common Brownian path and the
control; the conditional law given that shared information is represented by
the cross-particle empirical measure.  All cross-particle averages use
:func:`sym_mean`, which sorts before summing so the result does not depend on
particle order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from . import rng
from .errors import ConfigurationError, DimensionError
from .measures import EmpiricalMeasure, EmpiricalMeasureFlow
from .model import BankType, InitLaw, Scenario
from .sde import TimeGrid, check_admissible


def sym_mean(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Order-invariant mean along ``axis``."""
    return np.sort(x, axis=axis).sum(axis=axis) / x.shape[axis]


@dataclass(frozen=True)
class LimitLaw:
    """Independent uniform types and normal initial data.

    Types are drawn once per particle index (the first ``N`` of ``M`` draws
    coincide); initial data ``(x0, y)`` are drawn per repetition and particle.
    A range ``(lo, lo)`` makes that coordinate deterministic.

    ``type_sequence="halton"`` replaces the i.i.d. type draws by the (nested)
    Halton sequence, whose empirical measure converges at rate ``~log^3 N / N``
    instead of ``N^{-1/2}``.
    """

    a_range: tuple[float, float] = (1.0, 1.0)
    u_range: tuple[float, float] = (1.0, 1.0)
    sigma_range: tuple[float, float] = (0.5, 0.5)
    x0_mean: float = 0.0
    x0_std: float = 1.0
    y_mean: float = 0.0
    y_std: float = 0.0
    bound_K: float = 10.0
    moment_bound: float = float("inf")
    type_sequence: str = "iid"

    def __post_init__(self):
        if self.type_sequence not in ("iid", "halton"):
            raise ConfigurationError(f"unknown type sequence {self.type_sequence!r}")
        for name in ("a_range", "u_range", "sigma_range"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ConfigurationError(f"A_s1: {name}={lo, hi} must satisfy 0 <= lo <= hi")
        top = math.sqrt(self.a_range[1] ** 2 + self.u_range[1] ** 2 + self.sigma_range[1] ** 2)
        if top > self.bound_K:
            raise ConfigurationError(f"A_s1: type norm can reach {top:.6g} > K={self.bound_K}")
        if self.x0_std < 0 or self.y_std < 0:
            raise ConfigurationError("standard deviations must be >= 0")

    @property
    def continuous_density(self) -> bool:
        """Whether the initial-state law has a square-integrable density."""
        return self.x0_std > 0

    @property
    def degenerate(self) -> bool:
        return (
            self.a_range[0] == self.a_range[1]
            and self.u_range[0] == self.u_range[1]
            and self.sigma_range[0] == self.sigma_range[1]
            and self.x0_std == 0
            and self.y_std == 0
        )

    def sample_types(self, M: int, seed: int) -> np.ndarray:
        if self.type_sequence == "halton":
            gen = qmc.Halton(d=3, scramble=False)
            gen.fast_forward(1)  # skip the origin
            u = gen.random(M)
        else:
            u = rng.uniforms(seed, rng.stream_code(rng.TYPES), 0, M, 3)
        lo = np.array([self.a_range[0], self.u_range[0], self.sigma_range[0]])
        hi = np.array([self.a_range[1], self.u_range[1], self.sigma_range[1]])
        return lo + (hi - lo) * u

    def sample_initial(self, M: int, seed: int, rep: int = 0):
        z = rng.normals(seed, rng.stream_code(rng.MKV_INIT, 0, rep), 0, M, 2)
        return self.x0_mean + self.x0_std * z[:, 0], self.y_mean + self.y_std * z[:, 1]

    def banks(self, N: int, seed: int) -> tuple[BankType, ...]:
        return tuple(BankType(*row) for row in self.sample_types(N, seed))

    def init_law(self) -> InitLaw:
        return InitLaw(self.x0_mean, self.x0_std, self.y_mean, self.y_std)

    def to_scenario(self, N: int, seed: int, **kwargs) -> Scenario:
        """N-bank problem with the first ``N`` type draws and i.i.d. initial data."""
        banks = self.banks(N, seed)
        if self.x0_std == 0 and self.y_std == 0:
            from .model import InitialDatum

            init = tuple(InitialDatum(self.x0_mean, self.y_mean) for _ in range(N))
        else:
            init = self.init_law()
        kwargs.setdefault("allow_degenerate", not all(b.is_strict() for b in banks))
        kwargs.setdefault("bound_K", self.bound_K)
        return Scenario(banks=banks, init=init, seed=seed, **kwargs)


# -- test functions and the generator -------------------------------------------

@dataclass(frozen=True)
class TestFunction:
    name: str
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray] | None
    d2f: Callable[[np.ndarray], np.ndarray] | None

    __test__ = False  # not a pytest class


def default_phi_family(scale: float = 1.0) -> list[TestFunction]:
    s = scale if scale > 0 else 1.0
    fam = []
    for k in (1, 2, 3):
        w = k / s
        fam.append(TestFunction(f"sin{k}", lambda x, w=w: np.sin(w * x), lambda x, w=w: w * np.cos(w * x),
                                lambda x, w=w: -w * w * np.sin(w * x)))
        fam.append(TestFunction(f"cos{k}", lambda x, w=w: np.cos(w * x), lambda x, w=w: -w * np.sin(w * x),
                                lambda x, w=w: -w * w * np.cos(w * x)))
    fam.append(TestFunction("tanh", lambda x: np.tanh(x / s), lambda x: (1 - np.tanh(x / s) ** 2) / s,
                            lambda x: -2 * np.tanh(x / s) * (1 - np.tanh(x / s) ** 2) / s**2))
    return fam


def _require_derivs(phi: TestFunction):
    if phi.df is None or phi.d2f is None:
        raise ConfigurationError(f"test function {phi.name!r} lacks analytic derivatives")


def generator_apply(phi: TestFunction, m: EmpiricalMeasure, theta: float, bank, sigma0: float, x):
    """``[a(mean_x(m) - x) + u theta] phi'(x) + ((sigma^2 + sigma0^2) / 2) phi''(x)``."""
    _require_derivs(phi)
    a, u, sig = (bank.a, bank.u, bank.sigma) if hasattr(bank, "a") else bank
    x = np.asarray(x, dtype=float)
    drift = a * (float(sym_mean(m.atoms[:, -1])) - x) + u * theta
    return drift * phi.df(x) + 0.5 * (sig**2 + sigma0**2) * phi.d2f(x)


# -- particle simulation ------------------------------------------------------------

@dataclass(frozen=True)
class ParticleEnsemble:
    """``X`` is ``(reps, M, steps+1)``; ``Y`` is ``(reps, M)``; types ``(M, 3)`` are shared."""

    types: np.ndarray
    Y: np.ndarray
    X: np.ndarray
    W0: np.ndarray  # (reps, steps+1)
    dW0: np.ndarray  # (reps, steps)
    theta: np.ndarray  # (reps, steps+1)
    grid: TimeGrid
    sigma0: float
    sweeps: int = 0
    converged: bool = True

    @property
    def M(self) -> int:
        return self.X.shape[1]

    @property
    def reps(self) -> int:
        return self.X.shape[0]

    def flow(self, rep: int = 0) -> EmpiricalMeasureFlow:
        return EmpiricalMeasureFlow.from_paths(self.types, self.Y[rep], self.X[rep], self.grid.knots)

    def mean_path(self) -> np.ndarray:
        return sym_mean(self.X, axis=1)

    def distance_sq(self) -> np.ndarray:
        """``<mu_t, L>`` per rep and knot, ``(reps, steps+1)``."""
        return sym_mean((self.X - self.Y[:, :, None]) ** 2, axis=1)


@dataclass(frozen=True)
class ParticleInputs:
    """Everything random in one batch of repetitions."""

    types: np.ndarray  # (M, 3)
    x0: np.ndarray  # (reps, M)
    y: np.ndarray  # (reps, M)
    dW: np.ndarray  # (reps, M, steps)
    dW0: np.ndarray  # (reps, steps)


def draw_inputs(law: LimitLaw, M: int, grid: TimeGrid, seed: int, reps: int = 1) -> ParticleInputs:
    """Nested draws: particle ``i`` of rep ``r`` reads the same numbers for every ``M > i``."""
    types = law.sample_types(M, seed)
    x0 = np.empty((reps, M))
    y = np.empty((reps, M))
    dW = np.empty((reps, M, grid.steps))
    sq = math.sqrt(grid.dt)
    for r in range(reps):
        x0[r], y[r] = law.sample_initial(M, seed, r)
        dW[r] = sq * rng.normals(seed, rng.stream_code(rng.MKV_IDIO, 0, r), 0, M, grid.steps)
    dW0 = sq * rng.normals(seed, rng.stream_code(rng.MKV_COMMON), 0, reps, grid.steps)
    return ParticleInputs(types, x0, y, dW, dW0)


def subset_inputs(inp: ParticleInputs, N: int) -> ParticleInputs:
    return ParticleInputs(inp.types[:N], inp.x0[:, :N], inp.y[:, :N], inp.dW[:, :N], inp.dW0)


ThetaSpec = "float | np.ndarray | Callable[[float, np.ndarray], np.ndarray]"


def _theta_schedule(theta_spec, reps: int, steps: int):
    if callable(theta_spec):
        return None
    th = np.asarray(theta_spec, dtype=float)
    if th.ndim == 0:
        th = np.full(steps + 1, float(th))
    if th.shape[-1] != steps + 1:
        raise DimensionError(f"control has {th.shape[-1]} knots, grid has {steps + 1}")
    return np.array(np.broadcast_to(th, (reps, steps + 1)))


def simulate_particles(
    inp: ParticleInputs,
    theta_spec,
    grid: TimeGrid,
    sigma0: float,
    *,
    mode: str = "direct",
    theta_bounds: tuple[float, float] | None = None,
    tol: float = 1e-4,
    max_sweeps: int = 200,
) -> ParticleEnsemble:
    """Euler scheme for the particle system.

    ``theta_spec`` is a constant, a path on the knots (``(steps+1,)`` or
    ``(reps, steps+1)``) or a feedback ``fn(t, mean_x) -> theta`` of the shared
    information.  ``mode="picard"`` freezes the mean path, re-simulates every
    particle and repeats until the mean path moves less than
    ``tol * (1 + max|mean|)`` in sup norm.
    """
    if mode not in ("direct", "picard"):
        raise ConfigurationError(f"unknown mode {mode!r}")
    reps, M = inp.x0.shape
    if M < 1:
        raise ConfigurationError("need at least one particle")
    steps, dt = grid.steps, grid.dt
    a, u, sig = inp.types[:, 0], inp.types[:, 1], inp.types[:, 2]
    knots = grid.knots
    sched = _theta_schedule(theta_spec, reps, steps)
    if sched is not None and theta_bounds is not None:
        check_admissible(sched, *theta_bounds)
    common = sigma0 * inp.dW0

    def run(frozen_mean):
        X = np.empty((reps, M, steps + 1))
        X[:, :, 0] = inp.x0
        theta = np.empty((reps, steps + 1)) if sched is None else sched
        for k in range(steps + 1):
            mk = sym_mean(X[:, :, k], axis=1) if frozen_mean is None else frozen_mean[:, k]
            if sched is None:
                th = np.broadcast_to(np.asarray(theta_spec(knots[k], mk), dtype=float), (reps,))
                if theta_bounds is not None:
                    check_admissible(th, *theta_bounds)
                theta[:, k] = th
            if k == steps:
                break
            xk = X[:, :, k]
            drift = a * (mk[:, None] - xk) + u * theta[:, k, None]
            X[:, :, k + 1] = xk + drift * dt + sig * inp.dW[:, :, k] + common[:, k, None]
        return X, theta

    sweeps, converged = 0, True
    if mode == "direct":
        X, theta = run(None)
    else:
        mean = np.repeat(sym_mean(inp.x0, axis=1)[:, None], steps + 1, axis=1)
        converged = False
        for sweeps in range(1, max_sweeps + 1):
            X, theta = run(mean)
            new = sym_mean(X, axis=1)
            change = float(np.max(np.abs(new - mean)))
            mean = new
            if change < tol * (1.0 + float(np.max(np.abs(new)))):
                converged = True
                break
    W0 = np.concatenate([np.zeros((reps, 1)), np.cumsum(inp.dW0, axis=1)], axis=1)
    return ParticleEnsemble(inp.types, inp.y, X, W0, inp.dW0, theta, grid, sigma0, sweeps, converged)


def simulate_mkv(
    law: LimitLaw,
    theta_spec,
    M: int,
    grid: TimeGrid,
    seed: int,
    mode: str = "direct",
    *,
    sigma0: float = 0.0,
    reps: int = 1,
    theta_bounds: tuple[float, float] | None = None,
    tol: float = 1e-4,
    max_sweeps: int = 200,
) -> ParticleEnsemble:
    if M < 2:
        raise ConfigurationError("need at least two particles")
    inp = draw_inputs(law, M, grid, seed, reps)
    return simulate_particles(
        inp, theta_spec, grid, sigma0, mode=mode, theta_bounds=theta_bounds, tol=tol, max_sweeps=max_sweeps
    )


# -- contraction ------------------------------------------------------------------------

def contraction_norm(X1: np.ndarray, X2: np.ndarray, r: float, times: np.ndarray) -> float:
    """``E int_0^T e^{-r t} |X1_t - X2_t| dt`` averaged over all leading axes (trapezoidal in t)."""
    X1 = np.asarray(X1, dtype=float)
    X2 = np.asarray(X2, dtype=float)
    if X1.shape != X2.shape:
        raise DimensionError(f"shape mismatch {X1.shape} vs {X2.shape}")
    if not r > 0:
        raise ConfigurationError("r must be > 0")
    if X1.shape[-1] != len(times):
        raise DimensionError("paths and time grid differ in length")
    w = np.exp(-r * np.asarray(times)) * _trap_weights(np.asarray(times))
    return float(np.mean(np.abs(X1 - X2) @ w))


def _trap_weights(times: np.ndarray) -> np.ndarray:
    d = np.diff(times)
    w = np.zeros_like(times)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


def picard_map(X_in: np.ndarray, inp: ParticleInputs, theta: np.ndarray, grid: TimeGrid, sigma0: float) -> np.ndarray:
    """One application of ``Z``: integrate ``a(mean(X_in) - X_in) + u theta`` (left-point
    rule) on top of the initial value and the noise.  ``X_in`` is ``(reps, M, steps+1)``."""
    a, u, sig = inp.types[:, 0], inp.types[:, 1], inp.types[:, 2]
    mean = sym_mean(X_in, axis=1)
    theta = np.broadcast_to(np.asarray(theta, dtype=float), (X_in.shape[0], grid.steps + 1))
    incr = (a[:, None] * (mean[:, None, :-1] - X_in[:, :, :-1]) + u[:, None] * theta[:, None, :-1]) * grid.dt
    incr = incr + sig[:, None] * inp.dW + sigma0 * inp.dW0[:, None, :]
    out = np.empty_like(X_in)
    out[:, :, 0] = inp.x0
    out[:, :, 1:] = inp.x0[:, :, None] + np.cumsum(incr, axis=2)
    return out


# -- stochastic FPK residual --------------------------------------------------------------

@dataclass(frozen=True)
class ResidualReport:
    names: list[str]
    residual: np.ndarray  # (n_phi, steps+1)
    times: np.ndarray

    def sup_rms(self) -> float:
        """``sup_t sqrt(mean_phi Res(phi, t)^2)``."""
        return float(np.max(np.sqrt(np.mean(self.residual**2, axis=0))))


def sfpk_residual(
    flow: EmpiricalMeasureFlow,
    theta_path: np.ndarray,
    common_increments: np.ndarray,
    phi_family: Sequence[TestFunction],
    sigma0: float,
) -> ResidualReport:
    """``Res(phi, t_k) = <mu_k,phi> - <mu_0,phi> - sum_{l<k} <mu_l, A phi> dt - sigma0 sum_{l<k} <mu_l, phi'> dW0_l``."""
    times = flow.times
    steps = len(times) - 1
    theta_path = np.broadcast_to(np.asarray(theta_path, dtype=float), (steps + 1,))
    dW0 = np.asarray(common_increments, dtype=float)
    if dW0.shape != (steps,):
        raise DimensionError(f"common increments have shape {dW0.shape}, expected ({steps},)")
    dts = np.diff(times)
    a, u, sig = flow.static[:, 0], flow.static[:, 1], flow.static[:, 2]
    X = flow.X
    mean = sym_mean(X, axis=0)  # (steps+1,)
    names, rows = [], []
    for phi in phi_family:
        _require_derivs(phi)
        level = sym_mean(phi.f(X), axis=0)
        d1 = phi.df(X)
        d2 = phi.d2f(X)
        gen = (a[:, None] * (mean[None, :] - X) + u[:, None] * theta_path[None, :]) * d1
        gen = gen + 0.5 * (sig[:, None] ** 2 + sigma0**2) * d2
        gen_mean = sym_mean(gen, axis=0)
        mart = sigma0 * sym_mean(d1, axis=0)
        comp = np.concatenate([[0.0], np.cumsum(gen_mean[:-1] * dts + mart[:-1] * dW0)])
        rows.append(level - level[0] - comp)
        names.append(phi.name)
    return ResidualReport(names, np.array(rows), times)


# -- mean-field cost -------------------------------------------------------------------------

@dataclass(frozen=True)
class MeanFieldCost:
    value: float
    se: float
    per_rep: np.ndarray = field(repr=False)


def evaluate_mf_cost(ensemble: ParticleEnsemble, alpha: float, beta: float, lam: float) -> MeanFieldCost:
    """``alpha <mu_T, L> + beta int <mu_t, L> dt + lam int theta^2 dt`` averaged over repetitions;
    time integrals use the left-point rule of the Euler step."""
    w = np.full(ensemble.grid.steps + 1, ensemble.grid.dt)
    w[-1] = 0.0
    dist = ensemble.distance_sq()
    per_rep = alpha * dist[:, -1] + beta * (dist @ w) + lam * (ensemble.theta**2 @ w)
    n = per_rep.size
    se = float(per_rep.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return MeanFieldCost(float(per_rep.mean()), se, per_rep)
