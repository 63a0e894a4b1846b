"""Adjoint BSDE by regression, Gateaux derivative, projected Picard optimiser,
and Monte Carlo evaluation of strong and randomised controls.

Time discretisation conventions (shared by every routine here):

* state: Euler-Maruyama on the knots ``t_0..t_M``;
* running cost: left-point rule, knot ``k < M`` weighted by ``dt`` (the last knot drops out);
* adjoint: ``p_M = (2 alpha / N)(X_M - Y)`` and
  ``p_k = E_k[p_{k+1}] + (A' E_k[p_{k+1}] + (2 beta / N)(X_k - Y)) dt``,
  with ``E_k`` a cross-path least-squares regression on functions of ``(X_k, Y)``.

The control at knot ``k < M`` pairs with ``E_k[p_{k+1}]`` (the adjoint felt by
the Euler step it drives); at ``k = M`` it pairs with ``p_M``.  With these choices the
projected fixed point is exactly stationary for the discretised problem.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import rng
from .errors import AdmissibilityError, ConfigurationError
from .model import Scenario, apply_drift_transpose, project_theta, running_cost, terminal_cost
from .sde import (
    ControlSpec,
    NoiseBundle,
    OpenLoopControl,
    PathBundle,
    check_admissible,
    simulate_paths,
)

log = logging.getLogger(__name__)

BASES = ("affine", "quadratic", "bankwise")


def trapezoid_weights(steps: int, dt: float) -> np.ndarray:
    w = np.full(steps + 1, dt)
    w[0] = w[-1] = dt / 2
    return w


def left_point_weights(steps: int, dt: float) -> np.ndarray:
    """Running-cost quadrature matching the Euler step: knot ``k < M`` covers ``[t_k, t_{k+1})``."""
    w = np.full(steps + 1, dt)
    w[-1] = 0.0
    return w


@dataclass(frozen=True)
class CostEstimate:
    value: float
    se: float
    n_paths: int
    per_path: np.ndarray = field(repr=False)

    def __float__(self):
        return self.value


def _estimate(per_path: np.ndarray) -> CostEstimate:
    n = per_path.size
    se = float(per_path.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return CostEstimate(float(per_path.mean()), se, n, per_path)


def pathwise_cost(paths: PathBundle) -> np.ndarray:
    s = paths.scenario
    w = left_point_weights(paths.grid.steps, paths.grid.dt)
    term = terminal_cost(paths.X[:, -1], paths.Y, s.alpha)
    run = running_cost(paths.X, paths.Y[:, None, :], paths.theta, s.beta, s.lam)
    return term + run @ w


# -- regression -----------------------------------------------------------------

@dataclass
class RegressionDiagnostics:
    residual_rms: np.ndarray  # per step
    truncated_steps: list[int] = field(default_factory=list)
    rcond: float = 1e-12


def _features(X: np.ndarray, Y: np.ndarray, basis: str, a: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Feature tensor without intercept.

    ``affine``/``quadratic``: shared features, shape ``(P, F)``.
    ``bankwise``: per-bank features, shape ``(N, P, F)``.
    """
    if basis == "affine":
        return np.concatenate([X, Y], axis=1)
    if basis == "quadratic":
        return np.concatenate([X, Y, (X - Y) ** 2], axis=1)
    if basis == "bankwise":
        P, N = X.shape
        agg = np.stack(
            [X.mean(1), Y.mean(1), (a * X).mean(1), (u * X).mean(1), (a * Y).mean(1), (u * Y).mean(1)],
            axis=1,
        )
        own = np.stack([X.T, Y.T], axis=2)  # (N, P, 2)
        return np.concatenate([own, np.broadcast_to(agg, (N, P, agg.shape[1]))], axis=2)
    raise ConfigurationError(f"unknown regression basis {basis!r}; expected one of {BASES}")


def _fit(F: np.ndarray, T: np.ndarray, rcond: float):
    """Least-squares fitted values of targets ``T`` on ``[1, F]``.

    ``F`` is ``(P, F)`` with ``T`` ``(P, K)`` (all outputs share the design), or
    batched ``(B, P, F)`` with ``T`` ``(B, P)``.  Columns are standardised and
    constant ones dropped; the Gram matrix is inverted on the eigen-directions
    above ``rcond * largest eigenvalue`` (a truncated pseudo-inverse, exact when
    features are collinear).  Returns ``(fitted, truncated)``.
    """
    shared = F.ndim == 2
    if shared:
        F = F[None]
    mu = F.mean(axis=1, keepdims=True)
    sd = F.std(axis=1, keepdims=True)
    keep = sd > 1e-12 * (1.0 + np.abs(mu))
    Z = np.where(keep, (F - mu) / np.where(keep, sd, 1.0), 0.0)
    T0 = T - T.mean(axis=-2 if shared else -1, keepdims=True)
    if Z.shape[-1] == 0 or not keep.any():
        return T - T0, False
    G = np.einsum("bpf,bpg->bfg", Z, Z)
    ev, V = np.linalg.eigh(G)
    live = ev > rcond * ev[:, -1:]
    inv = np.where(live, 1.0 / np.where(live, ev, 1.0), 0.0)
    # dropped constant columns account for zero eigenvalues of their own
    truncated = bool(np.any((~live).sum(axis=1) > (~keep[:, 0, :]).sum(axis=1)))
    if shared:
        rhs = Z[0].T @ T0
        coef = V[0] @ (inv[0][:, None] * (V[0].T @ rhs))
        return (T - T0) + Z[0] @ coef, truncated
    rhs = np.einsum("bpf,bp->bf", Z, T0)
    coef = np.einsum("bfg,bg->bf", V, inv * np.einsum("bgf,bg->bf", V, rhs))
    return (T - T0) + np.einsum("bpf,bf->bp", Z, coef), truncated


def conditional_expectation(X, Y, target, basis, a, u, rcond=1e-12):
    """Regression estimate of ``E[target | X, Y]`` for ``target`` of shape ``(P, N)``."""
    F = _features(X, Y, basis, a, u)
    if basis == "bankwise":
        fitted, used = _fit(F, target.T, rcond)
        return fitted.T, used
    return _fit(F, target, rcond)


# -- adjoint --------------------------------------------------------------------

@dataclass(frozen=True)
class AdjointSolution:
    """``p`` ``(paths, steps+1, N)``; ``p_next`` holds ``E_k[p_{k+1}]`` for ``k < M``."""

    p: np.ndarray
    p_next: np.ndarray
    q: np.ndarray | None
    diagnostics: RegressionDiagnostics

    def sup_second_moment(self) -> float:
        return float(np.mean(np.max(np.sum(self.p**2, axis=2), axis=1)))


def backward_adjoint(
    paths: PathBundle,
    scenario: Scenario | None = None,
    basis: str = "affine",
    *,
    rcond: float = 1e-12,
    with_q: bool = False,
) -> AdjointSolution:
    s = paths.scenario if scenario is None else scenario
    if basis not in BASES:
        raise ConfigurationError(f"unknown regression basis {basis!r}; expected one of {BASES}")
    X, Y = paths.X, paths.Y
    Pn, M1, N = X.shape
    M = M1 - 1
    dt = paths.grid.dt
    a, u = s.a, s.u
    p = np.empty_like(X)
    p_next = np.empty((Pn, M, N))
    p[:, M] = (2 * s.alpha / N) * (X[:, M] - Y)
    q = None
    if with_q:
        q = np.zeros((Pn, M, N, N + 1))
        dWall = np.concatenate([paths.noise.dW0[:, :, None], paths.noise.dW], axis=2)
    diag = RegressionDiagnostics(np.zeros(M), rcond=rcond)
    n_feat = {"affine": 2 * N, "quadratic": 3 * N, "bankwise": 8}[basis] + 1
    if n_feat >= Pn:
        log.warning("%s basis has %d features for %d paths; consider 'bankwise'", basis, n_feat, Pn)
    for k in range(M - 1, -1, -1):
        cond, used = conditional_expectation(X[:, k], Y, p[:, k + 1], basis, a, u, rcond)
        if used:
            diag.truncated_steps.append(k)
        diag.residual_rms[k] = float(np.sqrt(np.mean((p[:, k + 1] - cond) ** 2)))
        p_next[:, k] = cond
        p[:, k] = cond + (apply_drift_transpose(a, cond) + (2 * s.beta / N) * (X[:, k] - Y)) * dt
        if with_q:
            for j in range(N + 1):
                target = p[:, k + 1] * dWall[:, k, j : j + 1] / dt
                qj, _ = conditional_expectation(X[:, k], Y, target, basis, a, u, rcond)
                q[:, k, :, j] = qj
    if diag.truncated_steps:
        log.debug("collinear regression features at %d steps", len(diag.truncated_steps))
    return AdjointSolution(p, p_next, q, diag)


def adjoint_for_control(adj: AdjointSolution) -> np.ndarray:
    """Adjoint paired with each control knot: ``E_k[p_{k+1}]`` for ``k < M``, ``p_M`` at ``M``."""
    return np.concatenate([adj.p_next, adj.p[:, -1:]], axis=1)


def projected_control(adj: AdjointSolution, scenario: Scenario) -> np.ndarray:
    raw = -(adjoint_for_control(adj) @ scenario.u) / (2 * scenario.lam)
    return project_theta(raw, scenario.theta_lo, scenario.theta_hi)


# -- cost functionals -------------------------------------------------------------

def evaluate_strong_cost(theta: ControlSpec, scenario: Scenario, noise: NoiseBundle) -> CostEstimate:
    paths = simulate_paths(scenario, theta, noise)
    return _estimate(pathwise_cost(paths))


def _as_open_loop(theta, n_paths: int, steps: int) -> np.ndarray:
    if isinstance(theta, OpenLoopControl):
        return np.array(theta.on(n_paths, steps), dtype=float)
    return np.array(np.broadcast_to(np.asarray(theta, dtype=float), (n_paths, steps + 1)))


def gateaux_derivative(theta, direction, scenario: Scenario, noise: NoiseBundle, basis: str = "affine") -> float:
    """Monte Carlo estimate of ``E int eta_t h_t dt`` with ``eta = 2 lam theta + u'p``.

    ``theta`` and ``direction`` are open-loop (arrays on the knots or
    :class:`OpenLoopControl`).  Both parts use the left-point rule of the Euler
    step and the running cost, which makes the estimate the exact derivative of
    the discretised cost when the regression is exact.
    """
    P, M = noise.n_paths, noise.grid.steps
    th = _as_open_loop(theta, P, M)
    h = _as_open_loop(direction, P, M)
    lo, hi = scenario.theta_lo, scenario.theta_hi
    try:
        check_admissible(th, lo, hi)
        check_admissible(th + h, lo, hi)
    except AdmissibilityError as e:
        raise AdmissibilityError(f"perturbation endpoint not admissible: {e}") from None
    if not np.any(h):
        return 0.0
    paths = simulate_paths(scenario, OpenLoopControl(th), noise)
    adj = backward_adjoint(paths, scenario, basis)
    dt = noise.grid.dt
    w = left_point_weights(M, dt)
    ctrl = (2 * scenario.lam * th * h) @ w
    adj_part = ((adj.p[:, 1:] @ scenario.u) * h[:, :-1]).sum(axis=1) * dt
    return float(np.mean(ctrl + adj_part))


@dataclass(frozen=True)
class GradCheckRow:
    epsilon: float
    fd_derivative: float
    gateaux: float
    rel_err: float


def gradient_check(
    theta, direction, scenario: Scenario, noise: NoiseBundle, epsilons=(1e-1, 1e-2, 1e-3), basis: str = "affine"
) -> list[GradCheckRow]:
    """Forward differences ``(J(theta + eps h) - J(theta)) / eps`` on common noise
    against :func:`gateaux_derivative`."""
    P, M = noise.n_paths, noise.grid.steps
    th = _as_open_loop(theta, P, M)
    h = _as_open_loop(direction, P, M)
    g = gateaux_derivative(th, h, scenario, noise, basis)
    base = evaluate_strong_cost(OpenLoopControl(th), scenario, noise).value
    rows = []
    for eps in epsilons:
        check_admissible(th + eps * h, scenario.theta_lo, scenario.theta_hi)
        fd = (evaluate_strong_cost(OpenLoopControl(th + eps * h), scenario, noise).value - base) / eps
        rows.append(GradCheckRow(float(eps), fd, g, abs(fd - g) / abs(g) if g else abs(fd)))
    return rows


# -- optimiser --------------------------------------------------------------------

@dataclass(frozen=True)
class SolverOptions:
    damping: float = 0.5
    tol: float = 1e-4
    max_iter: int = 50
    basis: str = "affine"
    min_paths: int = 1

    def __post_init__(self):
        if not (0 < self.damping <= 1):
            raise ConfigurationError(f"damping={self.damping} must lie in (0, 1]")
        if not self.tol > 0:
            raise ConfigurationError("tol must be > 0")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be >= 1")
        if self.basis not in BASES:
            raise ConfigurationError(f"unknown regression basis {self.basis!r}")


@dataclass
class OptimizerTrace:
    costs: list[float] = field(default_factory=list)
    ses: list[float] = field(default_factory=list)
    step_norms: list[float] = field(default_factory=list)
    damping: list[float] = field(default_factory=list)
    stop_reason: str = ""

    @property
    def iterations(self) -> int:
        return len(self.costs)

    def rows(self):
        return [
            {"iter": i, "cost": c, "se": s, "step_norm": n, "damping": d}
            for i, (c, s, n, d) in enumerate(zip(self.costs, self.ses, self.step_norms, self.damping))
        ]


@dataclass(frozen=True)
class OptimizeResult:
    control: OpenLoopControl
    cost: CostEstimate
    trace: OptimizerTrace
    paths: PathBundle
    adjoint: AdjointSolution

    def fixed_point_gap(self, scenario: Scenario) -> float:
        """``max |theta - Pi(-(1/2 lam) u'p)|`` over paths and knots."""
        return float(np.max(np.abs(self.paths.theta - projected_control(self.adjoint, scenario))))


def h2_norm(delta: np.ndarray, dt: float) -> float:
    w = trapezoid_weights(delta.shape[1] - 1, dt)
    return float(np.sqrt(np.mean((delta**2) @ w)))


def optimize_picard(
    scenario: Scenario,
    noise: NoiseBundle,
    opts: SolverOptions = SolverOptions(),
    theta0: np.ndarray | None = None,
) -> OptimizeResult:
    """Damped projected fixed point ``theta <- (1-d) theta + d Pi(-(1/2 lam) u'p[theta])``."""
    P, M = noise.n_paths, noise.grid.steps
    if P < opts.min_paths:
        raise ConfigurationError(f"{P} paths below the configured minimum {opts.min_paths}")
    lo, hi = scenario.theta_lo, scenario.theta_hi
    dt = noise.grid.dt
    if theta0 is None:
        theta = np.full((P, M + 1), project_theta(0.0, lo, hi))
    else:
        theta = project_theta(_as_open_loop(theta0, P, M), lo, hi)
    x0, y = scenario.initial_data(P, seed=noise.seed, path_start=noise.path_start)
    trace = OptimizerTrace()
    best = None
    for it in range(opts.max_iter):
        paths = simulate_paths(scenario, OpenLoopControl(theta), noise, x0=x0, y=y)
        est = _estimate(pathwise_cost(paths))
        adj = backward_adjoint(paths, scenario, opts.basis)
        target = projected_control(adj, scenario)
        new = np.clip((1 - opts.damping) * theta + opts.damping * target, lo, hi)
        step = h2_norm(new - theta, dt)
        trace.costs.append(est.value)
        trace.ses.append(est.se)
        trace.step_norms.append(step)
        trace.damping.append(opts.damping)
        if best is None or est.value < best[1].value:
            best = (theta, est, paths, adj)
        if step < opts.tol:
            theta = new
            trace.stop_reason = "converged"
            break
        theta = new
    else:
        trace.stop_reason = "max_iter"
        theta, est, paths, adj = best
        return OptimizeResult(OpenLoopControl(theta, "picard"), est, trace, paths, adj)
    paths = simulate_paths(scenario, OpenLoopControl(theta), noise, x0=x0, y=y)
    est = _estimate(pathwise_cost(paths))
    adj = backward_adjoint(paths, scenario, opts.basis)
    return OptimizeResult(OpenLoopControl(theta, "picard"), est, trace, paths, adj)


# -- randomised (weak) controls -----------------------------------------------------

@dataclass(frozen=True)
class RandomizedPolicy:
    """Finite mixture of controls, component chosen per path by an auxiliary uniform.

    Alternatively ``sampler(path_index, aux_uniform, x0, y, noise) -> theta`` may
    emit control paths of shape ``(paths, steps+1)`` directly; it must be open loop.
    """

    components: tuple[ControlSpec, ...] = ()
    weights: tuple[float, ...] = ()
    sampler: Callable | None = None
    aux_stream: int = 0

    def __post_init__(self):
        if self.sampler is None:
            if not self.components:
                raise ConfigurationError("policy needs components or a sampler")
            w = self.weights or tuple(1.0 / len(self.components) for _ in self.components)
            if len(w) != len(self.components) or any(x < 0 for x in w) or not math.isclose(sum(w), 1.0):
                raise ConfigurationError("mixture weights must be nonnegative and sum to 1")
            object.__setattr__(self, "weights", tuple(w))
            object.__setattr__(self, "components", tuple(self.components))

    @classmethod
    def point_mass(cls, control: ControlSpec) -> "RandomizedPolicy":
        return cls(components=(control,), weights=(1.0,))

    def aux_uniforms(self, noise: NoiseBundle) -> np.ndarray:
        return rng.uniforms(noise.seed, rng.stream_code(rng.AUX, self.aux_stream), noise.path_start, noise.n_paths, 1)[:, 0]

    def choose(self, noise: NoiseBundle) -> np.ndarray:
        if len(self.components) == 1:
            return np.zeros(noise.n_paths, dtype=int)
        edges = np.cumsum(self.weights)[:-1]
        return np.searchsorted(edges, self.aux_uniforms(noise), side="right")


def _policy_paths(policy: RandomizedPolicy, scenario: Scenario, noise: NoiseBundle):
    if policy.sampler is not None:
        x0, y = scenario.initial_data(noise.n_paths, seed=noise.seed, path_start=noise.path_start)
        idx = noise.path_start + np.arange(noise.n_paths)
        theta = np.asarray(policy.sampler(idx, policy.aux_uniforms(noise), x0, y, noise), dtype=float)
        check_admissible(theta, scenario.theta_lo, scenario.theta_hi)
        return [simulate_paths(scenario, OpenLoopControl(theta), noise, x0=x0, y=y)], np.zeros(noise.n_paths, dtype=int)
    which = policy.choose(noise)
    return [simulate_paths(scenario, c, noise) for c in policy.components], which


def evaluate_weak_cost(policy: RandomizedPolicy, scenario: Scenario, noise: NoiseBundle) -> CostEstimate:
    bundles, which = _policy_paths(policy, scenario, noise)
    costs = np.stack([pathwise_cost(b) for b in bundles])
    return _estimate(costs[which, np.arange(noise.n_paths)])


def emit_controls(policy: RandomizedPolicy, scenario: Scenario, noise: NoiseBundle) -> np.ndarray:
    bundles, which = _policy_paths(policy, scenario, noise)
    thetas = np.stack([b.theta for b in bundles])
    return thetas[which, np.arange(noise.n_paths)]


def random_admissible_controls(
    scenario: Scenario, count: int, seed: int, knots: int = 5, steps: int | None = None
) -> list[OpenLoopControl]:
    """Deterministic piecewise-linear control paths through uniform draws in Theta."""
    M = steps or scenario.steps
    t = np.linspace(0.0, 1.0, M + 1)
    tk = np.linspace(0.0, 1.0, knots)
    lo, hi = scenario.theta_lo, scenario.theta_hi
    out = []
    for i in range(count):
        v = lo + (hi - lo) * rng.uniforms(seed, rng.stream_code(rng.CONTROL, i), 0, 1, knots)[0]
        out.append(OpenLoopControl(np.clip(np.interp(t, tk, v), lo, hi), name=f"random{i}"))
    return out


def control_from_sequence(values: Sequence[float]) -> OpenLoopControl:
    return OpenLoopControl(np.asarray(values, dtype=float))
