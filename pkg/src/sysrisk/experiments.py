"""Convergence studies: optimal values across N, fixed-policy costs, strong/weak
equivalence and propagation of chaos."""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import rng
from .control import (
    CostEstimate,
    RandomizedPolicy,
    SolverOptions,
    evaluate_weak_cost,
    optimize_picard,
    pathwise_cost,
    random_admissible_controls,
)
from .errors import ConfigurationError, SysRiskError
from .lq import riccati_feedback, riccati_value, solve_hjb_1d, solve_riccati
from .meanfield import LimitLaw, draw_inputs, evaluate_mf_cost, simulate_particles, subset_inputs
from .measures import flow_distance
from .model import Scenario, project_theta
from .sde import FeedbackControl, OpenLoopControl, make_time_grid, sample_noise, scenario_grid, simulate_paths


@dataclass(frozen=True)
class StudyRow:
    N: int
    value: float
    se: float
    aux: dict = field(default_factory=dict)


@dataclass
class StudyReport:
    name: str
    rows: list[StudyRow]
    seeds: tuple[int, ...]
    fingerprint: str
    wall_clock: float = 0.0

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: r.N)

    def row(self, N: int) -> StudyRow:
        for r in self.rows:
            if r.N == N and not r.aux.get("reference"):
                return r
        raise KeyError(N)

    @property
    def reference(self) -> StudyRow | None:
        return next((r for r in self.rows if r.aux.get("reference")), None)


@dataclass(frozen=True)
class StudySettings:
    """Everything about the N-bank problem that is not drawn from the law."""

    sigma0: float = 0.0
    alpha: float = 1.0
    beta: float = 1.0
    lam: float = 1.0
    theta_lo: float = -1.0
    theta_hi: float = 1.0
    horizon: float = 1.0
    steps: int = 50
    paths: int = 1000
    seed: int = 0

    def scenario(self, law: LimitLaw, N: int) -> Scenario:
        return law.to_scenario(
            N,
            self.seed,
            sigma0=self.sigma0,
            alpha=self.alpha,
            beta=self.beta,
            lam=self.lam,
            theta_lo=self.theta_lo,
            theta_hi=self.theta_hi,
            horizon=self.horizon,
            steps=self.steps,
            mc_paths=self.paths,
        )

    @property
    def grid(self):
        return make_time_grid(self.horizon, self.steps)


def fingerprint(*parts) -> str:
    """Short hash of a JSON rendering of dataclasses / plain values."""

    def norm(x):
        if hasattr(x, "__dataclass_fields__"):
            return {k: norm(v) for k, v in asdict(x).items()}
        if isinstance(x, dict):
            return {str(k): norm(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [norm(v) for v in x]
        if isinstance(x, float):
            return repr(x)
        return x if isinstance(x, (int, str, bool, type(None))) else repr(x)

    blob = json.dumps([norm(p) for p in parts], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _cells(fn, items, workers):
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def _failed(N, exc) -> StudyRow:
    return StudyRow(N, math.nan, math.nan, {"error": f"{type(exc).__name__}: {exc}"})


def _diff_se(a: np.ndarray, b: np.ndarray) -> float:
    d = a - b
    return float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else 0.0


# -- optimal values -------------------------------------------------------------

def gamma_study(
    law: LimitLaw,
    Ns: Sequence[int],
    opts: SolverOptions = SolverOptions(),
    settings: StudySettings = StudySettings(),
    M_ref: int | None = None,
    *,
    workers: int = 1,
) -> StudyReport:
    """Optimal value ``V_N`` per ``N`` on nested draws, plus a proxy row at ``M_ref``.

    Rows carry ``gap`` = ``|V_N - V_next|`` to the next configured ``N`` with the
    SE of the coupled per-path difference.
    """
    Ns = [int(n) for n in Ns]
    if any(b <= a for a, b in zip(Ns, Ns[1:])) or not Ns or Ns[0] < 1:
        raise ConfigurationError(f"Ns must be positive and strictly increasing, got {Ns}")
    t0 = time.perf_counter()
    grid = settings.grid
    todo = Ns + ([int(M_ref)] if M_ref else [])

    def cell(N):
        try:
            scen = settings.scenario(law, N)
            noise = sample_noise(grid, N, settings.paths, settings.seed)
            res = optimize_picard(scen, noise, opts)
            aux = {"iterations": res.trace.iterations, "stop": res.trace.stop_reason}
            return StudyRow(N, res.cost.value, res.cost.se, aux), res.cost.per_path
        except (SysRiskError, ArithmeticError) as exc:
            return _failed(N, exc), None

    out = _cells(cell, todo, workers)
    rows = []
    for i, (row, pp) in enumerate(out):
        aux = dict(row.aux)
        if i < len(Ns) - 1:
            nxt, npp = out[i + 1]
            aux["gap"] = abs(row.value - nxt.value)
            aux["gap_se"] = _diff_se(pp, npp) if pp is not None and npp is not None else math.nan
        if M_ref and i == len(out) - 1:
            aux["reference"] = 1
            half = next((o for o in out[:-1] if o[0].N * 2 == M_ref), None)
            if half is not None:
                aux["proxy_sensitivity"] = abs(row.value - half[0].value)
        rows.append(StudyRow(row.N, row.value, row.se, aux))
    return StudyReport(
        "gamma", rows, (settings.seed,), fingerprint("gamma", law, Ns, M_ref, opts, settings), time.perf_counter() - t0
    )


def gaps_non_increasing(report: StudyReport, k: float = 2.0) -> bool:
    """Successive gaps shrink up to ``k`` combined standard errors."""
    gaps = [(r.aux["gap"], r.aux["gap_se"]) for r in report.rows if "gap" in r.aux]
    return all(g2 <= g1 + k * math.hypot(s1, s2) for (g1, s1), (g2, s2) in zip(gaps, gaps[1:]))


# -- fixed-policy costs --------------------------------------------------------------

def _policy_paths_on_grid(policy: RandomizedPolicy, steps: int) -> list[np.ndarray]:
    paths = []
    for c in policy.components:
        if not isinstance(c, OpenLoopControl) or np.asarray(c.values).ndim > 1:
            raise ConfigurationError("mean-field replay needs deterministic open-loop components")
        v = np.asarray(c.values, dtype=float)
        paths.append(np.full(steps + 1, float(v)) if v.ndim == 0 else v)
    return paths


def mean_field_cost(
    policy: RandomizedPolicy, law: LimitLaw, settings: StudySettings, M: int, reps: int
) -> CostEstimate:
    """``J^R`` by the particle system; rep ``r`` picks a mixture component with its own uniform."""
    grid = settings.grid
    comps = _policy_paths_on_grid(policy, grid.steps)
    if len(comps) == 1:
        which = np.zeros(reps, dtype=int)
    else:
        u = rng.uniforms(settings.seed, rng.stream_code(rng.AUX, policy.aux_stream, 1), 0, reps, 1)[:, 0]
        which = np.searchsorted(np.cumsum(policy.weights)[:-1], u, side="right")
    theta = np.stack([comps[w] for w in which])
    inp = draw_inputs(law, M, grid, settings.seed, reps)
    ens = simulate_particles(inp, theta, grid, settings.sigma0, theta_bounds=(settings.theta_lo, settings.theta_hi))
    mf = evaluate_mf_cost(ens, settings.alpha, settings.beta, settings.lam)
    return CostEstimate(mf.value, mf.se, reps, mf.per_rep)


def objective_convergence(
    policy: RandomizedPolicy,
    law: LimitLaw,
    Ns: Sequence[int],
    settings: StudySettings = StudySettings(),
    M: int = 4000,
    reps: int = 50,
    *,
    workers: int = 1,
) -> StudyReport:
    """``J_N^R`` per ``N`` and the particle estimate of ``J^R`` (row flagged ``reference``)."""
    t0 = time.perf_counter()
    grid = settings.grid
    ref = mean_field_cost(policy, law, settings, M, reps)

    def cell(N):
        try:
            scen = settings.scenario(law, N)
            est = evaluate_weak_cost(policy, scen, sample_noise(grid, N, settings.paths, settings.seed))
            gap = abs(est.value - ref.value)
            return StudyRow(N, est.value, est.se, {"gap": gap, "gap_se": math.hypot(est.se, ref.se)})
        except (SysRiskError, ArithmeticError) as exc:
            return _failed(N, exc)

    rows = _cells(cell, [int(n) for n in Ns], workers)
    rows.append(StudyRow(M, ref.value, ref.se, {"reference": 1, "reps": reps}))
    return StudyReport(
        "objective", rows, (settings.seed,), fingerprint("objective", law, Ns, M, reps, settings), time.perf_counter() - t0
    )


# -- strong / weak equivalence ---------------------------------------------------------

@dataclass
class EquivalenceReport:
    values: dict[str, float]
    ses: dict[str, float]
    oracle: str | None
    passed: bool
    notes: list[str] = field(default_factory=list)


def _oracle_value(scenario: Scenario, x0: np.ndarray, y: np.ndarray, noise):
    """Riccati value when the unconstrained feedback never leaves Theta on the
    sample, otherwise the 1-D HJB for deterministic scalar data, otherwise None."""
    sol = solve_riccati(scenario)
    wide = FeedbackControl(lambda t, x, yy: riccati_feedback(sol, t, x, yy, (-np.inf, np.inf)))
    free = scenario.with_(theta_lo=-1e300, theta_hi=1e300)
    th = simulate_paths(free, wide, noise, x0=x0, y=y).theta
    if th.min() >= scenario.theta_lo and th.max() <= scenario.theta_hi:
        v = riccati_value(sol, x0, y)
        v = np.broadcast_to(np.asarray(v, dtype=float), (x0.shape[0],))
        return "riccati", float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    if scenario.n_banks == 1 and scenario.is_deterministic():
        surf = solve_hjb_1d(scenario, mode="implicit")
        return "hjb1d", float(surf.value_at(float(x0[0, 0]))), 0.0
    return None


def equivalence_check(
    scenario: Scenario,
    opts: SolverOptions = SolverOptions(),
    *,
    noise=None,
    allowance: float = 0.01,
    mixture_seed: int = 1,
) -> EquivalenceReport:
    """Oracle value vs optimiser vs weak cost of the optimum's point mass, plus a
    mixture-policy optimality check.  Gaps must stay below ``3`` combined SEs
    plus ``allowance * max(1, |value|)`` for time discretisation."""
    if noise is None:
        noise = sample_noise(scenario_grid(scenario), scenario.n_banks, scenario.mc_paths, scenario.seed)
    x0, y = scenario.initial_data(noise.n_paths, seed=noise.seed, path_start=noise.path_start)
    res = optimize_picard(scenario, noise, opts)
    point = RandomizedPolicy.point_mass(res.control)
    weak = evaluate_weak_cost(point, scenario, noise)
    values = {"picard": res.cost.value, "weak": weak.value}
    ses = {"picard": res.cost.se, "weak": weak.se}
    notes = []
    if any(b.sigma == 0 for b in scenario.banks):
        notes.append("degenerate idiosyncratic noise: oracle comparison outside the nondegenerate setting")
    try:
        oracle = _oracle_value(scenario, x0, y, noise)
    except SysRiskError as exc:
        oracle = None
        notes.append(f"oracle failed: {exc}")
    if oracle is None:
        notes.append("oracle unavailable: constraint active with several banks")
    else:
        values["oracle"], ses["oracle"] = oracle[1], oracle[2]

    rnd = random_admissible_controls(scenario, 1, mixture_seed)[0]
    mix = RandomizedPolicy((res.control, rnd), (0.5, 0.5))
    mixed = evaluate_weak_cost(mix, scenario, noise)
    values["mixture"], ses["mixture"] = mixed.value, mixed.se

    ok = True
    keys = [k for k in ("oracle", "picard", "weak") if k in values]
    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            tol = 3 * math.hypot(ses[a], ses[b]) + allowance * max(1.0, abs(values[a]))
            if abs(values[a] - values[b]) > tol:
                ok = False
                notes.append(f"{a} vs {b}: gap {abs(values[a] - values[b]):.3g} > {tol:.3g}")
    if mixed.value < res.cost.value - 3 * res.cost.se - 1e-12:
        ok = False
        notes.append("mixture policy beat the optimum")
    return EquivalenceReport(values, ses, oracle[0] if oracle else None, ok, notes)


# -- propagation of chaos ---------------------------------------------------------------

def chaos_diagnostic(
    law: LimitLaw,
    theta_spec,
    Ns: Sequence[int],
    reps: int,
    M_ref: int,
    settings: StudySettings = StudySettings(),
) -> StudyReport:
    """Mean ``d_S(mu^N, mu^ref)`` over repetitions, with the ``N``-particle system
    built from the first ``N`` of the reference draws."""
    t0 = time.perf_counter()
    grid = settings.grid
    inp = draw_inputs(law, M_ref, grid, settings.seed, reps)
    bounds = (settings.theta_lo, settings.theta_hi)
    ref = simulate_particles(inp, theta_spec, grid, settings.sigma0, theta_bounds=bounds)
    rows = []
    for N in Ns:
        N = int(N)
        if N > M_ref:
            rows.append(_failed(N, ConfigurationError(f"N={N} exceeds M_ref={M_ref}")))
            continue
        ens = simulate_particles(subset_inputs(inp, N), theta_spec, grid, settings.sigma0, theta_bounds=bounds)
        d = [flow_distance(ens.flow(r), ref.flow(r)) for r in range(reps)]
        vals = np.array([float(x) for x in d])
        se = float(vals.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
        rows.append(StudyRow(N, float(vals.mean()), se, {"exact": int(all(x.exact for x in d))}))
    return StudyReport(
        "chaos", rows, (settings.seed,), fingerprint("chaos", law, Ns, reps, M_ref, settings), time.perf_counter() - t0
    )


# -- replaying a large-system optimum -----------------------------------------------------

def aggregate_feedback(theta: np.ndarray, X: np.ndarray, Y: np.ndarray, dt: float, lo: float, hi: float) -> FeedbackControl:
    """Fit ``theta_k ~ c_k + d_k (mean X_k) + e_k (mean Y)`` across paths and replay it
    as a feedback that is valid at any bank count."""
    steps = theta.shape[1] - 1
    xbar = X.mean(axis=2)
    ybar = Y.mean(axis=1)
    coefs = np.empty((steps + 1, 3))
    for k in range(steps + 1):
        F = np.column_stack([np.ones_like(ybar), xbar[:, k], ybar])
        coefs[k] = np.linalg.lstsq(F, theta[:, k], rcond=None)[0]

    def fn(t, x, y):
        c = coefs[min(int(round(t / dt)), steps)]
        return project_theta(c[0] + c[1] * x.mean(axis=1) + c[2] * y.mean(axis=1), lo, hi)

    return FeedbackControl(fn, "aggregate")


def replay_check(
    law: LimitLaw,
    Ns: Sequence[int],
    M_ref: int,
    opts: SolverOptions = SolverOptions(),
    settings: StudySettings = StudySettings(),
) -> StudyReport:
    """Cost of the ``M_ref`` optimum, replayed through :func:`aggregate_feedback`,
    minus ``V_N`` at each ``N``."""
    t0 = time.perf_counter()
    grid = settings.grid
    big = optimize_picard(settings.scenario(law, M_ref), sample_noise(grid, M_ref, settings.paths, settings.seed), opts)
    ctrl = aggregate_feedback(big.paths.theta, big.paths.X, big.paths.Y, grid.dt, settings.theta_lo, settings.theta_hi)
    rows = []
    for N in Ns:
        N = int(N)
        scen = settings.scenario(law, N)
        noise = sample_noise(grid, N, settings.paths, settings.seed)
        opt = optimize_picard(scen, noise, opts)
        replay = pathwise_cost(simulate_paths(scen, ctrl, noise))
        diff = replay - opt.cost.per_path
        se = float(diff.std(ddof=1) / math.sqrt(diff.size))
        rows.append(StudyRow(N, float(diff.mean()), se, {"V_N": opt.cost.value, "J_replay": float(replay.mean())}))
    return StudyReport(
        "replay", rows, (settings.seed,), fingerprint("replay", law, Ns, M_ref, opts, settings), time.perf_counter() - t0
    )
