"""Ground-truth solvers for the parameterised HJB equation.

Two independent routes:

* the unconstrained quadratic ansatz ``V = z'P z + 2 r'z + s`` with ``z = x - y``,
  integrated backward by classical RK4;
* a finite-difference solver for one bank that honours the policy interval.

The Riccati system used here, for drift ``A x + theta u`` and cost weights
``alpha, beta, lam``::

    -P' = A'P + P A - (1/lam) P u u' P + (beta/N) I,     P(T) = (alpha/N) I
    -r' = (A' - (1/lam) P u u') r + P A y,               r(T) = 0
    -s' = tr(Sigma Sigma' P) + 2 r'A y - (1/lam) (u'r)^2, s(T) = 0

``r`` is linear in ``y`` and ``s`` is quadratic in it, so the solver stores
``r = G y`` and ``s = c + y'S2 y`` and serves every target vector at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .errors import ConfigurationError, DimensionError, NumericalError
from .model import Scenario, build_drift_matrix, build_vol_matrix, project_theta
from .sde import FeedbackControl, TimeGrid, make_time_grid


@dataclass(frozen=True)
class RiccatiSolution:
    grid: TimeGrid
    P: np.ndarray  # (steps+1, N, N)
    G: np.ndarray  # (steps+1, N, N); r(t) = G(t) y
    c: np.ndarray  # (steps+1,)
    S2: np.ndarray  # (steps+1, N, N); s(t) = c(t) + y' S2(t) y
    lam: float
    u: np.ndarray

    def r(self, k: int, y) -> np.ndarray:
        return np.asarray(y, dtype=float) @ self.G[k].T

    def s(self, k: int, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self.c[k] + np.einsum("...i,ij,...j->...", y, self.S2[k], y)

    def knot(self, t: float) -> int:
        return int(np.clip(np.rint(t / self.grid.dt), 0, self.grid.steps))


def solve_riccati(scenario: Scenario, steps: int | None = None, substeps: int | None = None) -> RiccatiSolution:
    """Backward RK4 with ``substeps`` internal steps per knot interval.

    By default the substep count keeps ``h * L <= 0.02`` for a crude Lipschitz
    bound ``L`` of the right-hand side (at least 8 per interval)."""
    if substeps is not None and substeps < 1:
        raise ConfigurationError("substeps must be >= 1")
    grid = make_time_grid(scenario.horizon, steps or scenario.steps)
    N = scenario.n_banks
    A = build_drift_matrix(scenario.banks)
    Sig = build_vol_matrix(scenario.banks, scenario.sigma0)
    SS = Sig @ Sig.T
    u = scenario.u
    lam, alpha, beta = scenario.lam, scenario.alpha, scenario.beta
    uu = np.outer(u, u) / lam
    eye = np.eye(N)

    def rhs(state):
        # time derivative in reversed time tau = T - t
        P, G, c, S2 = state
        dP = A.T @ P + P @ A - P @ uu @ P + (beta / N) * eye
        dG = (A.T - P @ uu) @ G + P @ A
        dc = np.trace(SS @ P)
        dS2 = G.T @ A + A.T @ G - G.T @ uu @ G
        return dP, dG, dc, dS2

    def axpy(state, h, d):
        return tuple(s + h * ds for s, ds in zip(state, d))

    if substeps is None:
        p_bound = (abs(alpha) + abs(beta) * grid.horizon) / max(N, 1)
        L = 2 * np.linalg.norm(A, 2) + 2 * np.linalg.norm(uu, 2) * p_bound
        substeps = max(8, math.ceil(grid.dt * L / 0.02))
    M = grid.steps
    h = grid.dt / substeps
    P_all = np.empty((M + 1, N, N))
    G_all = np.empty((M + 1, N, N))
    c_all = np.empty(M + 1)
    S_all = np.empty((M + 1, N, N))
    state = ((alpha / N) * eye, np.zeros((N, N)), 0.0, np.zeros((N, N)))
    scale = 1.0 + abs(alpha) + abs(beta) * grid.horizon
    for k in range(M, -1, -1):
        P, G, c, S2 = state
        P = 0.5 * (P + P.T)
        S2 = 0.5 * (S2 + S2.T)
        if not (np.all(np.isfinite(P)) and np.abs(P).max() < 1e12 * scale):
            raise NumericalError(f"Riccati blow-up detected at knot {k}")
        if N and np.linalg.eigvalsh(P).min() < -1e-10 * scale:
            raise NumericalError(f"Riccati matrix lost positive semidefiniteness at knot {k}")
        P_all[k], G_all[k], c_all[k], S_all[k] = P, G, c, S2
        state = (P, G, c, S2)
        if k == 0:
            break
        for _ in range(substeps):
            k1 = rhs(state)
            k2 = rhs(axpy(state, h / 2, k1))
            k3 = rhs(axpy(state, h / 2, k2))
            k4 = rhs(axpy(state, h, k3))
            state = tuple(
                s + (h / 6) * (d1 + 2 * d2 + 2 * d3 + d4) for s, d1, d2, d3, d4 in zip(state, k1, k2, k3, k4)
            )
    return RiccatiSolution(grid, P_all, G_all, c_all, S_all, lam, u.copy())


def riccati_value(sol: RiccatiSolution, x0, y):
    """``z'P(0)z + 2 r(0)'z + s(0)`` at ``z = x0 - y``; vectorised over leading axes."""
    x0 = np.asarray(x0, dtype=float)
    y = np.asarray(y, dtype=float)
    N = sol.P.shape[1]
    if x0.shape[-1] != N or y.shape[-1] != N:
        raise DimensionError(f"expected vectors of length {N}")
    z = x0 - y
    quad = np.einsum("...i,ij,...j->...", z, sol.P[0], z)
    out = quad + 2 * np.sum(sol.r(0, y) * z, axis=-1) + sol.s(0, y)
    return float(out) if np.ndim(out) == 0 else out


def riccati_feedback(sol: RiccatiSolution, t: float, x, y, theta_bounds):
    """``Pi_Theta(-(1/lam) u'(P(t)(x - y) + r(t)))`` at the nearest knot."""
    k = sol.knot(t)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    grad_half = (x - y) @ sol.P[k].T + sol.r(k, y)
    raw = -(grad_half @ sol.u) / sol.lam
    return project_theta(raw, *theta_bounds)


def riccati_feedback_control(sol: RiccatiSolution, scenario: Scenario) -> FeedbackControl:
    bounds = (scenario.theta_lo, scenario.theta_hi)
    return FeedbackControl(lambda t, x, y: riccati_feedback(sol, t, x, y, bounds), name="riccati")


# -- one-bank finite differences ----------------------------------------------

@dataclass(frozen=True)
class HjbSurface1D:
    t: np.ndarray
    x: np.ndarray
    V: np.ndarray  # (steps+1, n_space)
    theta_star: np.ndarray  # (steps+1, n_space)
    y: float
    mode: str

    def value_at(self, x: float, k: int = 0) -> float:
        """Three-point Lagrange interpolation of ``V(t_k, .)``; exact on quadratics."""
        xs = self.x
        j = int(np.clip(np.searchsorted(xs, x) - 1, 0, xs.size - 3))
        x0, x1, x2 = xs[j : j + 3]
        v0, v1, v2 = self.V[k, j : j + 3]
        l0 = (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2))
        l1 = (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2))
        l2 = (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1))
        return float(v0 * l0 + v1 * l1 + v2 * l2)


def default_radius(scenario: Scenario, x0: float, y: float) -> float:
    b = scenario.banks[0]
    spread = np.sqrt((b.sigma**2 + scenario.sigma0**2) * scenario.horizon)
    reach = abs(b.u) * max(abs(scenario.theta_lo), abs(scenario.theta_hi)) * scenario.horizon
    return abs(x0 - y) + 6 * spread + reach


def _gradient(V: np.ndarray, h: float) -> np.ndarray:
    g = np.empty_like(V)
    g[1:-1] = (V[2:] - V[:-2]) / (2 * h)
    g[0] = (-3 * V[0] + 4 * V[1] - V[2]) / (2 * h)
    g[-1] = (3 * V[-1] - 4 * V[-2] + V[-3]) / (2 * h)
    return g


def _extrapolate(V: np.ndarray) -> None:
    V[0] = 3 * V[1] - 3 * V[2] + V[3]
    V[-1] = 3 * V[-2] - 3 * V[-3] + V[-4]


def solve_hjb_1d(
    scenario: Scenario,
    n_space: int = 401,
    *,
    steps: int | None = None,
    radius: float | None = None,
    mode: str = "explicit",
    x0: float | None = None,
    y: float | None = None,
) -> HjbSurface1D:
    """Backward finite differences for the one-bank HJB with ``theta`` restricted to Theta.

    ``mode="explicit"``: monotone upwind scheme, guarded by a CFL check.
    ``mode="implicit"``: Crank-Nicolson with central differences and a
    predictor-corrector update of the pointwise minimiser.
    """
    if scenario.n_banks != 1:
        raise ConfigurationError("solve_hjb_1d handles exactly one bank")
    if mode not in ("explicit", "implicit"):
        raise ConfigurationError(f"unknown mode {mode!r}")
    if n_space < 5:
        raise ConfigurationError("need at least 5 space nodes")
    if x0 is None or y is None:
        if not isinstance(scenario.init, tuple):
            raise ConfigurationError("pass x0 and y explicitly for sampled initial data")
        x0 = scenario.init[0].x0 if x0 is None else x0
        y = scenario.init[0].y if y is None else y
    bank = scenario.banks[0]
    u = bank.u
    lam, alpha, beta = scenario.lam, scenario.alpha, scenario.beta
    lo, hi = scenario.theta_lo, scenario.theta_hi
    D = 0.5 * (bank.sigma**2 + scenario.sigma0**2)
    R = default_radius(scenario, x0, y) if radius is None else radius
    if R <= 0:
        R = 1.0
    xs = np.linspace(y - R, y + R, n_space)
    hx = xs[1] - xs[0]
    M = steps or scenario.steps
    dt = scenario.horizon / M
    ts = np.linspace(0.0, scenario.horizon, M + 1)
    dist2 = (xs - y) ** 2

    if mode == "explicit":
        bmax = abs(u) * max(abs(lo), abs(hi))
        cfl = dt * (2 * D / hx**2 + bmax / hx)
        if cfl > 1.0 + 1e-12:
            raise ConfigurationError(
                f"CFL condition violated (ratio {cfl:.3g} > 1): use more time steps or mode='implicit'"
            )

    def minimiser(V):
        return np.clip(-u * _gradient(V, hx) / (2 * lam), lo, hi)

    V = np.empty((M + 1, n_space))
    V[M] = alpha * dist2
    if mode == "explicit":
        for k in range(M - 1, -1, -1):
            Vn = V[k + 1]
            th = minimiser(Vn)[1:-1]
            b = u * th
            fwd = (Vn[2:] - Vn[1:-1]) / hx
            bwd = (Vn[1:-1] - Vn[:-2]) / hx
            vx = np.where(b > 0, fwd, bwd)
            vxx = (Vn[2:] - 2 * Vn[1:-1] + Vn[:-2]) / hx**2
            Vk = np.empty_like(Vn)
            Vk[1:-1] = Vn[1:-1] + dt * (b * vx + D * vxx + beta * dist2[1:-1] + lam * th**2)
            _extrapolate(Vk)
            V[k] = Vk
    else:
        n = n_space
        for k in range(M - 1, -1, -1):
            Vn = V[k + 1]
            th = minimiser(Vn)
            for _ in range(2):
                V[k] = _cn_step(Vn, th, u, D, beta, lam, dist2, hx, dt, n)
                th = minimiser(0.5 * (V[k] + Vn))
    theta_star = np.stack([minimiser(V[k]) for k in range(M + 1)])
    return HjbSurface1D(ts, xs, V, theta_star, float(y), mode)


def _cn_step(Vn, th, u, D, beta, lam, dist2, hx, dt, n):
    b = u * th[1:-1]
    lower = -b / (2 * hx) + D / hx**2  # coefficient on V_{m-1}
    diag = np.full(n - 2, -2 * D / hx**2)
    upper = b / (2 * hx) + D / hx**2  # coefficient on V_{m+1}
    f = beta * dist2[1:-1] + lam * th[1:-1] ** 2
    LV = lower * Vn[:-2] + diag * Vn[1:-1] + upper * Vn[2:]
    rhs = np.zeros(n)
    rhs[1:-1] = Vn[1:-1] + 0.5 * dt * LV + dt * f
    rows = np.arange(1, n - 1)
    data = np.concatenate([-0.5 * dt * lower, 1 - 0.5 * dt * diag, -0.5 * dt * upper])
    ii = np.concatenate([rows, rows, rows])
    jj = np.concatenate([rows - 1, rows, rows + 1])
    # boundary rows: quadratic extrapolation
    bi = [0, 0, 0, 0, n - 1, n - 1, n - 1, n - 1]
    bj = [0, 1, 2, 3, n - 1, n - 2, n - 3, n - 4]
    bd = [1.0, -3.0, 3.0, -1.0, 1.0, -3.0, 3.0, -1.0]
    mat = sp.csr_matrix(
        (np.concatenate([data, bd]), (np.concatenate([ii, bi]), np.concatenate([jj, bj]))), shape=(n, n)
    )
    return spsolve(mat.tocsc(), rhs)
