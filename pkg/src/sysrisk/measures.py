"""Empirical measures on ``E = types x targets x states`` and the metrics between them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import rng
from .errors import ConfigurationError, DimensionError

EXACT_THRESHOLD = 256
N_SLICES = 64
SLICE_SEED = 20240101


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform atoms in ``R^5``: columns ``(a, u, sigma, y, x)``."""

    atoms: np.ndarray

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        if atoms.shape[0] < 1:
            raise ConfigurationError("empirical measure needs at least one atom")
        object.__setattr__(self, "atoms", atoms)

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n)

    def x_mean(self) -> float:
        return float(self.atoms[:, -1].mean())

    def integrate(self, fn) -> float:
        """``<mu, fn>`` for ``fn`` acting on the state column."""
        return float(np.mean(fn(self.atoms[:, -1])))


def _types_array(types) -> np.ndarray:
    if len(types) and hasattr(types[0], "a"):
        return np.array([[b.a, b.u, b.sigma] for b in types], dtype=float)
    return np.atleast_2d(np.asarray(types, dtype=float)).reshape(-1, 3)


def empirical_from_state(types, targets, states) -> EmpiricalMeasure:
    T = _types_array(types)
    y = np.asarray(targets, dtype=float).ravel()
    x = np.asarray(states, dtype=float).ravel()
    if not (T.shape[0] == y.size == x.size):
        raise DimensionError(f"lengths differ: {T.shape[0]} types, {y.size} targets, {x.size} states")
    return EmpiricalMeasure(np.column_stack([T, y, x]))


@dataclass(frozen=True)
class EmpiricalMeasureFlow:
    """Atoms with fixed ``(a, u, sigma, y)`` and states ``X`` of shape ``(n, steps+1)``."""

    static: np.ndarray  # (n, 4)
    X: np.ndarray
    times: np.ndarray

    @classmethod
    def from_paths(cls, types, targets, X, times) -> "EmpiricalMeasureFlow":
        T = _types_array(types)
        y = np.asarray(targets, dtype=float).ravel()
        X = np.asarray(X, dtype=float)
        if not (T.shape[0] == y.size == X.shape[0]):
            raise DimensionError("types, targets and state paths must have the same atom count")
        if X.shape[1] != len(times):
            raise DimensionError("state paths and time grid differ in length")
        return cls(np.column_stack([T, y]), X, np.asarray(times, dtype=float))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def at(self, k: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(np.column_stack([self.static, self.X[:, k]]))

    def pairings(self, fn) -> np.ndarray:
        """``<mu_t, fn>`` at every knot."""
        return np.mean(fn(self.X), axis=0)


class W2(float):
    """Wasserstein distance value carrying an ``exact`` flag."""

    exact: bool

    def __new__(cls, value: float, exact: bool):
        obj = super().__new__(cls, value)
        obj.exact = exact
        return obj


def _exact_w2(A: np.ndarray, B: np.ndarray) -> float:
    C = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
    r, c = linear_sum_assignment(C)
    return float(np.sqrt(C[r, c].sum() / A.shape[0]))


def _w2_1d_sq(a: np.ndarray, b: np.ndarray) -> float:
    """Squared W2 between uniform empirical laws on the line via quantile functions."""
    a = np.sort(a)
    b = np.sort(b)
    if a.size == b.size:
        return float(np.mean((a - b) ** 2))
    cuts = np.union1d(np.arange(1, a.size) / a.size, np.arange(1, b.size) / b.size)
    edges = np.concatenate([[0.0], cuts, [1.0]])
    mids = 0.5 * (edges[:-1] + edges[1:])
    qa = a[np.minimum((mids * a.size).astype(int), a.size - 1)]
    qb = b[np.minimum((mids * b.size).astype(int), b.size - 1)]
    return float(np.sum(np.diff(edges) * (qa - qb) ** 2))


def slice_directions(dim: int, n: int = N_SLICES, seed: int = SLICE_SEED) -> np.ndarray:
    z = rng.normals(seed, rng.stream_code(rng.AUX, 999), 0, n, dim)
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def sliced_w2(A: np.ndarray, B: np.ndarray, n_dirs: int = N_SLICES) -> float:
    dirs = slice_directions(A.shape[1], n_dirs)
    pa = A @ dirs.T
    pb = B @ dirs.T
    return float(np.sqrt(np.mean([_w2_1d_sq(pa[:, j], pb[:, j]) for j in range(n_dirs)])))


def wasserstein2(mu: EmpiricalMeasure, nu: EmpiricalMeasure, threshold: int = EXACT_THRESHOLD) -> W2:
    """Quadratic Wasserstein distance on ``E``.

    Exact optimal assignment for equal atom counts up to ``threshold``; sliced
    approximation (64 fixed directions) otherwise, with ``exact=False``.
    """
    if mu.atoms.shape[1] != nu.atoms.shape[1]:
        raise DimensionError("measures live on spaces of different dimension")
    if mu.n == nu.n and mu.n <= threshold:
        return W2(_exact_w2(mu.atoms, nu.atoms), True)
    return W2(sliced_w2(mu.atoms, nu.atoms), False)


def flow_distance(rho: EmpiricalMeasureFlow, rho_hat: EmpiricalMeasureFlow, threshold: int = EXACT_THRESHOLD) -> W2:
    """``sup_t W2(rho_t, rho_hat_t)`` over the shared knots."""
    if rho.times.shape != rho_hat.times.shape or not np.allclose(rho.times, rho_hat.times):
        raise DimensionError("flows are on different time grids")
    vals = per_knot_w2(rho, rho_hat, threshold)
    exact = rho.n == rho_hat.n and rho.n <= threshold
    return W2(float(vals.max()), exact)


def per_knot_w2(rho: EmpiricalMeasureFlow, rho_hat: EmpiricalMeasureFlow, threshold: int = EXACT_THRESHOLD) -> np.ndarray:
    return np.array([float(wasserstein2(rho.at(k), rho_hat.at(k), threshold)) for k in range(len(rho.times))])


# -- product metrics ------------------------------------------------------------------

@dataclass(frozen=True)
class HatSPoint:
    """Initial measure, control path and measure flow on a common grid."""

    mu0: EmpiricalMeasure
    theta: np.ndarray
    flow: EmpiricalMeasureFlow


@dataclass(frozen=True)
class CanonicalPoint:
    """Truncated canonical-space point: initial data ``gamma`` ``(n, 2)``, common
    Brownian path ``(steps+1,)``, idiosyncratic paths ``(n, steps+1)``, control ``(steps+1,)``."""

    gamma: np.ndarray
    common: np.ndarray
    paths: np.ndarray
    control: np.ndarray
    times: np.ndarray


@dataclass(frozen=True)
class CompositeMetrics:
    d_hatS: float | None
    d_omega: float | None
    d1: float | None = None
    d2: float | None = None
    d3: float | None = None
    d4: float | None = None
    tail_bound: float = 0.0
    exact: bool = True


def l2_time_norm(f: np.ndarray, times: np.ndarray) -> float:
    return float(np.sqrt(np.trapezoid(np.asarray(f, dtype=float) ** 2, times)))


def _bounded_sum(dists: np.ndarray, truncation: int):
    k = min(truncation, dists.size)
    i = np.arange(1, k + 1)
    return float(np.sum(2.0**-i * dists[:k] / (1 + dists[:k]))), 2.0**-k


def composite_metrics(point1, point2, truncation: int = 30) -> CompositeMetrics:
    """``d_hatS`` for :class:`HatSPoint` pairs, ``d_omega = d1+d2+d3+d4`` for
    :class:`CanonicalPoint` pairs.  The infinite weighted sums are cut after
    ``truncation`` terms (or the available coordinates, if fewer) and the
    geometric tail ``2**-terms`` is reported."""
    if truncation < 1:
        raise ConfigurationError("truncation must be >= 1")
    if isinstance(point1, HatSPoint) and isinstance(point2, HatSPoint):
        times = point1.flow.times
        if point2.flow.times.shape != times.shape or not np.allclose(point2.flow.times, times):
            raise DimensionError("incompatible grids")
        w0 = wasserstein2(point1.mu0, point2.mu0)
        dc = l2_time_norm(point1.theta - point2.theta, times)
        ds = flow_distance(point1.flow, point2.flow)
        return CompositeMetrics(float(w0) + dc + float(ds), None, exact=w0.exact and ds.exact)
    if isinstance(point1, CanonicalPoint) and isinstance(point2, CanonicalPoint):
        if point1.times.shape != point2.times.shape or not np.allclose(point1.times, point2.times):
            raise DimensionError("incompatible grids")
        g1, g2 = np.atleast_2d(point1.gamma), np.atleast_2d(point2.gamma)
        n = min(g1.shape[0], g2.shape[0])
        d1, tail1 = _bounded_sum(np.linalg.norm(g1[:n] - g2[:n], axis=1), truncation)
        d2 = float(np.max(np.abs(point1.common - point2.common)))
        p1, p2 = np.atleast_2d(point1.paths), np.atleast_2d(point2.paths)
        m = min(p1.shape[0], p2.shape[0])
        d3, tail3 = _bounded_sum(np.max(np.abs(p1[:m] - p2[:m]), axis=1), truncation)
        d4 = l2_time_norm(point1.control - point2.control, point1.times)
        return CompositeMetrics(None, d1 + d2 + d3 + d4, d1, d2, d3, d4, tail_bound=tail1 + tail3)
    raise ConfigurationError("points must both be HatSPoint or both CanonicalPoint")

