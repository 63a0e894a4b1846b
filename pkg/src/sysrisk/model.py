"""Problem data, drift/volatility structure, costs and the policy projection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from . import rng
from .errors import ConfigurationError, DimensionError


@dataclass(frozen=True)
class BankType:
    """Type triple of one bank: lending rate ``a``, supply intensity ``u``,
    idiosyncratic volatility ``sigma``."""

    a: float
    u: float
    sigma: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.u, self.sigma], dtype=float)

    def norm(self) -> float:
        return math.sqrt(self.a**2 + self.u**2 + self.sigma**2)

    def is_strict(self) -> bool:
        return self.a > 0 and self.u > 0 and self.sigma > 0


@dataclass(frozen=True)
class InitialDatum:
    x0: float
    y: float


@dataclass(frozen=True)
class InitLaw:
    """Independent normal initial reserves and targets, i.i.d. across banks."""

    x0_mean: float = 0.0
    x0_std: float = 1.0
    y_mean: float = 0.0
    y_std: float = 0.0
    name: str = "normal"

    def __post_init__(self):
        if self.name != "normal":
            raise ConfigurationError(f"unknown init law {self.name!r}")
        if self.x0_std < 0 or self.y_std < 0:
            raise ConfigurationError("init law standard deviations must be >= 0")

    def sample(self, n_banks: int, n_paths: int, seed: int, path_start: int = 0):
        """Draw ``(x0, y)`` of shape ``(n_paths, n_banks)``.

        Bank ``i`` reads its own streams, so the first ``N`` columns do not
        depend on how many banks are requested.
        """
        x0 = np.empty((n_paths, n_banks))
        y = np.empty((n_paths, n_banks))
        for i in range(n_banks):
            zx = rng.normals(seed, rng.stream_code(rng.INIT, 2 * i), path_start, n_paths, 1)[:, 0]
            zy = rng.normals(seed, rng.stream_code(rng.INIT, 2 * i + 1), path_start, n_paths, 1)[:, 0]
            x0[:, i] = self.x0_mean + self.x0_std * zx
            y[:, i] = self.y_mean + self.y_std * zy
        return x0, y


InitSpec = Union[tuple[InitialDatum, ...], InitLaw]


@dataclass(frozen=True)
class Scenario:
    banks: tuple[BankType, ...]
    init: InitSpec
    sigma0: float = 0.0
    alpha: float = 1.0
    beta: float = 1.0
    lam: float = 1.0
    theta_lo: float = -1.0
    theta_hi: float = 1.0
    horizon: float = 1.0
    steps: int = 50
    mc_paths: int = 1000
    seed: int = 0
    rho_exp: float = 1.0
    bound_K: float = 10.0
    allow_degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "banks", tuple(self.banks))
        if not isinstance(self.init, InitLaw):
            object.__setattr__(self, "init", tuple(self.init))
        validate_scenario(self)

    @property
    def n_banks(self) -> int:
        return len(self.banks)

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def a(self) -> np.ndarray:
        return np.array([b.a for b in self.banks])

    @property
    def u(self) -> np.ndarray:
        return np.array([b.u for b in self.banks])

    @property
    def sigma(self) -> np.ndarray:
        return np.array([b.sigma for b in self.banks])

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)

    def initial_data(self, n_paths: int, seed: int | None = None, path_start: int = 0):
        """Initial reserves and targets as ``(n_paths, N)`` arrays."""
        seed = self.seed if seed is None else seed
        if isinstance(self.init, InitLaw):
            return self.init.sample(self.n_banks, n_paths, seed, path_start)
        x0 = np.array([d.x0 for d in self.init], dtype=float)
        y = np.array([d.y for d in self.init], dtype=float)
        return np.broadcast_to(x0, (n_paths, x0.size)).copy(), np.broadcast_to(y, (n_paths, y.size)).copy()

    def is_deterministic(self) -> bool:
        return (
            self.sigma0 == 0
            and all(b.sigma == 0 for b in self.banks)
            and not isinstance(self.init, InitLaw)
        )


def validate_scenario(s: Scenario) -> None:
    if len(s.banks) < 1:
        raise ConfigurationError("scenario needs at least one bank")
    for i, b in enumerate(s.banks):
        vals = {"a": b.a, "u": b.u, "sigma": b.sigma}
        for name, v in vals.items():
            if not math.isfinite(v):
                raise ConfigurationError(f"A_s1: bank {i} {name} is not finite")
            if v < 0 or (v == 0 and not s.allow_degenerate):
                raise ConfigurationError(
                    f"A_s1: bank {i} {name}={v} must be > 0"
                    + ("" if v < 0 else " (set allow_degenerate to permit zeros)")
                )
        if b.norm() > s.bound_K:
            raise ConfigurationError(f"A_s1: bank {i} type norm {b.norm():.6g} exceeds K={s.bound_K}")
    if not isinstance(s.init, InitLaw):
        if len(s.init) != len(s.banks):
            raise ConfigurationError(f"init has {len(s.init)} entries for {len(s.banks)} banks")
        for i, d in enumerate(s.init):
            if not (math.isfinite(d.x0) and math.isfinite(d.y)):
                raise ConfigurationError(f"init entry {i} is not finite")
    if not (s.sigma0 >= 0 and math.isfinite(s.sigma0)):
        raise ConfigurationError(f"A_s1: sigma0={s.sigma0} must be >= 0")
    for name in ("alpha", "beta", "lam"):
        v = getattr(s, name)
        if not (v > 0 or (v == 0 and s.allow_degenerate)) or not math.isfinite(v):
            raise ConfigurationError(f"cost weight {name}={v} must be > 0")
    if not (math.isfinite(s.theta_lo) and math.isfinite(s.theta_hi)):
        raise ConfigurationError("A_Theta: policy interval must be bounded")
    if s.theta_lo > s.theta_hi:
        raise ConfigurationError(f"A_Theta: theta_lo={s.theta_lo} > theta_hi={s.theta_hi}, interval is empty")
    if not (s.horizon > 0):
        raise ConfigurationError(f"horizon T={s.horizon} must be > 0")
    if s.steps < 1:
        raise ConfigurationError(f"steps={s.steps} must be >= 1")
    if s.mc_paths < 1:
        raise ConfigurationError(f"mc_paths={s.mc_paths} must be >= 1")
    if not (s.rho_exp > 0):
        raise ConfigurationError(f"A_s1: moment exponent rho={s.rho_exp} must be > 0")


@dataclass(frozen=True)
class DriftVol:
    A: np.ndarray
    u_vec: np.ndarray
    Sigma: np.ndarray = field(repr=False)


def build_drift_matrix(banks: Sequence[BankType]) -> np.ndarray:
    n = len(banks)
    if n == 0:
        raise ConfigurationError("empty bank list")
    a = np.array([b.a for b in banks], dtype=float)
    A = np.repeat((a / n)[:, None], n, axis=1)
    # diagonal written as the negated off-diagonal row sum: rows sum to 0 exactly
    np.fill_diagonal(A, -(a / n) * (n - 1))
    return A


def build_vol_matrix(banks: Sequence[BankType], sigma0: float) -> np.ndarray:
    if sigma0 < 0:
        raise ConfigurationError(f"sigma0={sigma0} must be >= 0")
    n = len(banks)
    if n == 0:
        raise ConfigurationError("empty bank list")
    S = np.zeros((n, n + 1))
    S[:, 0] = sigma0
    S[np.arange(n), np.arange(1, n + 1)] = [b.sigma for b in banks]
    return S


def drift_vol(s: Scenario) -> DriftVol:
    return DriftVol(build_drift_matrix(s.banks), s.u.copy(), build_vol_matrix(s.banks, s.sigma0))


def apply_drift(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``A @ x`` along the last axis, using ``(A x)_i = a_i (mean(x) - x_i)``."""
    return a * (x.mean(axis=-1, keepdims=True) - x)


def apply_drift_transpose(a: np.ndarray, p: np.ndarray) -> np.ndarray:
    """``A.T @ p`` along the last axis: ``mean(a * p) - a_j p_j``."""
    ap = a * p
    return ap.mean(axis=-1, keepdims=True) - ap


def _check_pair(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1:] != y.shape[-1:]:
        raise DimensionError(f"state has {x.shape[-1:]} entries, target has {y.shape[-1:]}")
    return x, y


def terminal_cost(x, y, alpha: float):
    """``(alpha / N) * sum_i |x_i - y_i|^2``; broadcasts over leading axes."""
    x, y = _check_pair(x, y)
    return alpha * np.mean((x - y) ** 2, axis=-1)


def running_cost(x, y, theta, beta: float, lam: float):
    x, y = _check_pair(x, y)
    return beta * np.mean((x - y) ** 2, axis=-1) + lam * np.asarray(theta, dtype=float) ** 2


def project_theta(theta_raw, theta_lo: float, theta_hi: float):
    if theta_lo > theta_hi:
        raise ConfigurationError(f"A_Theta: theta_lo={theta_lo} > theta_hi={theta_hi}")
    out = np.clip(theta_raw, theta_lo, theta_hi)
    return float(out) if np.ndim(out) == 0 else out
