"""Scenario files, CSV/JSON/SVG output.

Config files are INI-style::

    [banks]
    a = 1.0, 0.5
    u = 1.0, 1.0
    sigma = 0.2, 0.3

    [init]
    x0 = 1.0, -1.0
    y = 0.0, 0.0

or, with a sampler, ``[banks] law = uniform`` plus ``a_range``, ``u_range``,
``sigma_range`` and ``count``, and ``[init] law = normal`` plus ``x0_mean``,
``x0_std``, ``y_mean``, ``y_std``.  Unknown sections and keys are rejected.
"""

from __future__ import annotations

import configparser
import csv
import json
import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .control import SolverOptions
from .errors import ConfigurationError
from .meanfield import LimitLaw
from .model import BankType, InitialDatum, InitLaw, Scenario

VERSION = "0.1.0"

# section -> key -> default (None: no default)
_SCHEMA: dict[str, dict[str, str | None]] = {
    "banks": {
        "a": None, "u": None, "sigma": None,
        "law": None, "a_range": None, "u_range": None, "sigma_range": None, "count": None,
        "sequence": "iid", "bound_K": "10.0", "allow_degenerate": "false",
    },
    "init": {
        "x0": None, "y": None,
        "law": None, "x0_mean": "0.0", "x0_std": "1.0", "y_mean": "0.0", "y_std": "0.0",
    },
    "noise": {"sigma0": "0.0"},
    "cost": {"alpha": "1.0", "beta": "1.0", "lambda": "1.0"},
    "theta": {"lo": "-1.0", "hi": "1.0"},
    "time": {"T": "1.0", "steps": "50"},
    "mc": {"paths": "1000", "reps": "30", "seed": "0", "rho": "1.0"},
    "solver": {"damping": "0.5", "tol": "0.0001", "max_iter": "50", "basis": "affine"},
    "study": {"Ns": "8, 16, 32, 64", "M_ref": "256", "particles": "1000"},
}
_SAMPLER_KEYS = {
    "banks": ("a_range", "u_range", "sigma_range", "count"),
    "init": ("x0_mean", "x0_std", "y_mean", "y_std"),
}


@dataclass(frozen=True)
class StudyOptions:
    Ns: tuple[int, ...] = (8, 16, 32, 64)
    M_ref: int = 256
    particles: int = 1000
    reps: int = 30


@dataclass(frozen=True)
class RunConfig:
    """Parsed config: scenario, optional sampler law, solver and study options.

    ``sections`` holds every resolved key (defaults filled in) as strings and is
    what gets echoed into manifests and serialised back to INI."""

    scenario: Scenario
    law: LimitLaw | None
    solver: SolverOptions
    study: StudyOptions
    sections: dict[str, dict[str, str]]
    defaults_applied: tuple[str, ...] = ()

    def with_overrides(self, seed: int | None = None, paths: int | None = None) -> "RunConfig":
        sections = {k: dict(v) for k, v in self.sections.items()}
        if seed is not None:
            sections["mc"]["seed"] = str(int(seed))
        if paths is not None:
            sections["mc"]["paths"] = str(int(paths))
        return _build(sections, self.defaults_applied)


def _floats(text: str, where: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]
    except ValueError:
        raise ConfigurationError(f"{where}: expected a comma-separated list of numbers, got {text!r}") from None


def _float(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigurationError(f"{where}: expected a number, got {text!r}") from None


def _int(text: str, where: str) -> int:
    try:
        v = float(text)
    except ValueError:
        raise ConfigurationError(f"{where}: expected an integer, got {text!r}") from None
    if v != int(v):
        raise ConfigurationError(f"{where}: expected an integer, got {text!r}")
    return int(v)


def _bool(text: str, where: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"{where}: expected a boolean, got {text!r}")


def _pair(text: str, where: str) -> tuple[float, float]:
    v = _floats(text, where)
    if len(v) == 1:
        v = v * 2
    if len(v) != 2:
        raise ConfigurationError(f"{where}: expected 'lo, hi'")
    return (v[0], v[1])


def _read_sections(text: str, origin: str) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str  # keys are case-sensitive (T, Ns, M_ref)
    try:
        cp.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigurationError(f"{origin}: {exc}") from None
    out = {}
    for sec in cp.sections():
        if sec not in _SCHEMA:
            raise ConfigurationError(f"{origin}: unknown section [{sec}]")
        for key in cp[sec]:
            if key not in _SCHEMA[sec]:
                raise ConfigurationError(f"{origin}: unknown key {sec}.{key}")
        out[sec] = dict(cp[sec])
    return out


def _resolve(raw: dict[str, dict[str, str]]):
    """Fill defaults; returns resolved sections and the list of defaulted keys."""
    if "banks" not in raw:
        raise ConfigurationError("missing required section [banks]")
    if "init" not in raw:
        raise ConfigurationError("missing required section [init]")
    sampled_banks = "law" in raw["banks"]
    sampled_init = "law" in raw["init"]
    resolved, defaulted = {}, []
    for sec, keys in _SCHEMA.items():
        given = raw.get(sec, {})
        out = {}
        for key, default in keys.items():
            if key in given:
                out[key] = given[key].strip()
                continue
            if sec == "banks" and key in ("a", "u", "sigma") and not sampled_banks:
                raise ConfigurationError(f"missing required key banks.{key}")
            if sec == "banks" and key in ("a_range", "u_range", "sigma_range", "count") and sampled_banks:
                raise ConfigurationError(f"missing required key banks.{key} for a sampled bank law")
            if sec == "init" and key in ("x0", "y") and not sampled_init:
                raise ConfigurationError(f"missing required key init.{key}")
            if default is None:
                continue
            if sec in _SAMPLER_KEYS and key in _SAMPLER_KEYS[sec] and not (
                sampled_banks if sec == "banks" else sampled_init
            ):
                continue
            out[key] = default
            defaulted.append(f"{sec}.{key}")
        resolved[sec] = out
    if sampled_banks and not sampled_init:
        raise ConfigurationError("a sampled bank law needs [init] law = normal")
    return resolved, tuple(defaulted)


def _build(sec: dict[str, dict[str, str]], defaulted: tuple[str, ...]) -> RunConfig:
    b, ini = sec["banks"], sec["init"]
    mc, sv, st = sec["mc"], sec["solver"], sec["study"]
    seed = _int(mc["seed"], "mc.seed")
    common = dict(
        sigma0=_float(sec["noise"]["sigma0"], "noise.sigma0"),
        alpha=_float(sec["cost"]["alpha"], "cost.alpha"),
        beta=_float(sec["cost"]["beta"], "cost.beta"),
        lam=_float(sec["cost"]["lambda"], "cost.lambda"),
        theta_lo=_float(sec["theta"]["lo"], "theta.lo"),
        theta_hi=_float(sec["theta"]["hi"], "theta.hi"),
        horizon=_float(sec["time"]["T"], "time.T"),
        steps=_int(sec["time"]["steps"], "time.steps"),
        mc_paths=_int(mc["paths"], "mc.paths"),
        seed=seed,
        rho_exp=_float(mc["rho"], "mc.rho"),
        bound_K=_float(b["bound_K"], "banks.bound_K"),
        allow_degenerate=_bool(b["allow_degenerate"], "banks.allow_degenerate"),
    )
    law = None
    if "law" in ini and ini["law"] != "normal":
        raise ConfigurationError(f"init.law: unknown law {ini['law']!r} (supported: normal)")
    if "law" in b:
        if b["law"] != "uniform":
            raise ConfigurationError(f"banks.law: unknown law {b['law']!r} (supported: uniform)")
        law = LimitLaw(
            a_range=_pair(b["a_range"], "banks.a_range"),
            u_range=_pair(b["u_range"], "banks.u_range"),
            sigma_range=_pair(b["sigma_range"], "banks.sigma_range"),
            x0_mean=_float(ini["x0_mean"], "init.x0_mean"),
            x0_std=_float(ini["x0_std"], "init.x0_std"),
            y_mean=_float(ini["y_mean"], "init.y_mean"),
            y_std=_float(ini["y_std"], "init.y_std"),
            bound_K=common["bound_K"],
            type_sequence=b["sequence"],
        )
        count = _int(b["count"], "banks.count")
        if count < 1:
            raise ConfigurationError("banks.count must be >= 1")
        banks = law.banks(count, seed)
    else:
        a, u, s = (_floats(b[k], f"banks.{k}") for k in ("a", "u", "sigma"))
        if not (len(a) == len(u) == len(s)):
            raise ConfigurationError(f"banks: a, u, sigma have lengths {len(a)}, {len(u)}, {len(s)}")
        banks = tuple(BankType(*t) for t in zip(a, u, s))
    if "law" in ini:
        init = InitLaw(
            _float(ini["x0_mean"], "init.x0_mean"),
            _float(ini["x0_std"], "init.x0_std"),
            _float(ini["y_mean"], "init.y_mean"),
            _float(ini["y_std"], "init.y_std"),
        )
    else:
        x0, y = _floats(ini["x0"], "init.x0"), _floats(ini["y"], "init.y")
        if len(x0) != len(y):
            raise ConfigurationError(f"init: x0 and y have lengths {len(x0)} and {len(y)}")
        init = tuple(InitialDatum(p, q) for p, q in zip(x0, y))
    scenario = Scenario(banks=banks, init=init, **common)
    solver = SolverOptions(
        damping=_float(sv["damping"], "solver.damping"),
        tol=_float(sv["tol"], "solver.tol"),
        max_iter=_int(sv["max_iter"], "solver.max_iter"),
        basis=sv["basis"],
    )
    Ns = tuple(_int(t, "study.Ns") for t in st["Ns"].split(",") if t.strip())
    study = StudyOptions(Ns, _int(st["M_ref"], "study.M_ref"), _int(st["particles"], "study.particles"),
                         _int(mc["reps"], "mc.reps"))
    return RunConfig(scenario, law, solver, study, sec, defaulted)


def parse_config_text(text: str, origin: str = "<string>") -> RunConfig:
    raw = _read_sections(text, origin)
    sections, defaulted = _resolve(raw)
    return _build(sections, defaulted)


def parse_config(path: str | os.PathLike) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))


def parse_scenario(path: str | os.PathLike) -> Scenario:
    return parse_config(path).scenario


def _canon(text: str) -> str:
    """Normalise a stored value so that serialising twice is stable."""
    parts = [t.strip() for t in text.split(",")]
    out = []
    for p in parts:
        try:
            out.append(repr(float(p)) if any(c in p for c in ".eE") or "inf" in p.lower() else p)
        except ValueError:
            out.append(p)
    return ", ".join(out)


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for sec in _SCHEMA:
        if sec not in cfg.sections or not cfg.sections[sec]:
            continue
        lines.append(f"[{sec}]")
        for key, val in cfg.sections[sec].items():
            lines.append(f"{key} = {_canon(val)}")
        lines.append("")
    return "\n".join(lines)


# -- CSV ------------------------------------------------------------------------------

def fmt(v) -> str:
    """17 significant digits for floats, plain text otherwise."""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, np.integer):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([fmt(v) for v in row])
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from None
    return str(path)


def read_csv(path: str | os.PathLike) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


REPORT_HEADER = ("study", "N", "value", "se", "aux", "seed", "fingerprint")


def _aux_text(aux: dict) -> str:
    return ";".join(f"{k}={fmt(aux[k])}" for k in sorted(aux))


def write_report_csv(report, path: str | os.PathLike) -> str:
    seed = ",".join(str(s) for s in report.seeds)
    rows = [(report.name, r.N, float(r.value), float(r.se), _aux_text(r.aux), seed, report.fingerprint)
            for r in report.rows]
    return write_csv(path, REPORT_HEADER, rows)


# -- manifest ---------------------------------------------------------------------------

def write_manifest(
    path: str | os.PathLike,
    command: str,
    cfg: RunConfig | None,
    seed: int | None,
    outputs: Sequence[str],
    wall_clock: float,
    extra: dict | None = None,
) -> str:
    doc = {
        "command": command,
        "config": cfg.sections if cfg else None,
        "defaults_applied": list(cfg.defaults_applied) if cfg else [],
        "seed": seed,
        "version": VERSION,
        "outputs": [os.path.basename(o) for o in outputs],
        "wall_clock": wall_clock,
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return str(path)


# -- SVG -----------------------------------------------------------------------------------

def write_svg(report, path: str | os.PathLike, width: int = 480, height: int = 320) -> str:
    """Value against N (log2 axis) with +-2 SE bars."""
    pts = [(r.N, r.value, r.se) for r in report.rows if math.isfinite(r.value)]
    pad = 48
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{report.name}</text>',
    ]
    if pts:
        xs = [math.log2(p[0]) for p in pts]
        lo = min(p[1] - 2 * p[2] for p in pts)
        hi = max(p[1] + 2 * p[2] for p in pts)
        if hi == lo:
            hi, lo = hi + 0.5, lo - 0.5
        x0, x1 = min(xs), max(xs) if max(xs) > min(xs) else min(xs) + 1

        def sx(x):
            return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

        def sy(y):
            return height - pad - (y - lo) / (hi - lo) * (height - 2 * pad)

        parts.append(f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>')
        parts.append(f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>')
        poly = " ".join(f"{sx(x):.2f},{sy(p[1]):.2f}" for x, p in zip(xs, pts))
        parts.append(f'<polyline points="{poly}" fill="none" stroke="steelblue" stroke-width="2"/>')
        for x, (N, v, se) in zip(xs, pts):
            parts.append(
                f'<line x1="{sx(x):.2f}" y1="{sy(v - 2 * se):.2f}" x2="{sx(x):.2f}" y2="{sy(v + 2 * se):.2f}" stroke="gray"/>'
            )
            parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(v):.2f}" r="3" fill="steelblue"/>')
            parts.append(
                f'<text x="{sx(x):.2f}" y="{height - pad + 16}" text-anchor="middle" font-size="10">{N}</text>'
            )
        parts.append(f'<text x="{pad - 4}" y="{pad}" text-anchor="end" font-size="10">{hi:.4g}</text>')
        parts.append(f'<text x="{pad - 4}" y="{height - pad}" text-anchor="end" font-size="10">{lo:.4g}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
    return str(path)
