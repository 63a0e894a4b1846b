"""Command-line entry point: ``python -m sysrisk <command> --config FILE --out DIR``."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from .control import gradient_check, optimize_picard, pathwise_cost
from .errors import ConfigurationError, SysRiskError
from .experiments import StudySettings, chaos_diagnostic, gamma_study
from .io import RunConfig, parse_config, write_csv, write_manifest, write_report_csv, write_svg
from .lq import riccati_value, solve_hjb_1d, solve_riccati
from .meanfield import default_phi_family, evaluate_mf_cost, sfpk_residual, simulate_mkv
from .model import project_theta
from .sde import constant_control, moment_report, sample_noise, scenario_grid, simulate_paths

COMMANDS = ("simulate", "optimize", "riccati", "hjb1d", "meanfield", "fpk-check", "grad-check", "gamma-study", "metrics")


def _noise(cfg: RunConfig, threads: int):
    s = cfg.scenario
    return sample_noise(scenario_grid(s), s.n_banks, s.mc_paths, s.seed, workers=threads)


def _settings(cfg: RunConfig) -> StudySettings:
    s = cfg.scenario
    return StudySettings(s.sigma0, s.alpha, s.beta, s.lam, s.theta_lo, s.theta_hi, s.horizon, s.steps, s.mc_paths, s.seed)


def _need_law(cfg: RunConfig, cmd: str):
    if cfg.law is None:
        raise ConfigurationError(f"{cmd} needs a sampled bank law ([banks] law = uniform)")
    return cfg.law


def _nondegenerate(s) -> int:
    """1 when every idiosyncratic volatility is positive; oracle values with zeros are outside that setting."""
    return int(all(b.sigma > 0 for b in s.banks))


def _summary(path, items):
    return write_csv(path, ("quantity", "value"), items)


def cmd_simulate(cfg, out, threads):
    s = cfg.scenario
    paths = simulate_paths(s, constant_control(project_theta(0.0, s.theta_lo, s.theta_hi)), _noise(cfg, threads))
    t = scenario_grid(s).knots
    xbar = paths.X.mean(axis=2)
    dist = ((paths.X - paths.Y[:, None, :]) ** 2).mean(axis=2)
    rows = [(t[k], xbar[:, k].mean(), paths.X[:, k].var(), paths.theta[:, k].mean(), dist[:, k].mean())
            for k in range(len(t))]
    f1 = write_csv(os.path.join(out, "simulate.csv"), ("t", "mean_X", "var_X", "mean_theta", "mean_L"), rows)
    mom = moment_report(paths, s.rho_exp)
    f2 = write_csv(os.path.join(out, "moments.csv"), ("bank", "sup_moment"), enumerate(mom.sup_moment))
    cost = pathwise_cost(paths)
    f3 = _summary(os.path.join(out, "summary.csv"),
                  [("cost", cost.mean()), ("se", cost.std(ddof=1) / math.sqrt(cost.size) if cost.size > 1 else 0.0)])
    return [f1, f2, f3]


def cmd_optimize(cfg, out, threads):
    s = cfg.scenario
    res = optimize_picard(s, _noise(cfg, threads), cfg.solver)
    rows = [(r["iter"], r["cost"], r["se"], r["step_norm"], r["damping"]) for r in res.trace.rows()]
    f1 = write_csv(os.path.join(out, "trace.csv"), ("iter", "cost", "se", "step_norm", "damping"), rows)
    th = res.paths.theta
    t = scenario_grid(s).knots
    f2 = write_csv(os.path.join(out, "control.csv"), ("t", "mean_theta", "std_theta"),
                   [(t[k], th[:, k].mean(), th[:, k].std()) for k in range(len(t))])
    f3 = _summary(os.path.join(out, "summary.csv"), [
        ("cost", res.cost.value), ("se", res.cost.se), ("iterations", res.trace.iterations),
        ("stop_reason", res.trace.stop_reason), ("fixed_point_gap", res.fixed_point_gap(s)),
    ])
    return [f1, f2, f3]


def cmd_riccati(cfg, out, threads):
    s = cfg.scenario
    sol = solve_riccati(s)
    x0, y = s.initial_data(s.mc_paths)
    v = np.atleast_1d(riccati_value(sol, x0, y))
    t = sol.grid.knots
    f1 = write_csv(os.path.join(out, "riccati.csv"), ("t", "trace_P", "c"),
                   [(t[k], np.trace(sol.P[k]), sol.c[k]) for k in range(len(t))])
    f2 = _summary(os.path.join(out, "summary.csv"), [
        ("value", v.mean()), ("se", v.std(ddof=1) / math.sqrt(v.size) if v.size > 1 else 0.0),
        ("nondegenerate", _nondegenerate(s)),
    ])
    return [f1, f2]


def cmd_hjb1d(cfg, out, threads):
    s = cfg.scenario
    if s.n_banks != 1 or not isinstance(s.init, tuple):
        raise ConfigurationError("hjb1d needs one bank with explicit x0 and y")
    surf = solve_hjb_1d(s, mode="implicit")
    f1 = write_csv(os.path.join(out, "hjb.csv"), ("x", "V0", "theta0"),
                   zip(surf.x, surf.V[0], surf.theta_star[0]))
    f2 = _summary(os.path.join(out, "summary.csv"),
                  [("value", surf.value_at(s.init[0].x0)), ("nondegenerate", _nondegenerate(s))])
    return [f1, f2]


def _ensemble(cfg, mode="direct"):
    s = cfg.scenario
    law = _need_law(cfg, "meanfield")
    theta = project_theta(0.0, s.theta_lo, s.theta_hi)
    return simulate_mkv(law, theta, cfg.study.particles, scenario_grid(s), s.seed, mode,
                        sigma0=s.sigma0, reps=cfg.study.reps, theta_bounds=(s.theta_lo, s.theta_hi))


def cmd_meanfield(cfg, out, threads):
    s = cfg.scenario
    ens = _ensemble(cfg)
    t = ens.grid.knots
    mean = ens.mean_path()
    var = ens.X.var(axis=1)
    L = ens.distance_sq()
    rows = [(r, t[k], mean[r, k], var[r, k], L[r, k]) for r in range(ens.reps) for k in range(len(t))]
    f1 = write_csv(os.path.join(out, "ensemble.csv"), ("rep", "t", "mean_X", "var_X", "mean_L"), rows)
    cost = evaluate_mf_cost(ens, s.alpha, s.beta, s.lam)
    f2 = _summary(os.path.join(out, "summary.csv"), [("mf_cost", cost.value), ("se", cost.se)])
    return [f1, f2]


def cmd_fpk_check(cfg, out, threads):
    s = cfg.scenario
    ens = _ensemble(cfg)
    t = ens.grid.knots
    rows, terminal, sup = [], [], []
    names = None
    for r in range(ens.reps):
        flow = ens.flow(r)
        rep = sfpk_residual(flow, ens.theta[r], ens.dW0[r], default_phi_family(float(flow.X[:, -1].std())), s.sigma0)
        names = rep.names
        for i, name in enumerate(rep.names):
            rows.extend((name, t[k], rep.residual[i, k], r) for k in range(len(t)))
        terminal.append(rep.residual[:, -1])
        sup.append(rep.sup_rms())
    f1 = write_csv(os.path.join(out, "residuals.csv"), ("phi_id", "t", "residual", "rep"), rows)
    terminal = np.array(terminal)
    n = terminal.shape[0]
    se = terminal.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(terminal.shape[1])
    f2 = write_csv(os.path.join(out, "terminal.csv"), ("phi_id", "mean_terminal", "se"),
                   zip(names, terminal.mean(axis=0), se))
    sup = np.array(sup)
    f3 = _summary(os.path.join(out, "summary.csv"), [
        ("particles", ens.M), ("reps", n), ("sup_rms_mean", sup.mean()),
        ("sup_rms_se", sup.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0),
    ])
    return [f1, f2, f3]


def cmd_grad_check(cfg, out, threads):
    s = cfg.scenario
    grid = scenario_grid(s)
    centre = 0.5 * (s.theta_lo + s.theta_hi)
    # eps * h stays inside Theta for eps <= 0.1
    h = min(1.0, 5.0 * (s.theta_hi - s.theta_lo)) * (1.0 - grid.knots / (2.0 * s.horizon))
    rows = gradient_check(np.full(grid.steps + 1, centre), h, s, _noise(cfg, threads), basis=cfg.solver.basis)
    f1 = write_csv(os.path.join(out, "gradcheck.csv"), ("epsilon", "fd_derivative", "gateaux", "rel_err"),
                   [(r.epsilon, r.fd_derivative, r.gateaux, r.rel_err) for r in rows])
    return [f1]


def cmd_gamma_study(cfg, out, threads):
    law = _need_law(cfg, "gamma-study")
    rep = gamma_study(law, cfg.study.Ns, cfg.solver, _settings(cfg), cfg.study.M_ref, workers=threads)
    return [write_report_csv(rep, os.path.join(out, "study.csv")), write_svg(rep, os.path.join(out, "study.svg"))]


def cmd_metrics(cfg, out, threads):
    s = cfg.scenario
    law = _need_law(cfg, "metrics")
    Ns = [n for n in cfg.study.Ns if n <= cfg.study.M_ref]
    theta = project_theta(0.0, s.theta_lo, s.theta_hi)
    rep = chaos_diagnostic(law, theta, Ns, cfg.study.reps, cfg.study.M_ref, _settings(cfg))
    return [write_report_csv(rep, os.path.join(out, "metrics.csv"))]


HANDLERS = {
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "riccati": cmd_riccati,
    "hjb1d": cmd_hjb1d,
    "meanfield": cmd_meanfield,
    "fpk-check": cmd_fpk_check,
    "grad-check": cmd_grad_check,
    "gamma-study": cmd_gamma_study,
    "metrics": cmd_metrics,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sysrisk", description="Interbank systemic-risk control toolkit")
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="scenario file (INI)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, help="override [mc] seed")
        p.add_argument("--paths", type=int, help="override [mc] paths")
        p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    return ap


def _error_line(kind: str, exc: BaseException) -> None:
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)


def run_command(argv=None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        if args.threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        cfg = parse_config(args.config).with_overrides(seed=args.seed, paths=args.paths)
        os.makedirs(args.out, exist_ok=True)
        outputs = HANDLERS[args.command](cfg, args.out, args.threads)
        manifest = os.path.join(args.out, "manifest.json")
        write_manifest(manifest, args.command, cfg, cfg.scenario.seed, outputs + [manifest], time.perf_counter() - t0,
                       {"threads": args.threads})
    except ConfigurationError as exc:
        _error_line("configuration", exc)
        return 2
    except (SysRiskError, ArithmeticError, np.linalg.LinAlgError) as exc:
        _error_line("numerical", exc)
        return 1
    except OSError as exc:
        _error_line("io", exc)
        return 1
    return 0


def main() -> None:
    sys.exit(run_command())
