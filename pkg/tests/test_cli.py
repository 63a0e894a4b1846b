import json
import os
import subprocess
import sys

import pytest

from sysrisk import cli
from sysrisk.errors import NumericalError
from sysrisk.io import read_csv

SCALAR = """
[banks]
a = 0.0
u = 1.0
sigma = 0.0
allow_degenerate = true
[init]
x0 = 1.0
y = 0.0
[cost]
beta = 0.0
[theta]
lo = -5.0
hi = 5.0
[time]
steps = 20
[mc]
paths = 50
"""

SMALL_LAW = """
[banks]
law = uniform
a_range = 0.5, 1.5
u_range = 0.5, 1.0
sigma_range = 0.1, 0.4
count = 4
sequence = halton
[init]
law = normal
x0_std = 1.0
[noise]
sigma0 = 0.2
[time]
steps = 10
[mc]
paths = 100
reps = 3
[solver]
max_iter = 5
[study]
Ns = 2, 4
M_ref = 8
particles = 20
"""


def _cfg(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_optimize_writes_outputs(tmp_path):
    out = tmp_path / "o"
    assert cli.run_command(["optimize", "--config", _cfg(tmp_path, SCALAR), "--out", str(out)]) == 0
    assert {"trace.csv", "control.csv", "summary.csv", "manifest.json"} <= set(os.listdir(out))
    _, rows = read_csv(out / "summary.csv")
    summary = dict(rows)
    assert float(summary["cost"]) == pytest.approx(0.5, rel=1e-3)
    doc = json.load(open(out / "manifest.json"))
    assert doc["command"] == "optimize" and doc["seed"] == 0
    assert "manifest.json" in doc["outputs"]


@pytest.mark.parametrize("command", ["simulate", "riccati", "hjb1d", "grad-check"])
def test_scalar_commands(tmp_path, command):
    assert cli.run_command([command, "--config", _cfg(tmp_path, SCALAR), "--out", str(tmp_path / "o")]) == 0


@pytest.mark.parametrize("command", ["meanfield", "fpk-check", "gamma-study", "metrics"])
def test_law_commands(tmp_path, command):
    assert cli.run_command([command, "--config", _cfg(tmp_path, SMALL_LAW), "--out", str(tmp_path / "o")]) == 0


def test_same_seed_same_bytes(tmp_path):
    cfg = _cfg(tmp_path, SMALL_LAW)
    for d, threads in (("a", "1"), ("b", "3")):
        assert cli.run_command(["gamma-study", "--config", cfg, "--out", str(tmp_path / d), "--threads", threads]) == 0
    assert (tmp_path / "a" / "study.csv").read_bytes() == (tmp_path / "b" / "study.csv").read_bytes()


def test_seed_override_changes_output(tmp_path):
    cfg = _cfg(tmp_path, SMALL_LAW)
    cli.run_command(["simulate", "--config", cfg, "--out", str(tmp_path / "a")])
    cli.run_command(["simulate", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "5"])
    assert (tmp_path / "a" / "simulate.csv").read_bytes() != (tmp_path / "b" / "simulate.csv").read_bytes()


def test_configuration_error_exit_2(tmp_path, capsys):
    bad = _cfg(tmp_path, SCALAR + "[noise]\nsigma0 = -1\n")
    assert cli.run_command(["simulate", "--config", bad, "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "configuration" and "sigma0" in err["message"]


def test_law_command_without_law_exit_2(tmp_path):
    assert cli.run_command(["meanfield", "--config", _cfg(tmp_path, SCALAR), "--out", str(tmp_path / "o")]) == 2


def test_numerical_error_exit_1(tmp_path, monkeypatch, capsys):
    def boom(cfg, out, threads):
        raise NumericalError("Riccati solution blew up")

    monkeypatch.setitem(cli.HANDLERS, "riccati", boom)
    assert cli.run_command(["riccati", "--config", _cfg(tmp_path, SCALAR), "--out", str(tmp_path / "o")]) == 1
    assert json.loads(capsys.readouterr().err.strip())["error"] == "numerical"


def test_module_entry_point(tmp_path):
    r = subprocess.run(
        [sys.executable, "-m", "sysrisk", "riccati", "--config", _cfg(tmp_path, SCALAR), "--out", str(tmp_path / "o")],
        capture_output=True,
        text=True,
    )
    assert r.returncode == 0, r.stderr
    r = subprocess.run([sys.executable, "-m", "sysrisk", "nosuch"], capture_output=True, text=True)
    assert r.returncode == 2
