import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sysrisk.model import BankType, InitialDatum, Scenario

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def record():
    """``record(k, title, ok, detail)`` stores the outcome of acceptance item ``k``."""

    def _record(k, title, ok, detail=""):
        _ACCEPTANCE[k] = (title, bool(ok), detail)
        return bool(ok)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance")
    for k in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"[{k:2d}] {'PASS' if ok else 'FAIL'}  {title}  {detail}")


def scalar_scenario(**kw) -> Scenario:
    """One bank, a=0, u=1, no noise, x0=1, y=0, beta=0: optimum 0.5 at theta=-0.5."""
    base = dict(
        banks=(BankType(0.0, 1.0, 0.0),),
        init=(InitialDatum(1.0, 0.0),),
        beta=0.0,
        theta_lo=-5.0,
        theta_hi=5.0,
        allow_degenerate=True,
        mc_paths=1,
    )
    base.update(kw)
    return Scenario(**base)


def hetero_scenario(**kw) -> Scenario:
    base = dict(
        banks=(BankType(0.5, 1.0, 0.3), BankType(1.0, 0.8, 0.4), BankType(1.5, 0.6, 0.5), BankType(2.0, 1.2, 0.2)),
        init=(InitialDatum(1.0, 0.0), InitialDatum(-0.5, 0.2), InitialDatum(0.3, -0.1), InitialDatum(0.0, 0.0)),
        sigma0=0.3,
        theta_lo=-5.0,
        theta_hi=5.0,
    )
    base.update(kw)
    return Scenario(**base)


@pytest.fixture
def rng0():
    return np.random.default_rng(12345)
