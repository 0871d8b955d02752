import numpy as np
import pytest

from fpu_nsoliton.construct import SolitonParameters
from fpu_nsoliton.lattice import alpha_fpu, toda
from fpu_nsoliton.profiles import ProfileFamily, solve_profile, speed


@pytest.fixture(scope="session")
def toda_pot():
    return toda()


@pytest.fixture(scope="session")
def fpu_pot():
    return alpha_fpu()


@pytest.fixture(scope="session")
def params2():
    # two waves far apart at t = 0
    return SolitonParameters(0.15, (1.0, 2.0), (0.0, 300.0))


@pytest.fixture(scope="session")
def family2(toda_pot, params2):
    return ProfileFamily(toda_pot, params2.speeds)


@pytest.fixture(scope="session")
def profile015(toda_pot):
    return solve_profile(speed(1.0, 0.15), toda_pot)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# acceptance report: one PASS/FAIL line per criterion in the terminal summary

ACCEPTANCE = {}


def record(criterion, part, ok, detail):
    ACCEPTANCE.setdefault(criterion, []).append((part, bool(ok), detail))
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[crit]
        ok = all(p[1] for p in parts)
        tr.write_line(f"{'PASS' if ok else 'FAIL'} criterion {crit}: "
                      + "; ".join(f"{name} {'ok' if good else 'FAILED'} ({detail})"
                                  for name, good, detail in parts))
