import numpy as np
import pytest

from enclosure_lab.identify import analyze_identifiability
from enclosure_lab.structure import decompose
from enclosure_lab import systems


@pytest.fixture(scope="session")
def sys_a():
    ch = systems.system_a()
    dec = decompose(ch)
    return ch, dec, analyze_identifiability(ch, dec)


@pytest.fixture(scope="session")
def sys_b():
    ch = systems.system_b()
    dec = decompose(ch)
    return ch, dec, analyze_identifiability(ch, dec)


@pytest.fixture(scope="session")
def sys_c():
    ch = systems.system_c()
    return ch, decompose(ch)


@pytest.fixture(scope="session")
def sys_qnd3():
    ch = systems.qnd3()
    dec = decompose(ch)
    return ch, dec, analyze_identifiability(ch, dec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[number])
