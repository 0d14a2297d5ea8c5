import time

import pytest
from scnoise import builtin_circuit, netlist

_SESSION_START = time.monotonic()
_ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    _ACCEPTANCE_LINES.append(line)
    print(line)


def session_elapsed():
    return time.monotonic() - _SESSION_START


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
    terminalreporter.write_line(
        f"suite wall clock: {session_elapsed():.1f} s"
    )


@pytest.fixture(scope="session")
def passive_a1():
    return builtin_circuit("passive-lp-a1")


@pytest.fixture(scope="session")
def passive_a4():
    return builtin_circuit("passive-lp-a4")


@pytest.fixture(scope="session")
def integrator():
    return builtin_circuit("integrator")


@pytest.fixture(scope="session")
def active_lp():
    return builtin_circuit("active-lp")


@pytest.fixture(scope="session")
def active_lp_small_cl():
    return builtin_circuit("active-lp-small-cl")


def make_active_lp(alpha, alpha_in, alpha_l, gamma, c=5e-12, cin_zero=False):
    """Parametrized OTA-based first-order LP stage (netlist-built)."""
    cin = alpha_in * c
    lines = [
        "circuit active-param",
        "temp 300",
        "fs 100k",
        "phases p1 p2",
        "ground 0",
        "vsrc vin in 0",
        f"cap c1 n1 n2 {alpha * c:.6e}",
        f"cap c2 m1 m2 {alpha * c:.6e}",
        f"cap ci vg out {c:.6e}",
        f"cap cl out 0 {alpha_l * c:.6e}",
        "switch s1a in n1 phase=p1",
        "switch s1b n1 0 phase=p2",
        "switch s2a n2 0 phase=p1",
        "switch s2b n2 vg phase=p2",
        "switch s3a m1 0 phase=p1",
        "switch s3b m1 vg phase=p2",
        "switch s4a m2 0 phase=p1",
        "switch s4b m2 out phase=p2",
        f"ota ota1 in=vg out=out gm=20u gamma={gamma:g}",
        "readout out 0 phase=p1",
    ]
    if not cin_zero and cin > 0:
        lines.insert(8, f"cap cin vg 0 {cin:.6e}")
    return netlist.parse("\n".join(lines))


def pytest_collection_modifyitems(items):
    """Run the acceptance module last so its wall-clock check covers the rest."""
    items.sort(key=lambda item: item.fspath.basename == "test_acceptance.py")
