import numpy as np
import pytest

from linbp.radio import default_scenario, sense_window, simulate_occupancy


def window(scenario, slots, seed):
    rng = np.random.default_rng(seed)
    U = simulate_occupancy(scenario.chain, slots, rng)
    gamma, x = sense_window(scenario, U, rng)
    return gamma, x


@pytest.fixture(scope="session")
def scenario():
    return default_scenario()


@pytest.fixture(scope="session")
def default_windows(scenario):
    """Training window of 2000 slots and a disjoint 20000-slot evaluation window."""
    train = window(scenario, 2000, 11)
    evaluate = window(scenario, 20000, 12)
    return train, evaluate


# (criterion number, passed, detail) collected by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
