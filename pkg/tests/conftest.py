import csv
import pathlib

import numpy as np
import pytest

DATA = pathlib.Path(__file__).parent / "data"

#: (criterion number, passed, detail) filled in by test_acceptance.py
ACCEPTANCE_LINES = {}


def load_golden(name):
    with open(DATA / name, newline="") as fh:
        return list(csv.DictReader(fh))


def q23(p):
    """Hard-coded 2-of-3 transient block; the initial state is the last one."""
    return np.array([
        [0, 0, p],
        [p, 0, 0],
        [0, 1 - p, p],
    ], dtype=float)


def q34(p):
    """Hard-coded 3-of-4 transient block; the initial state is the last one."""
    return np.array([
        [0, 0, p, 0, 0, 0, 0],
        [0, 0, 0, 0, p, 0, 0],
        [0, 0, 0, 0, 0, 1 - p, p],
        [p, 0, 0, 0, 0, 0, 0],
        [0, 1 - p, p, 0, 0, 0, 0],
        [0, 0, 0, 1 - p, p, 0, 0],
        [0, 0, 0, 0, 0, 1 - p, p],
    ], dtype=float)


@pytest.fixture(scope="session")
def golden():
    return load_golden


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        passed, detail = ACCEPTANCE_LINES[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}")
