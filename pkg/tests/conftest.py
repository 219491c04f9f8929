import numpy as np
import pytest

from lumentrack.airway import load_and_normalize


def raw_tree():
    """Hand-built airway in the standard frame (trachea along +y, right is +x)."""
    return {
        "root": "trachea",
        "designations": {"trachea": "trachea", "lmb": "LMB", "rmb": "RMB"},
        "branches": [
            {"label": "trachea", "start": [0.0, -100.0, 0.0], "end": [0.0, 0.0, 0.0]},
            {"label": "LMB", "start": [0.0, 0.0, 0.0], "end": [-30.0, 40.0, 0.0], "parent": "trachea"},
            {"label": "RMB", "start": [0.0, 0.0, 0.0], "end": [25.0, 35.0, 0.0], "parent": "trachea"},
            {"label": "RB1", "start": [25.0, 35.0, 0.0], "end": [35.0, 60.0, 15.0], "parent": "RMB"},
            {"label": "RB2", "start": [25.0, 35.0, 0.0], "end": [40.0, 55.0, -15.0], "parent": "RMB"},
            {"label": "LB1", "start": [-30.0, 40.0, 0.0], "end": [-45.0, 60.0, 10.0], "parent": "LMB"},
        ],
    }


@pytest.fixture
def graph():
    return load_and_normalize(raw_tree())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
