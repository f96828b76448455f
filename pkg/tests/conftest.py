import numpy as np
import pytest

from vfd import selfsim


@pytest.fixture(scope="session")
def ss_solution():
    """Self-similar solution with mu = 1, T = 1 at m = -0.5."""
    return selfsim.SelfSimilarSolution(selfsim.calibrated_profile(-0.5, 1.0), 1.0)


def bump(x, w=1.0, M=2.0):
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) < w, (M / w) * np.cos(np.pi * x / (2 * w)) ** 2, 0.0)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
