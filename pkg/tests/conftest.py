import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def richardson_ratio(coarse: float, fine: float) -> float:
    """Error ratio between a grid and its refinement; ~4 for second order."""
    return coarse / fine


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
