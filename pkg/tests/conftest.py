import numpy as np
import pytest

from sasaki.models import make_model

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def models():
    return {
        "heisenberg1": make_model("heisenberg", 1),
        "heisenberg2": make_model("heisenberg", 2),
        "cc+1": make_model("constant_curvature", 1, 1.0),
        "cc-1": make_model("constant_curvature", 1, -1.0),
    }


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
