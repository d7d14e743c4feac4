import numpy as np
import pytest
from hypothesis import settings

from perturbmc import catalog

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# Lines recorded by the acceptance module, echoed once at the end of the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def ex3():
    return catalog.three_state(0.1)
