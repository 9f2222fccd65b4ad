import numpy as np
import pytest
from hypothesis import settings

from sddr.data import make_gaussian_task
from sddr.scenario import build_scenario

settings.register_profile("sddr", deadline=None, max_examples=60)
settings.load_profile("sddr")


@pytest.fixture
def gaussian_small():
    return make_gaussian_task(10, 8, 6.0, 60, 30, seed=3)


@pytest.fixture
def scenario_10_5():
    return build_scenario(10, 5, 1993)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    lines = []
    for mod in list(sys.modules.values()):
        lines.extend(getattr(mod, "ACCEPTANCE_LINES", []) or [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(set(lines), key=lambda l: int(l.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
