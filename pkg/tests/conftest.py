import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from recnac.pomdp import make_feature_map, random_pomdp

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny():
    return random_pomdp(2, 2, 2, seed=0)


@pytest.fixture(scope="session")
def tiny_fm(tiny):
    return make_feature_map(tiny, "concat-one-hot")
