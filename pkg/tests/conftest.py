import sys

import pytest
from hypothesis import settings

from coop_dmpc.coordinator import run
from coop_dmpc.reproduction import sync4_path
from coop_dmpc.scenario import parse_scenario

from factories import feasible_random_runs

settings.register_profile("default", deadline=None)
settings.load_profile("default")

RANDOM_SEED = 20240611


@pytest.fixture(scope="session")
def sync4():
    return parse_scenario(sync4_path())


@pytest.fixture(scope="session")
def sync4_trace(sync4):
    return run(sync4, 30)


@pytest.fixture(scope="session")
def random_runs():
    return feasible_random_runs(RANDOM_SEED, 10)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    module.print_summary(terminalreporter.write_line)
