import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lqmkv import solve  # noqa: E402
from lqmkv.apps import LiquidationParams, ResourceParams, liquidation_problem, resource_problem  # noqa: E402


@pytest.fixture(scope="session")
def liq_params():
    return LiquidationParams()


@pytest.fixture(scope="session")
def liq_solution(liq_params):
    return solve(liquidation_problem(liq_params))


@pytest.fixture(scope="session")
def res_params():
    return ResourceParams()


@pytest.fixture(scope="session")
def res_solution(res_params):
    return solve(resource_problem(res_params))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
