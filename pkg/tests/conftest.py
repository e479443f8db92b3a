import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hybridpareto.poly import MooProblem, Polynomial  # noqa: E402

from oracles import hybrid_oracle, random_instance  # noqa: E402

N_INSTANCES = 20

# criterion name -> (passed, detail), filled by the report hook below
_CRITERIA: dict[str, tuple[bool, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): test realizes one acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    detail = dict(item.user_properties).get("detail", "")
    if rep.when == "call":
        _CRITERIA[mark.args[0]] = (rep.passed, detail)
    elif rep.failed:
        _CRITERIA[mark.args[0]] = (False, f"{rep.when} error")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, (passed, detail) in _CRITERIA.items():
        line = f"{'PASS' if passed else 'FAIL'}  {name}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


def demo_problem(lam=None) -> MooProblem:
    x1, x2 = Polynomial.variables(2)
    objectives = ((x1 - 3) ** 2 + (x2 - 2) ** 2, x1 + x2, x1 + 2 * x2)
    return MooProblem(2, objectives, (-x1, -x2), lam)


@pytest.fixture(scope="session")
def demo():
    return demo_problem()


@pytest.fixture(scope="session")
def instances():
    return [random_instance(s) for s in range(N_INSTANCES)]


@pytest.fixture(scope="session")
def oracle_values(instances):
    return [hybrid_oracle(P, z) for P, z in instances]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
