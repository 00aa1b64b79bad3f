import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from choquardlab.bubble import ProblemParams  # noqa: E402
from choquardlab.grid import build_radial_grid  # noqa: E402
from choquardlab.kcheck import PotentialSpec  # noqa: E402

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def P3():
    return ProblemParams(3, 1.0)


@pytest.fixture(scope="session")
def grid256():
    return build_radial_grid(256)


@pytest.fixture(scope="session")
def grid128():
    return build_radial_grid(128)


@pytest.fixture(scope="session")
def ring():
    return PotentialSpec.ring(3, 1.0, 1.0, 2.0)


@pytest.fixture(scope="session")
def two_bump():
    return PotentialSpec.two_bump(3, 1.0, 1.0, 2.0, 1.0)


@pytest.fixture(scope="session")
def kcache(tmp_path_factory):
    return tmp_path_factory.mktemp("kernels")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
