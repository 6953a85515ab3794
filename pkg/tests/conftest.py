import math

import numpy as np
import pytest
from hypothesis import settings

from rdslab import NoiseLaw, NoisePath, get_system
from rdslab.tangent import ChartParams

settings.register_profile("rdslab", deadline=None, max_examples=40)
settings.load_profile("rdslab")

LAMBDA_A = math.log((3 + math.sqrt(5)) / 2)


@pytest.fixture(scope="session")
def path():
    return NoisePath(11, NoiseLaw("uniform_full"))


@pytest.fixture(scope="session")
def small_noise():
    return NoisePath(5, NoiseLaw("ball", 0.05))


@pytest.fixture(scope="session")
def sys_a():
    return get_system("A")


@pytest.fixture(scope="session")
def sys_c():
    return get_system("C")


@pytest.fixture(scope="session")
def params_a():
    return ChartParams.from_lambda0(LAMBDA_A)


@pytest.fixture(scope="session")
def params_c(sys_c, path):
    from rdslab.tangent import estimate_lambda0
    return ChartParams.from_lambda0(estimate_lambda0(sys_c, path, 20000))


def unit_points(seed, n):
    return np.random.default_rng(seed).random((n, 2))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
