import numpy as np
import pytest

from streampile import Ar1Spec, ScheduleConfig, build_schedule

GOLDEN = __file__.rsplit("/", 1)[0] + "/golden"


@pytest.fixture(scope="session")
def schedule():
    return build_schedule(1000)


@pytest.fixture
def default_cfg():
    return ScheduleConfig(K=16, G=4, N=1, T=1000)


@pytest.fixture
def ar1_spec():
    return Ar1Spec(d=8, rho=0.95)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
