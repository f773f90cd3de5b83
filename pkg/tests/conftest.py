import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from piaid import netgen

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def default_config():
    return netgen.SystemConfig(K=5, M=3, N=2, D=1)


def make_instance(config, seed=0, esn0_db=25.0):
    inst = netgen.generate_topology(config, netgen.trial_rng(seed, 0))
    return netgen.scale_powers_to_esn0(inst, esn0_db)
