import numpy as np
import pytest

from ofucontrol import bench
from ofucontrol.controller import parameters_for_memory, run_controller
from ofucontrol.system import RngStream


@pytest.fixture(scope="session")
def scalar_system():
    return bench.default_scalar_system()


@pytest.fixture(scope="session")
def scalar_cost(scalar_system):
    return bench.default_cost(scalar_system)


@pytest.fixture(scope="session")
def short_run(scalar_system, scalar_cost):
    """One modest controller run shared by tests that only inspect the record."""
    cfg = parameters_for_memory(
        scalar_system, 1.0, 512, 0.1, h=2, alpha_scale=0.05, budget=250, batch=64
    )
    record = run_controller(scalar_system, scalar_cost, cfg, RngStream(11, 512))
    return record, cfg


def rng_gen(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
