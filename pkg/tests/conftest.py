from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from mlope.core import Environment, LoggerDataset, MultiLoggerDataset, TabularPolicy
from mlope.io import load_environment, load_policies

TOY_DIR = Path(str(resources.files("mlope") / "data" / "toy"))


@pytest.fixture(scope="session")
def toy_dir():
    return TOY_DIR


@pytest.fixture(scope="session")
def toy_env():
    return load_environment(TOY_DIR / "env.json")


@pytest.fixture(scope="session")
def toy_policies():
    return {p.name: p for p in load_policies(TOY_DIR / "policies.json")}


@pytest.fixture(scope="session")
def pi1(toy_policies):
    return toy_policies["pi1"]


@pytest.fixture(scope="session")
def pi2(toy_policies):
    return toy_policies["pi2"]


@pytest.fixture(scope="session")
def pibar(toy_policies):
    return toy_policies["pibar"]


@pytest.fixture
def two_record_log(pi1, pi2):
    """One record per logger: (x1, y1, 10, 0.2) from pi1 and (x1, y2, 1, 0.1) from pi2."""
    return MultiLoggerDataset(
        (
            LoggerDataset("pi1", [0], [0], [10.0], [0.2], pi1),
            LoggerDataset("pi2", [0], [1], [1.0], [0.1], pi2),
        )
    )


def random_instance(rng, max_x=5, max_y=5, max_m=4, max_n=5):
    """Random environment with strictly positive policies and utilities in [0, 10]."""
    nx, ny = rng.integers(1, max_x + 1), rng.integers(1, max_y + 1)
    prior = rng.dirichlet(np.ones(nx))
    env = Environment(
        [f"x{i}" for i in range(nx)], [f"y{j}" for j in range(ny)], prior, rng.uniform(0, 10, (nx, ny))
    )

    def policy(name):
        return TabularPolicy(name, rng.dirichlet(np.ones(ny), size=nx) * 0.98 + 0.02 / ny)

    m = int(rng.integers(1, max_m + 1))
    loggers = [policy(f"L{i}") for i in range(m)]
    sizes = [int(k) for k in rng.integers(1, max_n + 1, size=m)]
    return env, policy("target"), loggers, sizes
