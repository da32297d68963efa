import numpy as np
import pytest

from vbd_twohost.datagen import NoiseConfig, default_initial_state, generate_dataset
from vbd_twohost.integrator import integrate
from vbd_twohost.model import ModelParams


@pytest.fixture(scope="session")
def table2():
    return ModelParams()


@pytest.fixture(scope="session")
def default_traj(table2):
    return integrate(table2, default_initial_state(table2), 0.0, 1080.0)


@pytest.fixture(scope="session")
def clean_dataset(table2):
    return generate_dataset(table2, noise=NoiseConfig(0.0, 0.0, seed=7))


@pytest.fixture(scope="session")
def noisy_dataset(table2):
    return generate_dataset(table2, noise=NoiseConfig(seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
