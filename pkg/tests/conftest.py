import numpy as np
import pytest

from encloop import bfv


@pytest.fixture(scope="session")
def toy_params():
    return bfv.BfvParams.toy()


@pytest.fixture(scope="session")
def toy_keys(toy_params):
    return bfv.keygen(toy_params, bytes(range(32)))


@pytest.fixture(scope="session")
def default_params():
    return bfv.BfvParams.default()


@pytest.fixture(scope="session")
def default_keys(default_params):
    return bfv.keygen(default_params, bytes(reversed(range(32))))


@pytest.fixture()
def rng():
    return np.random.default_rng(20240811)
