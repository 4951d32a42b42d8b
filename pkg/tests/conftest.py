import numpy as np
import pytest

from dstcgcn import tensor as tt


@pytest.fixture(autouse=True)
def scoped_tape():
    """Give every test its own tape so recordings never leak across tests."""
    with tt.Tape() as tape:
        yield tape


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
