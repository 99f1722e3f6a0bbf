import numpy as np
import pytest

from pcassoc import CorrelationMatrix, Seed, TestContext

SIGMA_UNK3_ENTRIES = np.array(
    [[1.00, 0.16, -0.42],
     [0.16, 1.00, 0.38],
     [-0.42, 0.38, 1.00]]
)


@pytest.fixture(scope="session")
def sigma3():
    return CorrelationMatrix(SIGMA_UNK3_ENTRIES)


@pytest.fixture(scope="session")
def ctx3(sigma3):
    return TestContext(sigma3, rx_seed=Seed(71))


@pytest.fixture(scope="session")
def sigma_rho06():
    return CorrelationMatrix.exchangeable(2, 0.6)


@pytest.fixture(scope="session")
def ctx_rho06(sigma_rho06):
    return TestContext(sigma_rho06, rx_seed=Seed(72))


@pytest.fixture(scope="session")
def ctx_eye3():
    return TestContext(CorrelationMatrix.identity(3), rx_seed=Seed(73))
