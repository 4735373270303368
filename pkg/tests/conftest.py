import numpy as np
import pytest

from kernelpf import AnalyticKernel, DenseKernel


@pytest.fixture(scope="session")
def analytic():
    """The (2, 2, 0.2) example on the default grid."""
    return AnalyticKernel(2.0, 2.0, 0.2, T=20.0, n=400)


@pytest.fixture(scope="session")
def analytic_critical():
    return AnalyticKernel(2.0, 2.0, 1.0 / 3.0)


@pytest.fixture
def pure_atom():
    """m = 0, int g dgamma = 0.55."""
    return DenseKernel.from_parts(np.zeros((2, 2)), [0.5, 1.0], [0.3, 0.4])


@pytest.fixture
def two_by_two():
    return DenseKernel([[0.5, 0.5], [0.25, 0.75]], [0.2, 0.4], [0.5, 0.5])


@pytest.fixture
def rng():
    return np.random.default_rng(20260101)
