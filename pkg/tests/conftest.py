import numpy as np
import pytest

from testbed import LinearTask, PolynomialTask, ConstantTask, toy_integrand, hierarchical_task, sdslike_task


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def linear():
    return LinearTask()


@pytest.fixture
def poly():
    return PolynomialTask()


@pytest.fixture
def hier():
    return hierarchical_task(sigma_A2=1.0, sigma_B2=4.0, dim=3)


@pytest.fixture
def toy():
    return toy_integrand(rho=0.1)


@pytest.fixture
def constant():
    return ConstantTask(value=(1.0, -2.0, 0.5))


@pytest.fixture
def sdslike():
    return sdslike_task(dim=8)


def trace_cov(values: np.ndarray) -> float:
    """Two-pass unbiased trace covariance of rows"""
    return float(np.var(values, axis=0, ddof=1).sum())


def standard_errors(values: np.ndarray) -> np.ndarray:
    return np.std(values, axis=0, ddof=1) / np.sqrt(values.shape[0])
