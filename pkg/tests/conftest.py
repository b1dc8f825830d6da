import numpy as np
import pytest

from solvers.linalg import LinearSystemInstance


def planted_system(m, n, seed, B=None, geometry=None):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    z = rng.standard_normal(n)
    return LinearSystemInstance.create(A, A @ z, B, geometry=geometry, planted_solution=z)


def spd_matrix(n, seed, extra_rows=5):
    rng = np.random.default_rng(seed)
    P = rng.standard_normal((n + extra_rows, n))
    return P.T @ P


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_system():
    """30 x 20 dense Gaussian system, B = I, full column rank."""
    return planted_system(30, 20, seed=0)


@pytest.fixture
def tiny_system():
    return planted_system(8, 5, seed=1)


@pytest.fixture
def general_b_system():
    """12 x 6 system in the geometry of a random SPD B."""
    return planted_system(12, 6, seed=2, B=spd_matrix(6, seed=3))


@pytest.fixture
def spd_system():
    """A = P^T P with B = A."""
    A = spd_matrix(10, seed=4)
    z = np.random.default_rng(5).standard_normal(10)
    return LinearSystemInstance.create(A, A @ z, geometry="equal-to-A", planted_solution=z)


@pytest.fixture
def underdetermined_system():
    """6 x 10 system whose solution set is an affine subspace."""
    rng = np.random.default_rng(6)
    A = rng.standard_normal((6, 10))
    return LinearSystemInstance.create(A, A @ rng.standard_normal(10))
