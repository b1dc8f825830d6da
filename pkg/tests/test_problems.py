from dataclasses import replace

import numpy as np
import pytest
from scipy import sparse

from solvers.errors import NotPositiveDefiniteError
from solvers.linalg import Geometry
from utils.libsvm import write_libsvm
from utils.problems import ProblemRecipe, ProblemSource, build_instance, gram_gaussian, nonempty_rows, sparse_gaussian


def test_dense_gaussian_is_deterministic():
    recipe = ProblemRecipe(source="dense-gaussian", m=40, n=25, seed=3)
    first, second = build_instance(recipe), build_instance(recipe)
    np.testing.assert_array_equal(first.A, second.A)
    np.testing.assert_array_equal(first.b, second.b)
    np.testing.assert_allclose(first.A @ first.planted_solution, first.b)
    assert first.label == "dense-gaussian(40, 25)"
    other = build_instance(ProblemRecipe(source="dense-gaussian", m=40, n=25, seed=4))
    assert not np.array_equal(first.A, other.A)


def test_sparse_gaussian_density():
    A = sparse_gaussian(200, 100, 0.05, np.random.default_rng(0))
    assert sparse.issparse(A)
    assert A.nnz == pytest.approx(0.05 * 200 * 100, rel=0.1)


def test_sparse_recipe_builds_sparse_instance():
    sys = build_instance(ProblemRecipe(source="sparse-gaussian", m=100, n=40, density=0.1, seed=1))
    assert sparse.issparse(sys.A)
    assert sys.label == "sparse-gaussian(100, 40, 0.1)"


def test_empty_rows_can_be_dropped():
    # At this density about two thirds of the rows are empty.
    recipe = ProblemRecipe(source="sparse-gaussian", m=60, n=20, density=0.02, seed=4)
    full = build_instance(recipe)
    empty = full.m - nonempty_rows(full.A).size
    assert empty > 0
    trimmed = build_instance(replace(recipe, drop_empty_rows=True))
    assert trimmed.m == full.m - empty
    assert nonempty_rows(trimmed.A).size == trimmed.m
    np.testing.assert_allclose(trimmed.A @ trimmed.planted_solution, trimmed.b)


def test_nonempty_rows_for_dense_and_sparse_matrices():
    A = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 2.0]])
    assert list(nonempty_rows(A)) == [0, 2]
    assert list(nonempty_rows(sparse.csr_array(A))) == [0, 2]


def test_gram_gaussian_is_spd():
    A = gram_gaussian(30, 10, np.random.default_rng(0))
    np.testing.assert_allclose(A, A.T)
    assert np.linalg.eigvalsh(A)[0] > 0
    with pytest.raises(NotPositiveDefiniteError):
        gram_gaussian(5, 10, np.random.default_rng(0))


def test_gram_recipe_with_b_equal_to_a():
    sys = build_instance(ProblemRecipe(source="gram-gaussian", m=30, n=10, b_matrix="equal-to-A", seed=2))
    assert sys.geometry is Geometry.EQUAL_TO_A
    assert (sys.m, sys.n) == (10, 10)
    np.testing.assert_array_equal(sys.B, sys.A)


def test_b_equal_to_a_needs_square_a():
    with pytest.raises(NotPositiveDefiniteError):
        build_instance(ProblemRecipe(source="dense-gaussian", m=10, n=5, b_matrix="equal-to-A"))


def test_libsvm_recipe(tmp_path):
    path = tmp_path / "tiny.txt"
    write_libsvm(path, sparse.csr_array(np.eye(4)[:, :3] + 0.5), [1, -1, 1, -1])
    sys = build_instance(ProblemRecipe(source="libsvm-file", path=str(path), row_normalize=True, seed=0))
    assert (sys.m, sys.n) == (4, 3)
    np.testing.assert_allclose(np.linalg.norm(sys.dense_A(), axis=1), 1.0)
    np.testing.assert_allclose(sys.A @ sys.planted_solution, sys.b)


def test_explicit_rhs():
    recipe = ProblemRecipe(source="dense-gaussian", m=3, n=3, rhs="explicit", rhs_values=(1.0, 2.0, 3.0))
    sys = build_instance(recipe)
    np.testing.assert_array_equal(sys.b, [1.0, 2.0, 3.0])
    assert sys.planted_solution is None


@pytest.mark.parametrize(
    "kwargs",
    [
        {"source": "dense-gaussian", "m": 0, "n": 3},
        {"source": "sparse-gaussian", "m": 5, "n": 3},
        {"source": "sparse-gaussian", "m": 5, "n": 3, "density": 1.5},
        {"source": "libsvm-file"},
        {"source": "dense-gaussian", "m": 5, "n": 3, "rhs": "explicit"},
        {"source": "nowhere", "m": 5, "n": 3},
    ],
)
def test_invalid_recipes(kwargs):
    with pytest.raises(ValueError):
        ProblemRecipe(**kwargs)


def test_source_enum_values():
    assert ProblemSource("gram-gaussian") is ProblemSource.GRAM_GAUSSIAN
