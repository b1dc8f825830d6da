import numpy as np
import pytest
from scipy import sparse

from solvers.errors import (
    DimensionMismatchError,
    InconsistentSystemError,
    NotPositiveDefiniteError,
    NotSymmetricError,
    SolverError,
)
from solvers.linalg import (
    Geometry,
    LinearSystemInstance,
    PsdEigen,
    b_inner,
    b_norm,
    project_affine,
    pseudoinverse_apply,
    spectral_summary,
)
from solvers.sketching import SketchDistribution


def test_create_defaults_to_identity_geometry(small_system):
    assert small_system.geometry is Geometry.IDENTITY
    assert small_system.m == 30 and small_system.n == 20
    assert small_system.full_column_rank
    assert small_system.condition_number_B == 1.0


def test_create_rejects_inconsistent_system():
    A = np.array([[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(InconsistentSystemError):
        LinearSystemInstance.create(A, np.array([1.0, 2.0]))


def test_create_skips_consistency_when_asked():
    A = np.array([[1.0, 0.0], [1.0, 0.0]])
    sys = LinearSystemInstance.create(A, np.array([1.0, 2.0]), check_consistency=False)
    assert sys.rank == 1


def test_create_rejects_bad_geometry_matrices():
    A = np.eye(3)
    with pytest.raises(NotSymmetricError):
        LinearSystemInstance.create(A, np.ones(3), np.triu(np.ones((3, 3))))
    with pytest.raises(NotPositiveDefiniteError):
        LinearSystemInstance.create(A, np.ones(3), np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(DimensionMismatchError):
        LinearSystemInstance.create(A, np.ones(3), np.eye(4))
    with pytest.raises(DimensionMismatchError):
        LinearSystemInstance.create(A, np.ones(4))


def test_errors_share_a_base():
    assert issubclass(NotPositiveDefiniteError, SolverError)
    assert issubclass(DimensionMismatchError, ValueError)


def test_equal_to_a_geometry_needs_square_a():
    with pytest.raises(DimensionMismatchError):
        LinearSystemInstance.create(np.ones((3, 2)), np.ones(3), geometry="equal-to-A")


def test_sparse_matrices_are_kept_sparse():
    A = sparse.random(20, 8, density=0.5, random_state=0, format="csr") + sparse.eye(20, 8)
    z = np.arange(8.0)
    sys = LinearSystemInstance.create(A, A @ z)
    assert sparse.issparse(sys.A)
    np.testing.assert_allclose(sys.rows(np.array([0, 3])), A.toarray()[[0, 3]])


def test_b_norm_uses_geometry(general_b_system):
    v = np.arange(1.0, 7.0)
    assert b_norm(v, general_b_system) == pytest.approx(np.sqrt(v @ general_b_system.B @ v))
    assert b_inner(v, v, general_b_system) == pytest.approx(v @ general_b_system.B @ v)


def test_apply_b_inv_matches_solve(general_b_system):
    v = np.linspace(-1, 1, 6)
    np.testing.assert_allclose(general_b_system.apply_B_inv(v), np.linalg.solve(general_b_system.B, v))


def test_random_b_unit_has_unit_norm(general_b_system, rng):
    for _ in range(5):
        assert b_norm(general_b_system.random_b_unit(rng), general_b_system) == pytest.approx(1.0)


def test_pseudoinverse_matches_numpy():
    rng = np.random.default_rng(0)
    U = rng.standard_normal((5, 3))
    M = U @ U.T
    v = rng.standard_normal(5)
    np.testing.assert_allclose(pseudoinverse_apply(M, v), np.linalg.pinv(M) @ v, atol=1e-10)


def test_pseudoinverse_rejects_nonpositive_tolerance():
    with pytest.raises(ValueError):
        pseudoinverse_apply(np.eye(2), np.ones(2), rank_tol=0.0)


def test_psd_eigen_reports_rank_and_range():
    M = np.diag([4.0, 1.0, 0.0])
    eig = PsdEigen.of(M)
    assert eig.rank == 2
    assert eig.lambda_max == 4.0
    assert eig.lambda_min_plus == 1.0
    np.testing.assert_allclose(eig.range_project(np.ones(3)), [1.0, 1.0, 0.0])


def test_project_affine_lands_on_constraints(general_b_system):
    x = np.ones(6)
    rows = general_b_system.dense_A()[:3]
    result = project_affine(x, rows, general_b_system.b[:3], general_b_system)
    np.testing.assert_allclose(rows @ result.point, general_b_system.b[:3], atol=1e-9)
    assert result.distance_B == pytest.approx(b_norm(x - result.point, general_b_system))


def test_project_affine_is_b_orthogonal(general_b_system):
    # x - P(x) is B-orthogonal to every direction inside the constraint set.
    x = np.ones(6)
    rows = general_b_system.dense_A()[:3]
    point = project_affine(x, rows, general_b_system.b[:3], general_b_system).point
    null_direction = np.linalg.svd(rows)[2][-1]
    assert abs(b_inner(x - point, null_direction, general_b_system)) < 1e-9


def test_project_affine_is_idempotent(general_b_system, rng):
    rows = general_b_system.dense_A()[:3]
    b_sub = general_b_system.b[:3]
    for _ in range(10):
        point = project_affine(rng.standard_normal(6), rows, b_sub, general_b_system).point
        again = project_affine(point, rows, b_sub, general_b_system)
        np.testing.assert_allclose(again.point, point, atol=1e-10)
        assert again.distance_B == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("fixture", ["underdetermined_system", "general_b_system"])
def test_projection_splits_the_squared_distance(fixture, request, rng):
    # ||x - z||_B^2 = ||x - P(x)||_B^2 + ||P(x) - z||_B^2 for z in the constraint set.
    sys = request.getfixturevalue(fixture)
    A = sys.dense_A()
    rows, b_sub = A[:3], sys.b[:3]
    z = project_affine(rng.standard_normal(sys.n), A, sys.b, sys).point
    for _ in range(10):
        x = rng.standard_normal(sys.n)
        p = project_affine(x, rows, b_sub, sys).point
        lhs = b_norm(x - z, sys) ** 2
        rhs = b_norm(x - p, sys) ** 2 + b_norm(p - z, sys) ** 2
        assert lhs == pytest.approx(rhs, rel=1e-8, abs=1e-10)


def test_project_affine_detects_empty_set(small_system):
    rows = np.vstack([np.eye(20)[0], np.eye(20)[0]])
    with pytest.raises(InconsistentSystemError):
        project_affine(np.zeros(20), rows, np.array([1.0, 2.0]), small_system)


def test_spectral_summary_for_single_rows_is_normalized_gram(small_system):
    # Single-row sketches with B = I give E[Z] = A^T D A / m with D = diag(1 / ||a_i||^2).
    A = small_system.dense_A()
    expected = (A.T / np.sum(A**2, axis=1)) @ A / small_system.m
    summary = spectral_summary(small_system, SketchDistribution.coordinate(small_system.m))
    assert summary.exact
    assert summary.n_samples == small_system.m
    np.testing.assert_allclose(summary.expected_Z, expected, atol=1e-12)
    assert 0 < summary.lambda_min_plus <= summary.lambda_max <= 1 + 1e-12
    assert summary.exactness_ok


def test_spectral_summary_for_full_block_is_projection(tiny_system):
    summary = spectral_summary(tiny_system, SketchDistribution.block(tiny_system.m, tiny_system.m))
    np.testing.assert_allclose(summary.eigenvalues, np.ones(tiny_system.n), atol=1e-10)


def test_spectral_summary_monte_carlo_is_close(tiny_system, rng):
    dist = SketchDistribution.coordinate(tiny_system.m)
    exact = spectral_summary(tiny_system, dist)
    sampled = spectral_summary(tiny_system, dist, n_samples=20_000, rng=rng)
    assert not sampled.exact
    assert sampled.standard_error is not None
    np.testing.assert_allclose(sampled.expected_Z, exact.expected_Z, atol=0.03)


def test_spectral_summary_underdetermined_rank(underdetermined_system):
    summary = spectral_summary(underdetermined_system, SketchDistribution.coordinate(6))
    assert summary.rank == 6
    assert summary.exactness_ok


def test_spectral_summary_cannot_enumerate_gaussian(tiny_system):
    with pytest.raises(ValueError):
        spectral_summary(tiny_system, SketchDistribution.gaussian(tiny_system.m), exact_enumeration=True)


def test_spectral_summary_in_general_geometry(general_b_system):
    summary = spectral_summary(general_b_system, SketchDistribution.block(12, 3))
    assert 0 < summary.lambda_min_plus <= summary.lambda_max <= 1 + 1e-10
