"""B-geometry linear algebra shared by every solver and certificate.

All projections, norms and spectral quantities are taken in the geometry of
a symmetric positive definite matrix B. B^-1 is always applied through a
Cholesky factorization cached on the instance, never through an explicit
inverse.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import StrEnum
from functools import cached_property
from typing import TYPE_CHECKING

import numpy as np
import scipy.linalg
from scipy import sparse

from solvers.errors import (
    DimensionMismatchError,
    InconsistentSystemError,
    NotPositiveDefiniteError,
    NotSymmetricError,
)

if TYPE_CHECKING:
    from solvers.sketching import SketchDistribution

logger = logging.getLogger(__name__)

DEFAULT_RANK_TOL = 1e-12
SYMMETRY_TOL = 1e-10
CONSISTENCY_TOL = 1e-8
MAX_ENUMERATION = 10**6
DEFAULT_MC_SAMPLES = 10_000


class Geometry(StrEnum):
    IDENTITY = "identity"
    EQUAL_TO_A = "equal-to-A"
    GENERAL = "general"


def as_vector(v, size: int, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != size:
        raise DimensionMismatchError(f"{name} must have shape ({size},), got {arr.shape}")
    return arr


def _check_symmetric(M: np.ndarray, name: str, tol: float = SYMMETRY_TOL) -> None:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatchError(f"{name} must be square, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if M.size and np.max(np.abs(M - M.T)) > tol * scale:
        raise NotSymmetricError(f"{name} is not symmetric to tolerance {tol:g}")


@dataclass(frozen=True, eq=False)
class LinearSystemInstance:
    """The consistent system Ax = b together with the geometry matrix B.

    Build instances with :meth:`create`, which validates B and consistency.
    Instances are immutable and may be shared across concurrent runs.
    """

    A: np.ndarray | sparse.csr_array
    b: np.ndarray
    B: np.ndarray
    geometry: Geometry
    rank: int
    planted_solution: np.ndarray | None = None
    label: str = ""

    @classmethod
    def create(
        cls,
        A,
        b,
        B=None,
        *,
        geometry: Geometry | str | None = None,
        planted_solution=None,
        label: str = "",
        check_consistency: bool = True,
        consistency_tol: float = CONSISTENCY_TOL,
    ) -> LinearSystemInstance:
        """
        Validate and build a system instance.

        Args:
            A: Dense array or scipy sparse matrix of shape (m, n)
            b: Right-hand side of length m
            B: SPD geometry matrix (n, n); identity when omitted
            geometry: Force a geometry tag; "equal-to-A" uses B = A
            planted_solution: Known solution z with Az = b, if any
            label: Free-form description carried into reports
            check_consistency: Run the least-squares consistency test
            consistency_tol: Relative residual allowed by the test

        Returns:
            LinearSystemInstance
        """
        if sparse.issparse(A):
            A = sparse.csr_array(A, dtype=np.float64)
        else:
            A = np.asarray(A, dtype=np.float64)
            if A.ndim != 2:
                raise DimensionMismatchError(f"A must be a matrix, got shape {A.shape}")
        m, n = A.shape
        b = as_vector(b, m, "b")

        geometry = Geometry(geometry) if geometry is not None else None
        if geometry is Geometry.EQUAL_TO_A:
            if m != n:
                raise DimensionMismatchError("B = A requires a square A")
            B = A.toarray() if sparse.issparse(A) else A.copy()
        elif B is None:
            B = np.eye(n)
            geometry = Geometry.IDENTITY
        else:
            B = np.asarray(B, dtype=np.float64)
            if B.shape != (n, n):
                raise DimensionMismatchError(f"B must have shape ({n}, {n}), got {B.shape}")
            if geometry is None:
                geometry = Geometry.IDENTITY if np.array_equal(B, np.eye(n)) else Geometry.GENERAL

        _check_symmetric(B, "B")
        try:
            scipy.linalg.cho_factor(B, check_finite=True)
        except np.linalg.LinAlgError as e:
            raise NotPositiveDefiniteError(f"B is not positive definite: {e}") from e

        A_dense = A.toarray() if sparse.issparse(A) else A
        x_ls, _, rank, _ = scipy.linalg.lstsq(A_dense, b, lapack_driver="gelsd")
        if check_consistency:
            residual = float(np.linalg.norm(A_dense @ x_ls - b))
            if residual > consistency_tol * (1.0 + float(np.linalg.norm(b))):
                raise InconsistentSystemError(
                    f"Ax = b is inconsistent: least-squares residual {residual:.3e}"
                )

        if planted_solution is not None:
            planted_solution = as_vector(planted_solution, n, "planted_solution")

        return cls(
            A=A,
            b=b,
            B=B,
            geometry=geometry,
            rank=int(rank),
            planted_solution=planted_solution,
            label=label,
        )

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def full_column_rank(self) -> bool:
        return self.rank == self.n

    @cached_property
    def _cholesky(self) -> tuple[np.ndarray, bool]:
        return scipy.linalg.cho_factor(self.B, lower=False)

    @cached_property
    def _B_eigh(self) -> tuple[np.ndarray, np.ndarray]:
        return scipy.linalg.eigh(self.B)

    @cached_property
    def B_inv_sqrt(self) -> np.ndarray:
        if self.geometry is Geometry.IDENTITY:
            return np.eye(self.n)
        mu, V = self._B_eigh
        return (V / np.sqrt(mu)) @ V.T

    @cached_property
    def condition_number_B(self) -> float:
        if self.geometry is Geometry.IDENTITY:
            return 1.0
        mu = self._B_eigh[0]
        return float(mu[-1] / mu[0])

    def apply_B(self, v: np.ndarray) -> np.ndarray:
        if self.geometry is Geometry.IDENTITY:
            return np.asarray(v, dtype=np.float64)
        return self.B @ v

    def apply_B_inv(self, v: np.ndarray) -> np.ndarray:
        """Apply B^-1 to a vector or to the columns of a matrix."""
        if self.geometry is Geometry.IDENTITY:
            return np.asarray(v, dtype=np.float64)
        return scipy.linalg.cho_solve(self._cholesky, v)

    def apply_A(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.A @ x)

    def apply_AT(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(self.A.T @ y)

    def rows(self, indices: np.ndarray) -> np.ndarray:
        """Dense copy of the rows of A selected by ``indices``."""
        block = self.A[indices]
        return block.toarray() if sparse.issparse(block) else np.asarray(block)

    def dense_A(self) -> np.ndarray:
        return self.A.toarray() if sparse.issparse(self.A) else self.A

    def random_b_unit(self, rng: np.random.Generator) -> np.ndarray:
        """Draw a direction uniformly on the unit sphere of the B-norm."""
        g = rng.standard_normal(self.n)
        if self.geometry is Geometry.IDENTITY:
            w = g
        else:
            # U^-1 g has covariance B^-1, the same law as B^-1/2 g.
            w = scipy.linalg.solve_triangular(self._cholesky[0], g, lower=False)
        return w / b_norm(w, self)


def b_inner(x, y, sys: LinearSystemInstance) -> float:
    """Return the B-inner product x^T B y."""
    x = as_vector(x, sys.n, "x")
    y = as_vector(y, sys.n, "y")
    return float(x @ sys.apply_B(y))


def b_norm(x, sys: LinearSystemInstance) -> float:
    return float(np.sqrt(max(b_inner(x, x, sys), 0.0)))


@dataclass(frozen=True)
class PsdEigen:
    """Thresholded symmetric eigendecomposition of a PSD matrix."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    cutoff: float

    @classmethod
    def of(cls, M, rank_tol: float = DEFAULT_RANK_TOL) -> PsdEigen:
        M = np.asarray(M, dtype=np.float64)
        _check_symmetric(M, "M")
        if M.shape[0] == 0:
            return cls(np.zeros(0), np.zeros((0, 0)), 0.0)
        eigenvalues, eigenvectors = scipy.linalg.eigh(0.5 * (M + M.T))
        cutoff = rank_tol * max(float(eigenvalues[-1]), 0.0)
        return cls(eigenvalues, eigenvectors, cutoff)

    @property
    def kept(self) -> np.ndarray:
        return (self.eigenvalues > self.cutoff) & (self.eigenvalues > 0)

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.kept))

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1]) if self.eigenvalues.size else 0.0

    @property
    def lambda_min_plus(self) -> float:
        kept = self.eigenvalues[self.kept]
        return float(kept[0]) if kept.size else 0.0

    def pinv_apply(self, v: np.ndarray) -> np.ndarray:
        V = self.eigenvectors[:, self.kept]
        return V @ ((V.T @ v) / self.eigenvalues[self.kept])

    def pinv(self) -> np.ndarray:
        V = self.eigenvectors[:, self.kept]
        return (V / self.eigenvalues[self.kept]) @ V.T

    def range_project(self, v: np.ndarray) -> np.ndarray:
        V = self.eigenvectors[:, self.kept]
        return V @ (V.T @ v)


def pseudoinverse_apply(M, v, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """
    Apply the Moore-Penrose pseudoinverse of a symmetric PSD matrix.

    Eigenvalues at or below ``rank_tol * lambda_max(M)`` are treated as zero.

    Args:
        M: Symmetric PSD matrix (q, q)
        v: Vector of length q
        rank_tol: Relative eigenvalue cutoff, must be positive

    Returns:
        M^+ v, which lies in range(M)
    """
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    eig = PsdEigen.of(M, rank_tol)
    v = as_vector(v, eig.eigenvalues.shape[0], "v")
    return eig.pinv_apply(v)


@dataclass(frozen=True)
class ProjectionResult:
    point: np.ndarray
    distance_B: float


def project_affine(
    x,
    A_sub,
    b_sub,
    sys: LinearSystemInstance,
    rank_tol: float = DEFAULT_RANK_TOL,
    feasibility_tol: float = CONSISTENCY_TOL,
) -> ProjectionResult:
    """
    Project x onto {z : A_sub z = b_sub} in the B-norm.

    Computes x - B^-1 A_sub^T (A_sub B^-1 A_sub^T)^+ (A_sub x - b_sub).

    Args:
        x: Point of length n
        A_sub: Constraint matrix with n columns (dense or sparse)
        b_sub: Constraint right-hand side
        sys: Instance providing the geometry B
        rank_tol: Relative cutoff for the pseudoinverse
        feasibility_tol: Relative tolerance for the feasibility check

    Returns:
        ProjectionResult with the projected point and its B-distance from x
    """
    x = as_vector(x, sys.n, "x")
    A_sub = A_sub.toarray() if sparse.issparse(A_sub) else np.atleast_2d(np.asarray(A_sub, dtype=np.float64))
    if A_sub.shape[1] != sys.n:
        raise DimensionMismatchError(f"A_sub must have {sys.n} columns, got {A_sub.shape[1]}")
    b_sub = as_vector(b_sub, A_sub.shape[0], "b_sub")

    lifted = sys.apply_B_inv(A_sub.T)
    G = A_sub @ lifted
    residual = A_sub @ x - b_sub
    point = x - lifted @ PsdEigen.of(G, rank_tol).pinv_apply(residual)

    violation = float(np.linalg.norm(A_sub @ point - b_sub))
    scale = 1.0 + float(np.linalg.norm(b_sub)) + float(np.linalg.norm(A_sub @ x))
    if violation > feasibility_tol * scale:
        raise InconsistentSystemError(
            f"constraint set is empty: projected point violates it by {violation:.3e}"
        )
    return ProjectionResult(point=point, distance_B=b_norm(x - point, sys))


@dataclass(frozen=True)
class SpectralSummary:
    W: np.ndarray
    eigenvalues: np.ndarray
    lambda_min_plus: float
    lambda_max: float
    expected_Z: np.ndarray
    exact: bool
    n_samples: int
    standard_error: float | None
    rank: int
    exactness_ok: bool


def spectral_summary(
    sys: LinearSystemInstance,
    dist: SketchDistribution,
    n_samples: int | None = None,
    exact_enumeration: bool | None = None,
    rng: np.random.Generator | None = None,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> SpectralSummary:
    """
    Compute W = B^-1/2 E[Z] B^-1/2 and its spectrum for a sketch distribution.

    E[Z] is computed exactly by enumerating the distribution's support when
    it is finite and small enough, otherwise by Monte-Carlo averaging.

    Args:
        sys: System instance
        dist: Sketch distribution
        n_samples: Monte-Carlo sample count
        exact_enumeration: Force (True) or forbid (False) enumeration; None picks automatically
        rng: Generator for Monte-Carlo draws
        rank_tol: Relative cutoff used for lambda_min_plus

    Returns:
        SpectralSummary
    """
    from solvers.sketching import realize_sketch

    support_size = dist.support_size
    if exact_enumeration is None:
        exact_enumeration = (
            n_samples is None and support_size is not None and support_size <= MAX_ENUMERATION
        )
    if exact_enumeration and support_size is None:
        raise ValueError(f"cannot enumerate the support of a {dist.kind} distribution")

    n = sys.n
    expected_Z = np.zeros((n, n))
    standard_error = None
    if exact_enumeration:
        count = 0
        for raw, probability in dist.support():
            expected_Z += probability * realize_sketch(raw, dist, sys).Z_matrix()
            count += 1
        n_used = count
    else:
        n_samples = DEFAULT_MC_SAMPLES if n_samples is None else n_samples
        if n_samples <= 0:
            raise ValueError("Monte-Carlo spectral summary needs n_samples > 0")
        rng = np.random.default_rng() if rng is None else rng
        second_moment = np.zeros((n, n))
        for _ in range(n_samples):
            Z = realize_sketch(dist.sample_raw(rng), dist, sys).Z_matrix()
            expected_Z += Z
            second_moment += Z * Z
        expected_Z /= n_samples
        second_moment /= n_samples
        variance = np.maximum(second_moment - expected_Z**2, 0.0)
        standard_error = float(np.sqrt(variance.max() / n_samples))
        n_used = n_samples

    expected_Z = 0.5 * (expected_Z + expected_Z.T)
    W = sys.B_inv_sqrt @ expected_Z @ sys.B_inv_sqrt
    W = 0.5 * (W + W.T)
    eigenvalues = scipy.linalg.eigvalsh(W)
    lambda_max = float(eigenvalues[-1])
    positive = eigenvalues[eigenvalues > rank_tol * lambda_max]
    rank = int(positive.size)
    exactness_ok = rank == sys.rank
    if not exactness_ok:
        logger.warning(
            "Sketch distribution is not exact for this system: rank E[Z] = %d, rank A = %d",
            rank,
            sys.rank,
        )

    return SpectralSummary(
        W=W,
        eigenvalues=eigenvalues,
        lambda_min_plus=float(positive[0]) if rank else 0.0,
        lambda_max=lambda_max,
        expected_Z=expected_Z,
        exact=bool(exact_enumeration),
        n_samples=n_used,
        standard_error=standard_error,
        rank=rank,
        exactness_ok=exactness_ok,
    )
