"""Synthetic and file-backed problem construction."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
import scipy.linalg
from scipy import sparse

from solvers.errors import NotPositiveDefiniteError
from solvers.linalg import Geometry, LinearSystemInstance
from solvers.sketching import make_stream
from utils.libsvm import parse_libsvm

logger = logging.getLogger(__name__)


class ProblemSource(StrEnum):
    LIBSVM_FILE = "libsvm-file"
    DENSE_GAUSSIAN = "dense-gaussian"
    SPARSE_GAUSSIAN = "sparse-gaussian"
    GRAM_GAUSSIAN = "gram-gaussian"


class RhsRule(StrEnum):
    PLANTED_GAUSSIAN = "planted-gaussian"
    EXPLICIT = "explicit"


class BMatrixRule(StrEnum):
    IDENTITY = "identity"
    EQUAL_TO_A = "equal-to-A"


@dataclass(frozen=True)
class ProblemRecipe:
    """
    How to build a consistent system.

    gram-gaussian draws P (m x n) and uses A = P^T P, which is n x n.
    ``drop_empty_rows`` removes all-zero rows, which would make every block
    containing them singular.
    """

    source: ProblemSource
    m: int | None = None
    n: int | None = None
    density: float | None = None
    path: str | None = None
    n_features: int | None = None
    row_normalize: bool = False
    drop_empty_rows: bool = False
    rhs: RhsRule = RhsRule.PLANTED_GAUSSIAN
    rhs_values: tuple[float, ...] | None = None
    b_matrix: BMatrixRule = BMatrixRule.IDENTITY
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "source", ProblemSource(self.source))
        object.__setattr__(self, "rhs", RhsRule(self.rhs))
        object.__setattr__(self, "b_matrix", BMatrixRule(self.b_matrix))
        if self.source is ProblemSource.LIBSVM_FILE:
            if not self.path:
                raise ValueError("libsvm-file problems need a path")
        elif not (self.m and self.n and self.m > 0 and self.n > 0):
            raise ValueError(f"{self.source} problems need positive m and n")
        if self.source is ProblemSource.SPARSE_GAUSSIAN:
            if self.density is None or not 0.0 < self.density <= 1.0:
                raise ValueError(f"density must lie in (0, 1], got {self.density}")
        if self.rhs is RhsRule.EXPLICIT and self.rhs_values is None:
            raise ValueError("explicit right-hand sides need rhs_values")

    @property
    def label(self) -> str:
        match self.source:
            case ProblemSource.LIBSVM_FILE:
                return f"libsvm({self.path})"
            case ProblemSource.SPARSE_GAUSSIAN:
                return f"sparse-gaussian({self.m}, {self.n}, {self.density:g})"
            case _:
                return f"{self.source}({self.m}, {self.n})"


def sparse_gaussian(m: int, n: int, density: float, rng: np.random.Generator) -> sparse.csr_array:
    """Each entry nonzero independently with probability ``density``, nonzero values N(0, 1)."""
    nnz = int(rng.binomial(m * n, density))
    positions = rng.choice(m * n, size=nnz, replace=False)
    rows, cols = np.divmod(positions, n)
    values = rng.standard_normal(nnz)
    return sparse.csr_array(sparse.coo_array((values, (rows, cols)), shape=(m, n)))


def nonempty_rows(A) -> np.ndarray:
    """Indices of the rows of A with at least one nonzero entry."""
    if sparse.issparse(A):
        counts = np.diff(sparse.csr_array(A).indptr)
    else:
        counts = np.count_nonzero(A, axis=1)
    return np.flatnonzero(counts > 0)


def gram_gaussian(m: int, n: int, rng: np.random.Generator) -> np.ndarray:
    P = rng.standard_normal((m, n))
    A = P.T @ P
    A = 0.5 * (A + A.T)
    try:
        scipy.linalg.cholesky(A)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefiniteError(
            f"P^T P is not positive definite for P of shape ({m}, {n}); need m >= n"
        ) from e
    return A


def build_instance(recipe: ProblemRecipe) -> LinearSystemInstance:
    """
    Build the system a recipe describes; deterministic in ``recipe.seed``.

    The matrix is generated first and the right-hand side afterwards from
    the same stream.
    """
    rng = make_stream(recipe.seed)
    match recipe.source:
        case ProblemSource.DENSE_GAUSSIAN:
            A = rng.standard_normal((recipe.m, recipe.n))
        case ProblemSource.SPARSE_GAUSSIAN:
            A = sparse_gaussian(recipe.m, recipe.n, recipe.density, rng)
        case ProblemSource.GRAM_GAUSSIAN:
            A = gram_gaussian(recipe.m, recipe.n, rng)
        case ProblemSource.LIBSVM_FILE:
            # Labels are not part of the linear system.
            A, _ = parse_libsvm(recipe.path, recipe.n_features, recipe.row_normalize)

    m_generated = A.shape[0]
    keep = None
    if recipe.drop_empty_rows:
        keep = nonempty_rows(A)
        if keep.size < A.shape[0]:
            logger.info("Dropping %d empty row(s) of %d", A.shape[0] - keep.size, A.shape[0])
        A = A[keep]

    planted = None
    if recipe.rhs is RhsRule.PLANTED_GAUSSIAN:
        planted = rng.standard_normal(A.shape[1])
        b = np.asarray(A @ planted)
    else:
        b = np.asarray(recipe.rhs_values, dtype=np.float64)
        # Explicit right-hand sides are given for the rows before dropping.
        if keep is not None and b.shape[0] == m_generated:
            b = b[keep]

    geometry = Geometry.EQUAL_TO_A if recipe.b_matrix is BMatrixRule.EQUAL_TO_A else None
    if geometry is Geometry.EQUAL_TO_A and A.shape[0] != A.shape[1]:
        raise NotPositiveDefiniteError("B = A needs a square symmetric positive definite A")

    sys = LinearSystemInstance.create(A, b, geometry=geometry, planted_solution=planted, label=recipe.label)
    logger.info("Built %s: m=%d, n=%d, rank=%d, B=%s", sys.label, sys.m, sys.n, sys.rank, sys.geometry)
    return sys
