"""Sketch distributions, realized sketches and seeded random streams."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from enum import StrEnum
from functools import cached_property
from typing import Iterator

import numpy as np
import scipy.linalg

from solvers.errors import DimensionMismatchError, NotPositiveDefiniteError
from solvers.linalg import DEFAULT_RANK_TOL, Geometry, LinearSystemInstance, PsdEigen, as_vector

logger = logging.getLogger(__name__)


class SketchKind(StrEnum):
    BLOCK = "block-identity-uniform"
    COORDINATE = "single-coordinate-uniform"
    GAUSSIAN = "gaussian"


class StreamChannel:
    """Substream identifiers inside one trial."""

    SKETCH = 0
    NOISE = 1


def make_stream(seed: int, *path: int) -> np.random.Generator:
    """
    Build a counter-based generator addressed by (seed, path).

    The same (seed, path) always yields the same stream, independent of how
    many other streams were created before it.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=path)))


@dataclass(frozen=True)
class TrialStreams:
    sketch: np.random.Generator
    noise: np.random.Generator

    @classmethod
    def for_trial(cls, seed: int, trial: int = 0) -> TrialStreams:
        return cls(
            sketch=make_stream(seed, trial, StreamChannel.SKETCH),
            noise=make_stream(seed, trial, StreamChannel.NOISE),
        )


@dataclass(frozen=True)
class RawSketch:
    """A drawn S: either a row-index set (identity columns) or a dense matrix."""

    indices: np.ndarray | None = None
    matrix: np.ndarray | None = None

    @property
    def q(self) -> int:
        return len(self.indices) if self.indices is not None else self.matrix.shape[1]

    def transpose_apply(self, X: np.ndarray) -> np.ndarray:
        """Return S^T X for a vector or matrix X with m rows."""
        if self.indices is not None:
            return X[self.indices]
        return self.matrix.T @ X

    def apply(self, lam: np.ndarray, m: int) -> np.ndarray:
        """Return S lam as a vector of length m."""
        if self.indices is not None:
            out = np.zeros(m)
            np.add.at(out, self.indices, lam)
            return out
        return self.matrix @ lam


@dataclass(frozen=True, eq=False)
class SketchDistribution:
    kind: SketchKind
    m: int
    block_size: int = 1
    covariance: np.ndarray | None = None
    blocks: tuple[tuple[int, ...], ...] | None = None

    @classmethod
    def block(cls, m: int, d: int) -> SketchDistribution:
        if not 1 <= d <= m:
            raise ValueError(f"block size d must satisfy 1 <= d <= m = {m}, got {d}")
        return cls(SketchKind.BLOCK, m, block_size=d)

    @classmethod
    def coordinate(cls, m: int) -> SketchDistribution:
        return cls(SketchKind.COORDINATE, m)

    @classmethod
    def gaussian(cls, m: int, covariance=None) -> SketchDistribution:
        covariance = np.eye(m) if covariance is None else np.asarray(covariance, dtype=np.float64)
        if covariance.shape != (m, m):
            raise DimensionMismatchError(f"covariance must be ({m}, {m}), got {covariance.shape}")
        try:
            scipy.linalg.cholesky(covariance, lower=True)
        except np.linalg.LinAlgError as e:
            raise NotPositiveDefiniteError("Gaussian sketch covariance must be SPD") from e
        return cls(SketchKind.GAUSSIAN, m, covariance=covariance)

    @classmethod
    def fixed_blocks(cls, m: int, blocks) -> SketchDistribution:
        """Uniform distribution over an explicit list of row blocks of equal size."""
        blocks = tuple(tuple(sorted(int(i) for i in block)) for block in blocks)
        if not blocks:
            raise ValueError("fixed_blocks needs at least one block")
        sizes = {len(block) for block in blocks}
        if len(sizes) != 1:
            raise ValueError("all blocks must have the same cardinality")
        d = sizes.pop()
        if not 1 <= d <= m or any(i < 0 or i >= m for block in blocks for i in block):
            raise ValueError(f"blocks must hold between 1 and {m} indices from range({m})")
        return cls(SketchKind.BLOCK, m, block_size=d, blocks=blocks)

    @cached_property
    def _covariance_factor(self) -> np.ndarray:
        return scipy.linalg.cholesky(self.covariance, lower=True)

    @property
    def support_size(self) -> int | None:
        """Number of sketches with positive probability, or None for continuous laws."""
        match self.kind:
            case SketchKind.BLOCK if self.blocks is not None:
                return len(self.blocks)
            case SketchKind.BLOCK:
                return math.comb(self.m, self.block_size)
            case SketchKind.COORDINATE:
                return self.m
            case _:
                return None

    def support(self) -> Iterator[tuple[RawSketch, float]]:
        """Enumerate (sketch, probability) pairs of a finite distribution."""
        size = self.support_size
        if size is None:
            raise ValueError("Gaussian sketches have no finite support")
        if self.kind is SketchKind.COORDINATE:
            blocks = ((i,) for i in range(self.m))
        elif self.blocks is not None:
            blocks = iter(self.blocks)
        else:
            blocks = itertools.combinations(range(self.m), self.block_size)
        for block in blocks:
            yield RawSketch(indices=np.array(block, dtype=np.intp)), 1.0 / size

    def sample_raw(self, rng: np.random.Generator) -> RawSketch:
        match self.kind:
            case SketchKind.COORDINATE:
                return RawSketch(indices=np.array([rng.integers(self.m)], dtype=np.intp))
            case SketchKind.BLOCK if self.blocks is not None:
                block = self.blocks[rng.integers(len(self.blocks))]
                return RawSketch(indices=np.array(block, dtype=np.intp))
            case SketchKind.BLOCK:
                if self.block_size > self.m:
                    raise ValueError(f"block size {self.block_size} exceeds m = {self.m}")
                indices = rng.choice(self.m, size=self.block_size, replace=False)
                return RawSketch(indices=np.sort(indices).astype(np.intp))
            case SketchKind.GAUSSIAN:
                s = self._covariance_factor @ rng.standard_normal(self.m)
                return RawSketch(matrix=s[:, None])


@dataclass(frozen=True, eq=False)
class SketchSample:
    """A realized sketch S with M = S^T A B^-1 A^T S and S^T A, S^T b cached.

    The eigendecomposition of M is computed on first use only, so inner
    solvers that never need it do not pay for it.
    """

    raw: RawSketch
    SA: np.ndarray
    Sb: np.ndarray
    M: np.ndarray
    lifted: np.ndarray | None
    n: int
    rank_tol: float = DEFAULT_RANK_TOL

    @property
    def q(self) -> int:
        return self.M.shape[0]

    @property
    def indices(self) -> np.ndarray | None:
        return self.raw.indices

    @cached_property
    def M_eig(self) -> PsdEigen:
        return PsdEigen.of(self.M, self.rank_tol)

    def sketched_residual(self, x: np.ndarray) -> np.ndarray:
        """d = S^T (b - A x)."""
        return self.Sb - self.SA @ x

    def lift(self, lam: np.ndarray) -> np.ndarray:
        """Map lam in R^q to B^-1 A^T S lam in R^n."""
        if self.lifted is None:
            out = np.zeros(self.n)
            out[self.raw.indices] = lam
            return out
        return self.lifted @ lam

    def Z_apply(self, v: np.ndarray) -> np.ndarray:
        return self.SA.T @ self.M_eig.pinv_apply(self.SA @ v)

    def Z_matrix(self) -> np.ndarray:
        return self.SA.T @ self.M_eig.pinv() @ self.SA


def realize_sketch(raw: RawSketch, dist: SketchDistribution, sys: LinearSystemInstance) -> SketchSample:
    """Compute the derived quantities of a drawn sketch against a system."""
    if raw.indices is not None:
        SA = sys.rows(raw.indices)
    else:
        SA = np.asarray(sys.A.T @ raw.matrix).T
    Sb = raw.transpose_apply(sys.b)

    match sys.geometry:
        case Geometry.IDENTITY:
            lifted = SA.T
            M = SA @ SA.T
        case Geometry.EQUAL_TO_A if raw.indices is not None:
            # B = A symmetric, so B^-1 A^T S = S and M is a principal submatrix of A.
            lifted = None
            M = SA[:, raw.indices]
        case Geometry.EQUAL_TO_A:
            lifted = raw.matrix
            M = SA @ raw.matrix
        case _:
            lifted = sys.apply_B_inv(SA.T)
            M = SA @ lifted

    return SketchSample(raw=raw, SA=SA, Sb=Sb, M=0.5 * (M + M.T), lifted=lifted, n=sys.n)


def draw_sketch(dist: SketchDistribution, sys: LinearSystemInstance, rng: np.random.Generator) -> SketchSample:
    """
    Draw a fresh sketch from ``dist`` and realize it against ``sys``.

    Block sketches are kept as index sets; S is never formed densely.

    Args:
        dist: Sketch distribution over m x q matrices
        sys: System instance with m rows
        rng: Stream the draw consumes

    Returns:
        SketchSample
    """
    if dist.m != sys.m:
        raise DimensionMismatchError(f"distribution is over {dist.m} rows, system has {sys.m}")
    if dist.kind is SketchKind.BLOCK and dist.block_size > sys.m:
        raise ValueError(f"block size {dist.block_size} exceeds m = {sys.m}")
    return realize_sketch(dist.sample_raw(rng), dist, sys)


def stochastic_f_value(sample: SketchSample, x, sys: LinearSystemInstance) -> float:
    """f_S(x) = 1/2 d^T M^+ d with d = S^T (b - A x)."""
    x = as_vector(x, sys.n, "x")
    d = sample.sketched_residual(x)
    return max(0.5 * float(d @ sample.M_eig.pinv_apply(d)), 0.0)


def stochastic_gradient(sample: SketchSample, x, sys: LinearSystemInstance) -> np.ndarray:
    """Gradient of f_S in the B-inner product: B^-1 A^T S M^+ S^T (A x - b)."""
    x = as_vector(x, sys.n, "x")
    return -sample.lift(sample.M_eig.pinv_apply(sample.sketched_residual(x)))
