"""Solvers for the per-iteration sketched system M lam = d.

Every iterative solver starts from lam = 0. Together with d in range(M) this
keeps the iterates in range(M), so they approach the least-norm solution
M^+ d.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import StrEnum

import numpy as np

from solvers.errors import DimensionMismatchError, InconsistentSystemError, SingularInnerSystemError
from solvers.linalg import DEFAULT_RANK_TOL, PsdEigen, as_vector
from solvers.sketching import SketchDistribution, SketchKind, SketchSample

logger = logging.getLogger(__name__)

RANGE_TOL = 1e-8
# Relative residual at which CG has reached machine precision and must stop.
CG_CONVERGED_TOL = 1e-14


class InnerMethod(StrEnum):
    EXACT = "exact"
    CG = "cg"
    NESTED_SP = "nested-sp"


@dataclass(frozen=True)
class InnerSolverSpec:
    """Which inner solver to run and with how many iterations."""

    method: InnerMethod = InnerMethod.EXACT
    r: int = 1
    inner_sketch: SketchKind = SketchKind.COORDINATE
    inner_block_size: int = 1

    def __post_init__(self):
        object.__setattr__(self, "method", InnerMethod(self.method))
        object.__setattr__(self, "inner_sketch", SketchKind(self.inner_sketch))
        if self.method is not InnerMethod.EXACT and self.r < 1:
            raise ValueError(f"{self.method} inner solver needs r >= 1, got {self.r}")
        if self.inner_sketch is SketchKind.GAUSSIAN:
            raise ValueError("nested sketch-and-project supports block or coordinate inner sketches")
        if self.inner_block_size < 1:
            raise ValueError("inner_block_size must be at least 1")

    @property
    def tag(self) -> str:
        return "exact" if self.method is InnerMethod.EXACT else f"{self.method}({self.r})"

    def inner_distribution(self, q: int) -> SketchDistribution:
        if self.inner_sketch is SketchKind.COORDINATE:
            return SketchDistribution.coordinate(q)
        return SketchDistribution.block(q, min(self.inner_block_size, q))


@dataclass(frozen=True)
class InnerSolveReport:
    lam: np.ndarray
    iterations_used: int
    residual_norm: float
    method_tag: str
    exact_lambda_opt: np.ndarray | None = None


def _check_rhs(sample: SketchSample, d) -> np.ndarray:
    return as_vector(d, sample.q, "d")


def _report(sample, d, lam, iterations, tag, with_reference) -> InnerSolveReport:
    return InnerSolveReport(
        lam=lam,
        iterations_used=iterations,
        residual_norm=float(np.linalg.norm(sample.M @ lam - d)),
        method_tag=tag,
        exact_lambda_opt=sample.M_eig.pinv_apply(d) if with_reference else None,
    )


def solve_exact_least_norm(sample: SketchSample, d, range_tol: float = RANGE_TOL) -> InnerSolveReport:
    """
    Return the least-norm solution M^+ d of the sketched system.

    Raises:
        InconsistentSystemError: d has a component outside range(M)
    """
    d = _check_rhs(sample, d)
    eig = sample.M_eig
    outside = float(np.linalg.norm(d - eig.range_project(d)))
    if outside > range_tol * (1.0 + float(np.linalg.norm(d))):
        raise InconsistentSystemError(
            f"sketched right-hand side leaves range(M) by {outside:.3e}; is Ax = b consistent?"
        )
    lam = eig.pinv_apply(d)
    return InnerSolveReport(
        lam=lam,
        iterations_used=0,
        residual_norm=float(np.linalg.norm(sample.M @ lam - d)),
        method_tag=InnerMethod.EXACT.value,
        exact_lambda_opt=lam,
    )


def require_definite(sample: SketchSample) -> None:
    """
    Raises:
        SingularInnerSystemError: M is numerically singular, so CG cannot be trusted on it
    """
    eig = sample.M_eig
    if eig.rank < sample.q:
        raise SingularInnerSystemError(f"M has rank {eig.rank} < {sample.q}; use the nested-sp inner solver instead")


def solve_cg(
    sample: SketchSample,
    d,
    r: int,
    *,
    early_exit_tol: float | None = None,
    check_definite: bool = True,
    with_reference: bool = False,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> InnerSolveReport:
    """
    Run r iterations of unpreconditioned conjugate gradients from lam = 0.

    CG stops before r only when the residual has reached machine precision
    (finite termination) or, if ``early_exit_tol`` is given, when the relative
    residual drops below it.

    Args:
        sample: Realized sketch carrying M
        d: Right-hand side S^T (b - A x)
        r: Iteration count, at least 1
        early_exit_tol: Optional relative residual for an early exit
        check_definite: Verify lambda_min(M) > rank_tol * lambda_max(M) up front
            through the cached eigendecomposition. Callers that check M
            themselves, outside a timed region, turn it off
        with_reference: Also compute M^+ d for tests
        rank_tol: Relative curvature threshold for singularity detection

    Returns:
        InnerSolveReport

    Raises:
        SingularInnerSystemError: M is numerically singular
    """
    if r < 1:
        raise ValueError(f"CG needs r >= 1, got {r}")
    d = _check_rhs(sample, d)
    M = sample.M
    if check_definite:
        require_definite(sample)

    # Infinity norm bounds lambda_max(M) from above.
    scale = float(np.max(np.sum(np.abs(M), axis=1))) if M.size else 0.0
    d_norm = float(np.linalg.norm(d))
    lam = np.zeros(sample.q)
    residual = d.copy()
    direction = residual.copy()
    rs = float(residual @ residual)

    iterations = 0
    for _ in range(r):
        res_norm = np.sqrt(rs)
        if res_norm <= CG_CONVERGED_TOL * d_norm or rs == 0.0:
            break
        if early_exit_tol is not None and res_norm <= early_exit_tol * d_norm:
            break
        Mp = M @ direction
        curvature = float(direction @ Mp)
        if curvature <= rank_tol * scale * float(direction @ direction):
            raise SingularInnerSystemError(
                "CG broke down on a singular sketched matrix; use the nested-sp inner solver instead"
            )
        alpha = rs / curvature
        lam += alpha * direction
        residual -= alpha * Mp
        rs_next = float(residual @ residual)
        direction = residual + (rs_next / rs) * direction
        rs = rs_next
        iterations += 1

    return _report(sample, d, lam, iterations, f"{InnerMethod.CG}({r})", with_reference)


def _project_rows(lam, rows, rhs, rank_tol):
    """One unit-stepsize projection of lam onto {l : rows l = rhs}."""
    if rows.shape[0] == 1:
        row = rows[0]
        norm_sq = float(row @ row)
        if norm_sq == 0.0:
            return lam
        return lam - row * ((float(row @ lam) - rhs[0]) / norm_sq)
    gram = rows @ rows.T
    return lam - rows.T @ PsdEigen.of(gram, rank_tol).pinv_apply(rows @ lam - rhs)


def solve_nested_sp(
    sample: SketchSample,
    d,
    r: int,
    inner_dist: SketchDistribution | None = None,
    rng: np.random.Generator | None = None,
    *,
    with_reference: bool = False,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> InnerSolveReport:
    """
    Run r steps of sketch-and-project (B = I, unit stepsize) on M lam = d.

    Args:
        sample: Realized sketch carrying M
        d: Right-hand side S^T (b - A x)
        r: Number of inner steps, at least 1
        inner_dist: Distribution over q x q' sketches; single-coordinate when omitted
        rng: Stream the inner sketches are drawn from
        with_reference: Also compute M^+ d for tests
        rank_tol: Relative cutoff for the inner pseudoinverse

    Returns:
        InnerSolveReport
    """
    if r < 1:
        raise ValueError(f"nested sketch-and-project needs r >= 1, got {r}")
    if rng is None:
        raise ValueError("nested sketch-and-project needs a random stream")
    d = _check_rhs(sample, d)
    inner_dist = SketchDistribution.coordinate(sample.q) if inner_dist is None else inner_dist
    if inner_dist.m != sample.q:
        raise DimensionMismatchError(f"inner distribution is over {inner_dist.m} rows, M has {sample.q}")

    M = sample.M
    lam = np.zeros(sample.q)
    for _ in range(r):
        raw = inner_dist.sample_raw(rng)
        lam = _project_rows(lam, raw.transpose_apply(M), raw.transpose_apply(d), rank_tol)

    return _report(sample, d, lam, r, f"{InnerMethod.NESTED_SP}({r})", with_reference)


def solve_inner(
    spec: InnerSolverSpec,
    sample: SketchSample,
    d,
    rng: np.random.Generator | None = None,
    *,
    with_reference: bool = False,
    check_definite: bool = True,
) -> InnerSolveReport:
    """Dispatch to the inner solver named by ``spec``. CG refuses a singular M unless ``check_definite`` is off."""
    match spec.method:
        case InnerMethod.EXACT:
            return solve_exact_least_norm(sample, d)
        case InnerMethod.CG:
            return solve_cg(sample, d, spec.r, check_definite=check_definite, with_reference=with_reference)
        case InnerMethod.NESTED_SP:
            return solve_nested_sp(
                sample,
                d,
                spec.r,
                spec.inner_distribution(sample.q),
                rng,
                with_reference=with_reference,
            )


def sketched_dual_objective(sample: SketchSample, d, lam) -> float:
    """D_k(lam) = d^T lam - 1/2 lam^T M lam, the dual of the per-step projection."""
    d = _check_rhs(sample, d)
    lam = as_vector(lam, sample.q, "lam")
    return float(d @ lam - 0.5 * lam @ (sample.M @ lam))


def m_norm_sq(sample: SketchSample, v) -> float:
    v = as_vector(v, sample.q, "v")
    return max(float(v @ (sample.M @ v)), 0.0)
