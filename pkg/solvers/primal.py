"""Inexact sketch-and-project iterations in the primal space.

One step draws a sketch, computes the exact projection step
x + omega * B^-1 A^T S M^+ S^T (b - A x) and adds an error eps_k. The error
comes either from an abstract injector (its norm fixed by a schedule or by
the current distance or function value) or from solving the sketched
system inexactly with an inner solver.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from enum import StrEnum

import numpy as np
import pandas as pd

from solvers.errors import DivergenceError, NotPositiveDefiniteError
from solvers.inner import InnerMethod, InnerSolveReport, InnerSolverSpec, require_definite, solve_inner
from solvers.linalg import Geometry, LinearSystemInstance, as_vector, b_inner, b_norm, project_affine
from solvers.sketching import (
    SketchDistribution,
    SketchSample,
    TrialStreams,
    draw_sketch,
    stochastic_f_value,
)

logger = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1e12


class InexactnessMode(StrEnum):
    NONE = "none"
    ABSTRACT_FIXED = "abstract-fixed"
    ABSTRACT_SEQUENCE = "abstract-sequence"
    PROPORTIONAL_DISTANCE = "proportional-distance"
    PROPORTIONAL_FVALUE = "proportional-fvalue"
    ORTHOGONAL_RANDOM = "orthogonal-random"
    STRUCTURED = "structured"


class Termination(StrEnum):
    TOL_REACHED = "tol_reached"
    MAX_ITERS = "max_iters"
    DIVERGED = "diverged"


SigmaCallback = Callable[[int, np.ndarray, SketchSample], float]


@dataclass(frozen=True)
class InexactnessModel:
    """
    How eps_k is produced at every step.

    sigma-driven modes use ``sigma`` scaled by ``decay**k``, or the explicit
    ``sigma_sequence`` when one is given, or ``sigma_callback`` above both.
    Proportional modes scale by ``q``. ``orthogonal`` makes any abstract
    error B-orthogonal to the exact step's remaining error; orthogonal-random
    always is.
    """

    mode: InexactnessMode = InexactnessMode.NONE
    sigma: float = 0.0
    sigma_sequence: tuple[float, ...] | None = None
    decay: float = 1.0
    q: float = 0.0
    inner: InnerSolverSpec | None = None
    at_boundary: bool = True
    orthogonal: bool = False
    sigma_callback: SigmaCallback | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", InexactnessMode(self.mode))
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")
        if self.q < 0:
            raise ValueError(f"q must be nonnegative, got {self.q}")
        if self.decay < 0:
            raise ValueError(f"decay must be nonnegative, got {self.decay}")
        if self.sigma_sequence is not None:
            object.__setattr__(self, "sigma_sequence", tuple(float(s) for s in self.sigma_sequence))
            if any(s < 0 for s in self.sigma_sequence):
                raise ValueError("sigma_sequence entries must be nonnegative")
        if self.mode is InexactnessMode.STRUCTURED and self.inner is None:
            object.__setattr__(self, "inner", InnerSolverSpec())

    @property
    def is_orthogonal(self) -> bool:
        return self.orthogonal or self.mode is InexactnessMode.ORTHOGONAL_RANDOM

    def sigma_at(self, k: int, x=None, sample=None) -> float:
        if self.sigma_callback is not None:
            return float(self.sigma_callback(k, x, sample))
        if self.sigma_sequence is not None:
            seq = self.sigma_sequence
            return seq[k] if k < len(seq) else seq[-1]
        if self.mode is InexactnessMode.ABSTRACT_FIXED:
            return self.sigma
        return self.sigma * self.decay**k

    def sigma_schedule(self, k_max: int) -> list[float]:
        """sigma_0 .. sigma_{k_max-1} for certificates; callbacks have no schedule."""
        if self.sigma_callback is not None:
            raise ValueError("a sigma callback has no closed-form schedule")
        return [self.sigma_at(k) for k in range(k_max)]


@dataclass(frozen=True)
class SolverConfig:
    dist: SketchDistribution
    omega: float = 1.0
    max_iters: int = 10_000
    rel_error_tol: float = 1e-5
    inexactness: InexactnessModel = field(default_factory=InexactnessModel)
    record_history: bool = False
    rng_seed: int = 0
    track_epsilon: bool = True
    divergence_threshold: float = DIVERGENCE_THRESHOLD

    def __post_init__(self):
        if not 0.0 < self.omega < 2.0:
            raise ValueError(f"omega must lie in (0, 2), got {self.omega}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.rel_error_tol < 0:
            raise ValueError("rel_error_tol must be nonnegative")


@dataclass(frozen=True)
class SolverState:
    x: np.ndarray
    k: int
    x_star: np.ndarray
    streams: TrialStreams
    last_error: np.ndarray | None = None
    last_exact: np.ndarray | None = None
    last_inner: InnerSolveReport | None = None

    @classmethod
    def start(cls, x0, x_star, cfg: SolverConfig, trial: int = 0) -> SolverState:
        return cls(
            x=np.array(x0, dtype=np.float64),
            k=0,
            x_star=np.asarray(x_star, dtype=np.float64),
            streams=TrialStreams.for_trial(cfg.rng_seed, trial),
        )


@dataclass
class SolverTrace:
    rel_errors: np.ndarray
    abs_errors_sq: np.ndarray
    wall_clock: np.ndarray
    epsilon_norms: np.ndarray
    termination: Termination
    x_final: np.ndarray
    x_star: np.ndarray
    iterates: list[np.ndarray] | None = None
    # Dual runs only: D(y*) - D(y_k) and P(x(y_k)) - D(y_k).
    dual_suboptimality: np.ndarray | None = None
    duality_gaps: np.ndarray | None = None

    @property
    def iterations(self) -> int:
        return len(self.rel_errors) - 1

    @property
    def total_wall_clock(self) -> float:
        return float(np.sum(self.wall_clock))

    def to_frame(self, trial: int = 0) -> pd.DataFrame:
        """Rows for the trace CSV: trial, k, rel_error, wall_clock_s, eps_norm."""
        return pd.DataFrame(
            {
                "trial": trial,
                "k": np.arange(len(self.rel_errors)),
                "rel_error": self.rel_errors,
                "wall_clock_s": self.wall_clock,
                "eps_norm": self.epsilon_norms,
            }
        )


def _random_error(
    norm: float,
    sys: LinearSystemInstance,
    rng: np.random.Generator,
    orthogonal_to: np.ndarray | None = None,
) -> np.ndarray:
    """A vector of B-norm ``norm`` with uniformly random direction."""
    if norm == 0.0:
        return np.zeros(sys.n)
    direction = sys.random_b_unit(rng)
    if orthogonal_to is not None:
        w_sq = b_inner(orthogonal_to, orthogonal_to, sys)
        if w_sq > 0.0:
            direction = direction - (b_inner(direction, orthogonal_to, sys) / w_sq) * orthogonal_to
        length = b_norm(direction, sys)
        if length <= 1e-14:
            return np.zeros(sys.n)
        direction = direction / length
    return norm * direction


def error_norm_target(
    model: InexactnessModel,
    k: int,
    x: np.ndarray,
    x_star: np.ndarray,
    sample: SketchSample,
    sys: LinearSystemInstance,
) -> float:
    """The B-norm the injected error may reach at step k from the point x."""
    match model.mode:
        case InexactnessMode.NONE:
            return 0.0
        case InexactnessMode.PROPORTIONAL_DISTANCE:
            return model.q * b_norm(x - x_star, sys)
        case InexactnessMode.PROPORTIONAL_FVALUE:
            return model.q * np.sqrt(2.0 * stochastic_f_value(sample, x, sys))
        case InexactnessMode.STRUCTURED:
            raise ValueError("structured inexactness comes from the inner solver, not an injector")
        case _:
            return model.sigma_at(k, x, sample)


def abstract_error(
    model: InexactnessModel,
    state: SolverState,
    sample: SketchSample,
    sys: LinearSystemInstance,
    x_exact: np.ndarray,
) -> np.ndarray:
    """
    Draw eps_k for the abstract modes.

    The norm equals the target when ``model.at_boundary`` and is uniform in
    [0, target] otherwise. Orthogonal errors are B-orthogonal to
    x_exact - x_star = (I - omega B^-1 Z)(x_k - x_star).
    """
    norm = error_norm_target(model, state.k, state.x, state.x_star, sample, sys)
    if norm == 0.0:
        return np.zeros(sys.n)
    rng = state.streams.noise
    if not model.at_boundary:
        norm *= rng.uniform()
    orthogonal_to = x_exact - state.x_star if model.is_orthogonal else None
    return _random_error(norm, sys, rng, orthogonal_to)


def exact_step_point(state: SolverState, sample: SketchSample, omega: float) -> np.ndarray:
    d = sample.sketched_residual(state.x)
    return state.x + omega * sample.lift(sample.M_eig.pinv_apply(d))


def ibasic_step(
    state: SolverState,
    sample: SketchSample,
    cfg: SolverConfig,
    sys: LinearSystemInstance,
    error: np.ndarray | None = None,
) -> SolverState:
    """
    One iBasic step: x_{k+1} = x_k - omega B^-1 A^T S M^+ S^T (A x_k - b) + eps_k.

    ``error`` overrides the configured injector, e.g. to replay a
    structured error through the abstract update.
    """
    as_vector(state.x, sys.n, "x")
    x_exact = exact_step_point(state, sample, cfg.omega)
    if error is None:
        error = abstract_error(cfg.inexactness, state, sample, sys, x_exact)
    else:
        error = as_vector(error, sys.n, "error")
    return replace(
        state,
        x=x_exact + error,
        k=state.k + 1,
        last_error=error,
        last_exact=x_exact,
        last_inner=None,
    )


def ibasic_structured_step(
    state: SolverState,
    sample: SketchSample,
    inner: InnerSolverSpec,
    cfg: SolverConfig,
    sys: LinearSystemInstance,
    *,
    bookkeeping: bool = True,
) -> SolverState:
    """
    One step of iBasic with structured inexactness.

    The inner solver approximates lam in M lam = S^T (b - A x_k) and the
    step is x_k + omega B^-1 A^T S lam. With ``bookkeeping`` the step also
    refuses a singular M for CG and, under ``cfg.track_epsilon``, records
    eps_k = omega B^-1 A^T S (lam - lam*) and the exact step point. Timed
    loops pass ``bookkeeping=False`` and call ``audit_structured_step``
    once the clock has stopped.
    """
    as_vector(state.x, sys.n, "x")
    d = sample.sketched_residual(state.x)
    report = solve_inner(
        inner,
        sample,
        d,
        state.streams.noise,
        with_reference=bookkeeping and cfg.track_epsilon,
        check_definite=bookkeeping,
    )
    x_next = state.x + cfg.omega * sample.lift(report.lam)

    error = x_exact = None
    if report.exact_lambda_opt is not None:
        x_exact = state.x + cfg.omega * sample.lift(report.exact_lambda_opt)
        error = cfg.omega * sample.lift(report.lam - report.exact_lambda_opt)
    return replace(
        state,
        x=x_next,
        k=state.k + 1,
        last_error=error,
        last_exact=x_exact,
        last_inner=report,
    )


def audit_structured_step(
    state: SolverState,
    x_prev: np.ndarray,
    sample: SketchSample,
    cfg: SolverConfig,
) -> SolverState:
    """
    The checks and records ``ibasic_structured_step`` skips without
    bookkeeping, for the step taken from ``x_prev`` with ``sample``.

    Raises:
        SingularInnerSystemError: the step used CG on a singular M
    """
    if cfg.inexactness.inner.method is InnerMethod.CG:
        require_definite(sample)
    if not cfg.track_epsilon:
        return state
    lam_star = sample.M_eig.pinv_apply(sample.sketched_residual(x_prev))
    gap = state.last_inner.lam - lam_star
    return replace(
        state,
        last_error=cfg.omega * sample.lift(gap),
        last_exact=x_prev + cfg.omega * sample.lift(lam_star),
        last_inner=replace(state.last_inner, exact_lambda_opt=lam_star),
    )


def step(
    state: SolverState,
    sample: SketchSample,
    cfg: SolverConfig,
    sys: LinearSystemInstance,
    *,
    bookkeeping: bool = True,
) -> SolverState:
    model = cfg.inexactness
    if model.mode is InexactnessMode.STRUCTURED:
        return ibasic_structured_step(state, sample, model.inner, cfg, sys, bookkeeping=bookkeeping)
    return ibasic_step(state, sample, cfg, sys)


def irbk_step(state: SolverState, sample: SketchSample, cfg: SolverConfig, sys: LinearSystemInstance) -> SolverState:
    """Inexact randomized block Kaczmarz: the B = I case."""
    if sys.geometry is not Geometry.IDENTITY:
        raise ValueError("iRBK requires B = I")
    return step(state, sample, cfg, sys)


def irbcd_step(state: SolverState, sample: SketchSample, cfg: SolverConfig, sys: LinearSystemInstance) -> SolverState:
    """Inexact randomized block coordinate descent: A SPD and B = A."""
    if sys.geometry is not Geometry.EQUAL_TO_A:
        if sys.m != sys.n or not np.array_equal(sys.B, sys.dense_A()):
            raise NotPositiveDefiniteError("iRBCD requires a symmetric positive definite A and B = A")
    return step(state, sample, cfg, sys)


def reference_solution(sys: LinearSystemInstance, x0: np.ndarray) -> np.ndarray:
    """
    The solution the iterates converge to: the B-projection of x0 onto
    {x : Ax = b}. When A has full column rank the solution set is a single
    point and a planted solution is used directly.
    """
    if sys.full_column_rank and sys.planted_solution is not None:
        return sys.planted_solution
    return project_affine(x0, sys.A, sys.b, sys).point


def run_solver(
    sys: LinearSystemInstance,
    cfg: SolverConfig,
    x0=None,
    x_star_ref=None,
    *,
    trial: int = 0,
    raise_on_divergence: bool = False,
) -> SolverTrace:
    """
    Iterate until the relative error drops to ``cfg.rel_error_tol`` or
    ``cfg.max_iters`` steps have been taken.

    Args:
        sys: System instance
        cfg: Solver configuration
        x0: Starting point, zeros when omitted
        x_star_ref: Known projection of x0 onto the solution set
        trial: Trial index selecting the random substreams
        raise_on_divergence: Raise DivergenceError instead of recording it

    Returns:
        SolverTrace
    """
    x0 = np.zeros(sys.n) if x0 is None else as_vector(x0, sys.n, "x0")
    x_star = reference_solution(sys, x0) if x_star_ref is None else as_vector(x_star_ref, sys.n, "x_star_ref")
    state = SolverState.start(x0, x_star, cfg, trial)

    initial_sq = b_norm(x0 - x_star, sys) ** 2
    rel_errors = [1.0 if initial_sq > 0 else 0.0]
    abs_errors_sq = [initial_sq]
    wall_clock = [0.0]
    epsilon_norms = [0.0]
    iterates = [state.x.copy()] if cfg.record_history else None
    logger.debug(
        "Starting %s run (trial %d): omega=%g, max_iters=%d, ||x0 - x*||_B^2=%.3e",
        cfg.inexactness.mode,
        trial,
        cfg.omega,
        cfg.max_iters,
        initial_sq,
    )

    termination = Termination.MAX_ITERS
    if rel_errors[0] <= cfg.rel_error_tol:
        termination = Termination.TOL_REACHED
    structured = cfg.inexactness.mode is InexactnessMode.STRUCTURED
    while termination is not Termination.TOL_REACHED and state.k < cfg.max_iters:
        x_prev = state.x
        started = time.perf_counter()
        sample = draw_sketch(cfg.dist, sys, state.streams.sketch)
        state = step(state, sample, cfg, sys, bookkeeping=False)
        wall_clock.append(time.perf_counter() - started)
        if structured:
            state = audit_structured_step(state, x_prev, sample, cfg)

        error_sq = b_norm(state.x - x_star, sys) ** 2
        rel = error_sq / initial_sq
        abs_errors_sq.append(error_sq)
        rel_errors.append(rel)
        epsilon_norms.append(b_norm(state.last_error, sys) if state.last_error is not None else np.nan)
        if iterates is not None:
            iterates.append(state.x.copy())

        if not np.isfinite(rel) or rel > cfg.divergence_threshold:
            termination = Termination.DIVERGED
            logger.warning("Run diverged at k=%d: relative error %.3e", state.k, rel)
            if raise_on_divergence:
                raise DivergenceError(f"relative error {rel:.3e} exceeded the divergence guard at k={state.k}")
            break
        if rel <= cfg.rel_error_tol:
            termination = Termination.TOL_REACHED

    logger.debug("Run finished after %d iterations: %s", state.k, termination)
    return SolverTrace(
        rel_errors=np.array(rel_errors),
        abs_errors_sq=np.array(abs_errors_sq),
        wall_clock=np.array(wall_clock),
        epsilon_norms=np.array(epsilon_norms),
        termination=termination,
        x_final=state.x,
        x_star=x_star,
        iterates=iterates,
    )
