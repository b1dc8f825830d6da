"""Inexact stochastic dual subspace ascent and the primal-dual map.

The dual iterates y_k live in R^m and start at zero. Their primal images
x(y) = x0 + B^-1 A^T y reproduce the primal iterates when both methods see
the same sketches and the primal error is eps_k = B^-1 A^T eps^d_k.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from solvers.errors import CorrespondenceError, DivergenceError
from solvers.inner import InnerMethod, InnerSolveReport, InnerSolverSpec, require_definite, solve_inner
from solvers.linalg import LinearSystemInstance, PsdEigen, as_vector, b_norm
from solvers.primal import (
    InexactnessMode,
    SolverConfig,
    SolverState,
    SolverTrace,
    Termination,
    error_norm_target,
    ibasic_step,
    ibasic_structured_step,
    reference_solution,
)
from solvers.sketching import SketchSample, TrialStreams, draw_sketch

logger = logging.getLogger(__name__)

CORRESPONDENCE_TOL = 1e-8


def primal_image(y, sys: LinearSystemInstance, x0) -> np.ndarray:
    """x(y) = x0 + B^-1 A^T y."""
    y = as_vector(y, sys.m, "y")
    x0 = as_vector(x0, sys.n, "x0")
    return x0 + sys.apply_B_inv(sys.apply_AT(y))


def dual_objective(y, sys: LinearSystemInstance, x0) -> float:
    """D(y) = (b - A x0)^T y - 1/2 ||A^T y||^2_{B^-1}."""
    y = as_vector(y, sys.m, "y")
    x0 = as_vector(x0, sys.n, "x0")
    v = sys.apply_AT(y)
    return float((sys.b - sys.apply_A(x0)) @ y - 0.5 * v @ sys.apply_B_inv(v))


def dual_optimum(sys: LinearSystemInstance, x0) -> np.ndarray:
    """A maximizer of D: y* = (A B^-1 A^T)^+ (b - A x0)."""
    x0 = as_vector(x0, sys.n, "x0")
    A = sys.dense_A()
    gram = A @ sys.apply_B_inv(A.T)
    return PsdEigen.of(0.5 * (gram + gram.T)).pinv_apply(sys.b - A @ x0)


def primal_objective(x, sys: LinearSystemInstance, x0) -> float:
    """P(x) = 1/2 ||x - x0||^2_B."""
    x = as_vector(x, sys.n, "x")
    return 0.5 * b_norm(x - as_vector(x0, sys.n, "x0"), sys) ** 2


def duality_gap(y, sys: LinearSystemInstance, x0) -> float:
    return primal_objective(primal_image(y, sys, x0), sys, x0) - dual_objective(y, sys, x0)


@dataclass(frozen=True)
class DualState:
    y: np.ndarray
    x0: np.ndarray
    image: np.ndarray
    k: int
    x_star: np.ndarray
    streams: TrialStreams
    last_dual_error: np.ndarray | None = None
    last_primal_error: np.ndarray | None = None
    last_inner: InnerSolveReport | None = None

    @classmethod
    def start(cls, sys: LinearSystemInstance, x0, x_star, cfg: SolverConfig, trial: int = 0) -> DualState:
        x0 = as_vector(x0, sys.n, "x0").copy()
        return cls(
            y=np.zeros(sys.m),
            x0=x0,
            image=x0.copy(),
            k=0,
            x_star=np.asarray(x_star, dtype=np.float64),
            streams=TrialStreams.for_trial(cfg.rng_seed, trial),
        )

    def exact_image(self, sys: LinearSystemInstance) -> np.ndarray:
        return primal_image(self.y, sys, self.x0)


def dual_error(
    cfg: SolverConfig,
    state: DualState,
    sample: SketchSample,
    sys: LinearSystemInstance,
    image_exact: np.ndarray,
) -> np.ndarray:
    """
    Draw eps^d in R^m whose primal image B^-1 A^T eps^d has the B-norm the
    configured injector asks for at the current primal image.

    Orthogonal modes make A^T eps^d orthogonal to image_exact - x_star, which
    is B-orthogonality of the primal image.
    """
    model = cfg.inexactness
    norm = error_norm_target(model, state.k, state.image, state.x_star, sample, sys)
    if norm == 0.0:
        return np.zeros(sys.m)
    rng = state.streams.noise
    if not model.at_boundary:
        norm *= rng.uniform()
    u = rng.standard_normal(sys.m)
    if model.is_orthogonal:
        a_w = sys.apply_A(image_exact - state.x_star)
        w_sq = float(a_w @ a_w)
        if w_sq > 0.0:
            u = u - (float(u @ a_w) / w_sq) * a_w
    length = b_norm(sys.apply_B_inv(sys.apply_AT(u)), sys)
    if length <= 1e-14:
        return np.zeros(sys.m)
    return (norm / length) * u


def isdsa_step(
    state: DualState,
    sample: SketchSample,
    cfg: SolverConfig,
    sys: LinearSystemInstance,
    error=None,
) -> DualState:
    """
    One iSDSA step: y_{k+1} = y_k + omega S M^+ S^T (b - A x(y_k)) + eps^d_k.

    The primal image is updated incrementally alongside y.
    """
    d = sample.sketched_residual(state.image)
    lam = sample.M_eig.pinv_apply(d)
    image_exact = state.image + cfg.omega * sample.lift(lam)
    if error is None:
        error = dual_error(cfg, state, sample, sys, image_exact)
    else:
        error = as_vector(error, sys.m, "error")
    primal_error = sys.apply_B_inv(sys.apply_AT(error))
    return replace(
        state,
        y=state.y + cfg.omega * sample.raw.apply(lam, sys.m) + error,
        image=image_exact + primal_error,
        k=state.k + 1,
        last_dual_error=error,
        last_primal_error=primal_error,
        last_inner=None,
    )


def isdsa_structured_step(
    state: DualState,
    sample: SketchSample,
    inner: InnerSolverSpec,
    cfg: SolverConfig,
    sys: LinearSystemInstance,
    *,
    bookkeeping: bool = True,
) -> DualState:
    """
    One iSDSA step with lam approximated by an inner solver started at zero.

    ``bookkeeping`` works as in ``ibasic_structured_step``; timed loops
    follow a step without it by ``audit_dual_structured_step``.
    """
    d = sample.sketched_residual(state.image)
    report = solve_inner(
        inner,
        sample,
        d,
        state.streams.noise,
        with_reference=bookkeeping and cfg.track_epsilon,
        check_definite=bookkeeping,
    )

    dual_err = primal_err = None
    if report.exact_lambda_opt is not None:
        gap = report.lam - report.exact_lambda_opt
        dual_err = cfg.omega * sample.raw.apply(gap, sys.m)
        primal_err = cfg.omega * sample.lift(gap)
    return replace(
        state,
        y=state.y + cfg.omega * sample.raw.apply(report.lam, sys.m),
        image=state.image + cfg.omega * sample.lift(report.lam),
        k=state.k + 1,
        last_dual_error=dual_err,
        last_primal_error=primal_err,
        last_inner=report,
    )


def audit_dual_structured_step(
    state: DualState,
    image_prev: np.ndarray,
    sample: SketchSample,
    cfg: SolverConfig,
    sys: LinearSystemInstance,
) -> DualState:
    """
    Dual counterpart of ``audit_structured_step``.

    Raises:
        SingularInnerSystemError: the step used CG on a singular M
    """
    if cfg.inexactness.inner.method is InnerMethod.CG:
        require_definite(sample)
    if not cfg.track_epsilon:
        return state
    lam_star = sample.M_eig.pinv_apply(sample.sketched_residual(image_prev))
    gap = state.last_inner.lam - lam_star
    return replace(
        state,
        last_dual_error=cfg.omega * sample.raw.apply(gap, sys.m),
        last_primal_error=cfg.omega * sample.lift(gap),
        last_inner=replace(state.last_inner, exact_lambda_opt=lam_star),
    )


def dual_step(
    state: DualState,
    sample: SketchSample,
    cfg: SolverConfig,
    sys: LinearSystemInstance,
    *,
    bookkeeping: bool = True,
) -> DualState:
    model = cfg.inexactness
    if model.mode is InexactnessMode.STRUCTURED:
        return isdsa_structured_step(state, sample, model.inner, cfg, sys, bookkeeping=bookkeeping)
    return isdsa_step(state, sample, cfg, sys)


def run_dual_solver(
    sys: LinearSystemInstance,
    cfg: SolverConfig,
    x0=None,
    *,
    trial: int = 0,
    raise_on_divergence: bool = False,
) -> SolverTrace:
    """
    Run iSDSA and report its primal images.

    The trace carries the same relative-error metric as the primal solver
    plus the dual suboptimality D(y*) - D(y_k) and the duality gap at every k.
    """
    x0 = np.zeros(sys.n) if x0 is None else as_vector(x0, sys.n, "x0")
    x_star = reference_solution(sys, x0)
    state = DualState.start(sys, x0, x_star, cfg, trial)
    d_star = primal_objective(x_star, sys, x0)

    initial_sq = b_norm(x0 - x_star, sys) ** 2
    rel_errors = [1.0 if initial_sq > 0 else 0.0]
    abs_errors_sq = [initial_sq]
    wall_clock = [0.0]
    epsilon_norms = [0.0]
    suboptimality = [d_star]
    gaps = [duality_gap(state.y, sys, x0)]

    termination = Termination.TOL_REACHED if rel_errors[0] <= cfg.rel_error_tol else Termination.MAX_ITERS
    structured = cfg.inexactness.mode is InexactnessMode.STRUCTURED
    while termination is not Termination.TOL_REACHED and state.k < cfg.max_iters:
        image_prev = state.image
        started = time.perf_counter()
        sample = draw_sketch(cfg.dist, sys, state.streams.sketch)
        state = dual_step(state, sample, cfg, sys, bookkeeping=False)
        wall_clock.append(time.perf_counter() - started)
        if structured:
            state = audit_dual_structured_step(state, image_prev, sample, cfg, sys)

        error_sq = b_norm(state.image - x_star, sys) ** 2
        rel = error_sq / initial_sq
        rel_errors.append(rel)
        abs_errors_sq.append(error_sq)
        epsilon_norms.append(
            b_norm(state.last_primal_error, sys) if state.last_primal_error is not None else np.nan
        )
        dual_value = dual_objective(state.y, sys, x0)
        suboptimality.append(d_star - dual_value)
        gaps.append(primal_objective(state.image, sys, x0) - dual_value)

        if not np.isfinite(rel) or rel > cfg.divergence_threshold:
            termination = Termination.DIVERGED
            logger.warning("Dual run diverged at k=%d: relative error %.3e", state.k, rel)
            if raise_on_divergence:
                raise DivergenceError(f"relative error {rel:.3e} exceeded the divergence guard at k={state.k}")
            break
        if rel <= cfg.rel_error_tol:
            termination = Termination.TOL_REACHED

    logger.debug("Dual run finished after %d iterations: %s", state.k, termination)
    return SolverTrace(
        rel_errors=np.array(rel_errors),
        abs_errors_sq=np.array(abs_errors_sq),
        wall_clock=np.array(wall_clock),
        epsilon_norms=np.array(epsilon_norms),
        termination=termination,
        x_final=state.image,
        x_star=x_star,
        dual_suboptimality=np.array(suboptimality),
        duality_gaps=np.array(gaps),
    )


@dataclass(frozen=True)
class CorrespondenceReport:
    horizon: int
    deviations: np.ndarray
    tolerance: float

    @property
    def max_deviation(self) -> float:
        return float(np.max(self.deviations)) if self.deviations.size else 0.0

    @property
    def ok(self) -> bool:
        return self.max_deviation <= self.tolerance


def verify_correspondence(
    sys: LinearSystemInstance,
    cfg: SolverConfig,
    x0=None,
    horizon: int = 200,
    *,
    trial: int = 0,
    strict: bool = True,
) -> CorrespondenceReport:
    """
    Run iBasic and iSDSA side by side on identical sketch sequences and
    compare x_k with x0 + B^-1 A^T y_k.

    Abstract dual errors are passed to the primal method as
    eps_k = B^-1 A^T eps^d_k. Structured runs draw any inner randomness from
    identical streams, so the relation holds by construction.

    Raises:
        CorrespondenceError: ``strict`` and the deviation exceeds
            1e-8 * (1 + ||x0||)
    """
    x0 = np.zeros(sys.n) if x0 is None else as_vector(x0, sys.n, "x0")
    x_star = reference_solution(sys, x0)
    primal = SolverState.start(x0, x_star, cfg, trial)
    dual = DualState.start(sys, x0, x_star, cfg, trial)
    structured = cfg.inexactness.mode is InexactnessMode.STRUCTURED

    deviations = [0.0]
    for _ in range(horizon):
        # Each method draws from its own stream; equal seeds give equal sketches.
        dual_sample = draw_sketch(cfg.dist, sys, dual.streams.sketch)
        primal_sample = draw_sketch(cfg.dist, sys, primal.streams.sketch)
        dual = dual_step(dual, dual_sample, cfg, sys)
        if structured:
            primal = ibasic_structured_step(primal, primal_sample, cfg.inexactness.inner, cfg, sys)
        else:
            primal = ibasic_step(primal, primal_sample, cfg, sys, error=dual.last_primal_error)
        deviations.append(float(np.linalg.norm(primal.x - dual.exact_image(sys))))

    report = CorrespondenceReport(
        horizon=horizon,
        deviations=np.array(deviations),
        tolerance=CORRESPONDENCE_TOL * (1.0 + float(np.linalg.norm(x0))),
    )
    if strict and not report.ok:
        raise CorrespondenceError(
            f"primal iterates left the primal image of the dual iterates: "
            f"max deviation {report.max_deviation:.3e} > {report.tolerance:.1e}"
        )
    return report
