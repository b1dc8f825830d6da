"""Closed-form convergence certificates and their Monte-Carlo validation."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
import pandas as pd

from solvers.errors import CertificateError, SingularInnerSystemError, ValidationError
from solvers.inner import InnerSolverSpec
from solvers.linalg import (
    DEFAULT_RANK_TOL,
    LinearSystemInstance,
    SpectralSummary,
    as_vector,
    b_norm,
    spectral_summary,
)
from solvers.primal import InexactnessMode, InexactnessModel, SolverTrace
from solvers.sketching import SketchDistribution, SketchSample, realize_sketch

logger = logging.getLogger(__name__)

EIGEN_TOL = 1e-10


class BoundKind(StrEnum):
    SIGMA_SEQUENCE = "sigma-sequence"
    SIGMA_PLATEAU = "sigma-plateau"
    PROPORTIONAL_DISTANCE = "proportional-distance"
    ORTHOGONAL_SIGMA = "orthogonal-sigma"
    ORTHOGONAL_DISTANCE = "orthogonal-distance"
    ORTHOGONAL_FVALUE = "orthogonal-fvalue"
    STRUCTURED = "structured"
    DUAL_PROPORTIONAL = "dual-proportional"

    @property
    def quantity(self) -> str:
        """What the bound controls: 'norm', 'norm_sq' or 'dual'."""
        if self in (BoundKind.SIGMA_SEQUENCE, BoundKind.SIGMA_PLATEAU):
            return "norm"
        if self is BoundKind.DUAL_PROPORTIONAL:
            return "dual"
        return "norm_sq"


def convergence_rate(omega: float, lambda_min_plus: float) -> float:
    """rho = 1 - omega (2 - omega) lambda_min_plus."""
    return 1.0 - omega * (2.0 - omega) * lambda_min_plus


def rho_table(lambda_min_plus: float, omegas: Iterable[float] | None = None) -> pd.DataFrame:
    omegas = np.linspace(0.1, 1.9, 19) if omegas is None else np.asarray(list(omegas), dtype=np.float64)
    return pd.DataFrame({"omega": omegas, "rho": [convergence_rate(w, lambda_min_plus) for w in omegas]})


@dataclass(frozen=True)
class RateCertificate:
    """
    A convergence bound with its parameters.

    ``initial_error`` is in the bound's own quantity: ||x0 - x*||_B for the
    sigma kinds, ||x0 - x*||^2_B for the squared kinds and D(y*) - D(y0) for
    the dual kind.
    """

    bound_kind: BoundKind
    rho: float
    omega: float
    lambda_min_plus: float
    initial_error: float
    q: float | None = None
    theta: float | None = None
    r: int | None = None
    sigma: float | None = None

    @classmethod
    def build(
        cls,
        bound_kind: BoundKind | str,
        *,
        lambda_min_plus: float,
        initial_error: float,
        omega: float = 1.0,
        q: float | None = None,
        theta: float | None = None,
        r: int | None = None,
        sigma: float | None = None,
    ) -> RateCertificate:
        kind = BoundKind(bound_kind)
        if not 0.0 < omega < 2.0:
            raise CertificateError(f"omega must lie in (0, 2), got {omega}")
        if not 0.0 < lambda_min_plus <= 1.0 + EIGEN_TOL:
            raise CertificateError(f"lambda_min_plus must lie in (0, 1], got {lambda_min_plus}")
        if initial_error < 0:
            raise CertificateError("initial_error must be nonnegative")
        rho = min(max(convergence_rate(omega, lambda_min_plus), 0.0), 1.0)
        sqrt_rho = np.sqrt(rho)

        def need_q(upper: float, label: str) -> None:
            if q is None:
                raise CertificateError(f"{kind} certificates need q")
            if not 0.0 <= q < upper:
                raise CertificateError(f"{kind} requires 0 <= q < {label} = {upper:.6g}, got q = {q}")

        match kind:
            case BoundKind.PROPORTIONAL_DISTANCE | BoundKind.DUAL_PROPORTIONAL:
                need_q(1.0 - sqrt_rho, "1 - sqrt(rho)")
            case BoundKind.ORTHOGONAL_DISTANCE:
                need_q(sqrt_rho, "sqrt(rho)")
            case BoundKind.ORTHOGONAL_FVALUE:
                need_q(np.sqrt(omega * (2.0 - omega)), "sqrt(omega (2 - omega))")
            case BoundKind.STRUCTURED:
                if omega != 1.0:
                    raise CertificateError("structured certificates hold for unit stepsize only")
                if theta is None or not 0.0 <= theta < 1.0:
                    raise CertificateError(f"structured certificates need 0 <= theta < 1, got {theta}")
                if r is None or r < 1:
                    raise CertificateError(f"structured certificates need r >= 1, got {r}")
            case BoundKind.SIGMA_PLATEAU:
                if sigma is None or sigma < 0:
                    raise CertificateError("plateau certificates need sigma >= 0")
            case _:
                pass
        return cls(kind, rho, omega, lambda_min_plus, initial_error, q, theta, r, sigma)

    @property
    def per_step_factor(self) -> float:
        """Contraction of the bound's quantity per iteration."""
        match self.bound_kind:
            case BoundKind.PROPORTIONAL_DISTANCE | BoundKind.DUAL_PROPORTIONAL:
                return (np.sqrt(self.rho) + self.q) ** 2
            case BoundKind.ORTHOGONAL_DISTANCE:
                return self.rho + self.q**2
            case BoundKind.ORTHOGONAL_FVALUE:
                return self.rho + self.q**2 * self.lambda_min_plus
            case BoundKind.STRUCTURED:
                return structured_rate(self.theta, self.r, self.lambda_min_plus)
            case BoundKind.ORTHOGONAL_SIGMA:
                return self.rho
            case _:
                return float(np.sqrt(self.rho))

    @property
    def plateau(self) -> float | None:
        """Level the sigma-plateau bound settles at: sigma sqrt(rho) / (1 - rho)."""
        if self.bound_kind is not BoundKind.SIGMA_PLATEAU:
            return None
        if self.rho >= 1.0:
            return np.inf
        return self.sigma * np.sqrt(self.rho) / (1.0 - self.rho)


def structured_rate(theta: float, r: int, lambda_min_plus: float) -> float:
    """1 - (1 - theta^r) lambda_min_plus."""
    return 1.0 - (1.0 - theta**r) * lambda_min_plus


def bound_sequence(cert: RateCertificate, k_max: int, sigma_seq: Sequence[float] | None = None) -> np.ndarray:
    """
    The certified upper bound at k = 0 .. k_max.

    Args:
        cert: Certificate
        k_max: Last iteration index
        sigma_seq: sigma_0 .. sigma_{k_max-1}, required by the sigma-sequence
            and orthogonal-sigma kinds

    Returns:
        Array of length k_max + 1
    """
    if k_max < 0:
        raise ValueError("k_max must be nonnegative")
    kind = cert.bound_kind
    k = np.arange(k_max + 1)

    if kind in (BoundKind.SIGMA_SEQUENCE, BoundKind.ORTHOGONAL_SIGMA):
        if sigma_seq is None:
            raise CertificateError(f"{kind} bounds need a sigma sequence")
        sigma = np.asarray(sigma_seq, dtype=np.float64)
        if sigma.shape[0] < k_max:
            raise CertificateError(f"sigma sequence has {sigma.shape[0]} entries, need {k_max}")
        squared = kind is BoundKind.ORTHOGONAL_SIGMA
        factor = cert.rho if squared else np.sqrt(cert.rho)
        noise = np.zeros(k_max + 1)
        for i in range(1, k_max + 1):
            noise[i] = factor * noise[i - 1] + (sigma[i - 1] ** 2 if squared else sigma[i - 1])
        return factor**k * cert.initial_error + noise

    if kind is BoundKind.SIGMA_PLATEAU:
        return np.sqrt(cert.rho) ** k * cert.initial_error + cert.plateau

    return cert.per_step_factor**k * cert.initial_error


def certificate_kind_for(model: InexactnessModel, *, dual: bool = False) -> BoundKind:
    """The bound that applies to runs under ``model``."""
    mode = model.mode
    if dual:
        # Dual traces carry the primal images, which follow the structured primal bound.
        if mode is InexactnessMode.STRUCTURED:
            return BoundKind.STRUCTURED
        if mode in (InexactnessMode.NONE, InexactnessMode.PROPORTIONAL_DISTANCE) and not model.is_orthogonal:
            return BoundKind.DUAL_PROPORTIONAL
        raise CertificateError(f"no dual certificate covers {mode} errors")
    match mode:
        case InexactnessMode.NONE:
            return BoundKind.PROPORTIONAL_DISTANCE
        case InexactnessMode.ABSTRACT_FIXED if model.is_orthogonal:
            return BoundKind.ORTHOGONAL_SIGMA
        case InexactnessMode.ABSTRACT_FIXED:
            return BoundKind.SIGMA_PLATEAU
        case InexactnessMode.ABSTRACT_SEQUENCE | InexactnessMode.ORTHOGONAL_RANDOM if model.is_orthogonal:
            return BoundKind.ORTHOGONAL_SIGMA
        case InexactnessMode.ABSTRACT_SEQUENCE:
            return BoundKind.SIGMA_SEQUENCE
        case InexactnessMode.PROPORTIONAL_DISTANCE if model.is_orthogonal:
            return BoundKind.ORTHOGONAL_DISTANCE
        case InexactnessMode.PROPORTIONAL_DISTANCE:
            return BoundKind.PROPORTIONAL_DISTANCE
        case InexactnessMode.PROPORTIONAL_FVALUE if model.is_orthogonal:
            return BoundKind.ORTHOGONAL_FVALUE
        case InexactnessMode.STRUCTURED:
            return BoundKind.STRUCTURED
    raise CertificateError(f"no certificate covers {mode} errors without orthogonality")


def _cg_factor(M: np.ndarray) -> tuple[float, float]:
    eigenvalues = np.linalg.eigvalsh(0.5 * (M + M.T))
    lam_min, lam_max = float(eigenvalues[0]), float(eigenvalues[-1])
    if lam_max <= 0 or lam_min <= DEFAULT_RANK_TOL * lam_max:
        raise SingularInnerSystemError("theta for CG needs every sketched matrix M to be positive definite")
    kappa = lam_max / lam_min
    root = np.sqrt(kappa)
    return ((root - 1.0) / (root + 1.0)) ** 4, kappa


@dataclass(frozen=True)
class ThetaEstimate:
    theta: float
    exact: bool
    n_samples: int
    worst_condition: float | None = None


def theta_for_cg(samples: Iterable[SketchSample]) -> float:
    """theta_CG = max over the population of ((sqrt(kappa) - 1) / (sqrt(kappa) + 1))^4."""
    theta = None
    for sample in samples:
        factor, _ = _cg_factor(sample.M)
        theta = factor if theta is None else max(theta, factor)
    if theta is None:
        raise ValueError("theta_for_cg needs at least one sketch")
    return theta


def _population(sys, dist, n_samples, rng) -> tuple[Iterable[SketchSample], bool, int]:
    if n_samples is None and dist.support_size is not None:
        return (realize_sketch(raw, dist, sys) for raw, _ in dist.support()), True, dist.support_size
    if n_samples is None or n_samples <= 0:
        raise ValueError("Monte-Carlo theta estimates need n_samples > 0")
    rng = np.random.default_rng() if rng is None else rng
    return (realize_sketch(dist.sample_raw(rng), dist, sys) for _ in range(n_samples)), False, n_samples


def theta_for_cg_distribution(
    sys: LinearSystemInstance,
    dist: SketchDistribution,
    n_samples: int | None = None,
    rng: np.random.Generator | None = None,
) -> ThetaEstimate:
    """theta_CG over the whole support when it is finite, otherwise a sampled maximum."""
    samples, exact, count = _population(sys, dist, n_samples, rng)
    theta, worst = 0.0, 1.0
    for sample in samples:
        factor, kappa = _cg_factor(sample.M)
        theta, worst = max(theta, factor), max(worst, kappa)
    return ThetaEstimate(theta=theta, exact=exact, n_samples=count, worst_condition=worst)


def theta_for_nested_sp(samples: Iterable[SketchSample], inner: InnerSolverSpec | None = None) -> float:
    """
    theta_SP: the worst exact sketch-and-project rate 1 - lambda_min_plus(W)
    of the inner system M lam = d over the population.
    """
    inner = InnerSolverSpec(method="nested-sp") if inner is None else inner
    theta = None
    for sample in samples:
        inner_sys = LinearSystemInstance.create(sample.M, np.zeros(sample.q), check_consistency=False)
        summary = spectral_summary(inner_sys, inner.inner_distribution(sample.q), exact_enumeration=True)
        rate = 1.0 - summary.lambda_min_plus
        theta = rate if theta is None else max(theta, rate)
    if theta is None:
        raise ValueError("theta_for_nested_sp needs at least one sketch")
    return theta


def cg_sharp_factor(M, r: int) -> float:
    """((lambda_{q-r} - lambda_1) / (lambda_{q-r} + lambda_1))^2, zero once r >= q."""
    M = np.asarray(M, dtype=np.float64)
    eigenvalues = np.linalg.eigvalsh(0.5 * (M + M.T))
    q = eigenvalues.shape[0]
    if eigenvalues[0] <= DEFAULT_RANK_TOL * max(eigenvalues[-1], 0.0):
        raise SingularInnerSystemError("the sharp CG factor needs a positive definite M")
    if r >= q:
        return 0.0
    upper, lowest = eigenvalues[q - r - 1], eigenvalues[0]
    return float(((upper - lowest) / (upper + lowest)) ** 2)


@dataclass(frozen=True)
class QuadraticBounds:
    f_value: float
    half_grad_norm_sq: float
    distance_sq: float
    lambda_min_plus: float
    lambda_max: float

    def holds(self, tol: float = 1e-10, *, in_range: bool = False) -> bool:
        """
        Check lambda_min_plus f <= 1/2 ||grad f||^2_B <= lambda_max f and
        f <= lambda_max / 2 ||x - x*||^2_B; with ``in_range`` also
        lambda_min_plus / 2 ||x - x*||^2_B <= f.
        """
        slack = tol * (1.0 + self.f_value + self.distance_sq)
        ok = (
            self.lambda_min_plus * self.f_value <= self.half_grad_norm_sq + slack
            and self.half_grad_norm_sq <= self.lambda_max * self.f_value + slack
            and self.f_value <= 0.5 * self.lambda_max * self.distance_sq + slack
        )
        if in_range:
            ok = ok and 0.5 * self.lambda_min_plus * self.distance_sq <= self.f_value + slack
        return ok


def expected_f_value(summary: SpectralSummary, x, x_star, sys: LinearSystemInstance) -> float:
    """f(x) = E[f_S(x)] = 1/2 (x - x*)^T E[Z] (x - x*)."""
    e = as_vector(x, sys.n, "x") - as_vector(x_star, sys.n, "x_star")
    return max(0.5 * float(e @ summary.expected_Z @ e), 0.0)


def quadratic_bounds(summary: SpectralSummary, x, x_star, sys: LinearSystemInstance) -> QuadraticBounds:
    e = as_vector(x, sys.n, "x") - as_vector(x_star, sys.n, "x_star")
    g = summary.expected_Z @ e
    return QuadraticBounds(
        f_value=expected_f_value(summary, x, x_star, sys),
        half_grad_norm_sq=0.5 * float(g @ sys.apply_B_inv(g)),
        distance_sq=b_norm(e, sys) ** 2,
        lambda_min_plus=summary.lambda_min_plus,
        lambda_max=summary.lambda_max,
    )


class Verdict(StrEnum):
    PASS = "PASS"
    FAIL = "FAIL"


@dataclass(frozen=True)
class ValidationReport:
    verdict: Verdict
    first_violation_k: int | None
    bound_kind: BoundKind
    n_trials: int
    mean: np.ndarray
    stderr: np.ndarray
    bound: np.ndarray

    @property
    def passed(self) -> bool:
        return self.verdict is Verdict.PASS

    def to_record(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "first_violation_k": self.first_violation_k,
            "bound_kind": self.bound_kind.value,
        }


def _native_series(trial, quantity: str) -> np.ndarray:
    if not isinstance(trial, SolverTrace):
        return np.asarray(trial, dtype=np.float64)
    if quantity == "norm":
        return np.sqrt(trial.abs_errors_sq)
    if quantity == "dual":
        if trial.dual_suboptimality is None:
            raise ValidationError("dual certificates need traces from the dual solver")
        return trial.dual_suboptimality
    return trial.abs_errors_sq


def validate_run(
    trials: Sequence[SolverTrace | np.ndarray],
    cert: RateCertificate,
    confidence_slack: float = 0.05,
    *,
    sigma_seq: Sequence[float] | None = None,
    min_trials: int = 30,
) -> ValidationReport:
    """
    Compare the per-k trial mean with the certified bound.

    PASS iff mean_k <= bound_k (1 + confidence_slack) + 3 stderr_k for every k.
    Traces are converted to the certificate's native quantity; plain arrays
    are taken as already converted.

    Raises:
        ValidationError: no trials, fewer than ``min_trials``, or trials of
            different lengths
    """
    if not trials:
        raise ValidationError("validate_run needs at least one trial")
    if len(trials) < min_trials:
        raise ValidationError(f"validate_run needs at least {min_trials} trials, got {len(trials)}")
    series = [_native_series(trial, cert.bound_kind.quantity) for trial in trials]
    lengths = {s.shape[0] for s in series}
    if len(lengths) != 1:
        raise ValidationError(f"trials have mismatched horizons: {sorted(lengths)}")

    data = np.vstack(series)
    n_trials, horizon = data.shape
    mean = data.mean(axis=0)
    stderr = data.std(axis=0, ddof=1) / np.sqrt(n_trials) if n_trials > 1 else np.zeros(horizon)
    bound = bound_sequence(cert, horizon - 1, sigma_seq)

    violations = np.flatnonzero(mean > bound * (1.0 + confidence_slack) + 3.0 * stderr)
    first = int(violations[0]) if violations.size else None
    verdict = Verdict.FAIL if violations.size else Verdict.PASS
    if first is not None:
        logger.info(
            "%s bound violated at k=%d: mean %.3e > bound %.3e (stderr %.1e)",
            cert.bound_kind,
            first,
            mean[first],
            bound[first],
            stderr[first],
        )
    return ValidationReport(
        verdict=verdict,
        first_violation_k=first,
        bound_kind=cert.bound_kind,
        n_trials=n_trials,
        mean=mean,
        stderr=stderr,
        bound=bound,
    )
