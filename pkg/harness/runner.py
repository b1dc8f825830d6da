"""Run configured experiments and write their trace and summary files."""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from harness.config import ConfigError, ExperimentConfig
from solvers.certificates import (
    BoundKind,
    RateCertificate,
    ValidationReport,
    certificate_kind_for,
    rho_table,
    theta_for_cg_distribution,
    theta_for_nested_sp,
    validate_run,
)
from solvers.dual import run_dual_solver
from solvers.errors import CertificateError, ValidationError
from solvers.inner import InnerMethod
from solvers.linalg import MAX_ENUMERATION, LinearSystemInstance, SpectralSummary, b_norm, spectral_summary
from solvers.primal import SolverConfig, SolverTrace, Termination, reference_solution, run_solver
from solvers.sketching import SketchDistribution, make_stream, realize_sketch
from utils.db import get_duckdb_connection, iteration_stats
from utils.problems import build_instance

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.jsonl"
WALL_CLOCK_NOTE = "environment-dependent: compare wall-clock times only within one machine"
# Stream path reserved for spectral estimates, away from trial indices.
SPECTRUM_STREAM = 2**31 - 1


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    traces: list[SolverTrace]
    trace_path: Path
    summary_path: Path
    summary: dict
    validation: ValidationReport | None = None

    @property
    def exit_status(self) -> int:
        """0 iff no trial diverged and any requested validation passed."""
        if any(t.termination is Termination.DIVERGED for t in self.traces):
            return 1
        if self.validation is not None and not self.validation.passed:
            return 1
        return 0


def run_trials(
    cfg: ExperimentConfig,
    sys: LinearSystemInstance,
    solver_cfg: SolverConfig | None = None,
) -> list[SolverTrace]:
    """
    Run ``cfg.run.trials`` independent trials, in a thread pool when
    ``cfg.run.workers > 1``. Trial i draws from substreams (seed, i), so the
    traces do not depend on the worker count.
    """
    solver_cfg = cfg.solver_config(sys.m) if solver_cfg is None else solver_cfg
    x0 = np.zeros(sys.n)
    x_star = None if cfg.dual else reference_solution(sys, x0)

    def work(trial: int) -> SolverTrace:
        if cfg.dual:
            return run_dual_solver(sys, solver_cfg, x0, trial=trial)
        return run_solver(sys, solver_cfg, x0, x_star, trial=trial)

    trials = range(cfg.run.trials)
    if cfg.run.workers == 1:
        return [work(trial) for trial in trials]

    traces: dict[int, SolverTrace] = {}
    with ThreadPoolExecutor(max_workers=cfg.run.workers) as executor:
        futures = {executor.submit(work, trial): trial for trial in trials}
        for future in as_completed(futures):
            traces[futures[future]] = future.result()
    return [traces[trial] for trial in trials]


def write_traces(traces: list[SolverTrace], path: Path) -> None:
    frame = pd.concat([trace.to_frame(trial) for trial, trace in enumerate(traces)], ignore_index=True)
    frame.to_csv(path, index=False, float_format="%.17g")


def append_summary(record: dict, path: Path) -> None:
    pd.DataFrame([record]).to_json(path, orient="records", lines=True, mode="a")


def spectrum_for(cfg: ExperimentConfig, sys: LinearSystemInstance, dist: SketchDistribution) -> SpectralSummary:
    """Exact enumeration when the support is small enough, otherwise Monte-Carlo."""
    support = dist.support_size
    if support is not None and support <= MAX_ENUMERATION:
        return spectral_summary(sys, dist, exact_enumeration=True)
    return spectral_summary(
        sys,
        dist,
        n_samples=cfg.validate.spectrum_samples,
        rng=make_stream(cfg.seed, SPECTRUM_STREAM),
    )


def structured_theta(cfg: ExperimentConfig, sys: LinearSystemInstance, dist: SketchDistribution) -> float:
    inner = cfg.inner
    if inner.method is InnerMethod.EXACT:
        return 0.0
    support = dist.support_size
    if support is None:
        raise CertificateError("structured certificates need a sketch distribution with finite support")
    enumerable = support <= MAX_ENUMERATION
    rng = make_stream(cfg.seed, SPECTRUM_STREAM, 1)
    if inner.method is InnerMethod.CG:
        estimate = theta_for_cg_distribution(
            sys, dist, n_samples=None if enumerable else cfg.validate.spectrum_samples, rng=rng
        )
        if not estimate.exact:
            logger.warning("theta for CG is a maximum over %d sampled sketches", estimate.n_samples)
        return estimate.theta
    if enumerable:
        samples = (realize_sketch(raw, dist, sys) for raw, _ in dist.support())
    else:
        samples = (realize_sketch(dist.sample_raw(rng), dist, sys) for _ in range(cfg.validate.spectrum_samples))
    return theta_for_nested_sp(samples, inner)


def build_certificate(
    cfg: ExperimentConfig,
    sys: LinearSystemInstance,
    solver_cfg: SolverConfig,
) -> tuple[RateCertificate, list[float] | None]:
    """The certificate for the configured run plus the sigma schedule it needs, if any."""
    model = cfg.inexactness
    kind = (
        certificate_kind_for(model, dual=cfg.dual)
        if cfg.validate.certificate == "auto"
        else BoundKind(cfg.validate.certificate)
    )
    summary = spectrum_for(cfg, sys, solver_cfg.dist)
    x0 = np.zeros(sys.n)
    distance = b_norm(x0 - reference_solution(sys, x0), sys)
    match kind.quantity:
        case "norm":
            initial_error = distance
        case "dual":
            # D(y*) - D(0) = 1/2 ||x0 - x*||^2_B
            initial_error = 0.5 * distance**2
        case _:
            initial_error = distance**2

    theta = r = None
    if kind is BoundKind.STRUCTURED:
        theta, r = structured_theta(cfg, sys, solver_cfg.dist), cfg.inner.r
    q = model.q if kind not in (BoundKind.STRUCTURED, BoundKind.SIGMA_PLATEAU, BoundKind.SIGMA_SEQUENCE) else None
    cert = RateCertificate.build(
        kind,
        lambda_min_plus=summary.lambda_min_plus,
        initial_error=initial_error,
        omega=solver_cfg.omega,
        q=q,
        theta=theta,
        r=r,
        sigma=model.sigma if kind is BoundKind.SIGMA_PLATEAU else None,
    )
    sigma_seq = None
    if kind in (BoundKind.SIGMA_SEQUENCE, BoundKind.ORTHOGONAL_SIGMA):
        sigma_seq = model.sigma_schedule(solver_cfg.max_iters)
    logger.info(
        "Certificate %s: lambda_min_plus=%.6g, rho=%.6g, per-step factor=%.6g",
        kind,
        cert.lambda_min_plus,
        cert.rho,
        cert.per_step_factor,
    )
    return cert, sigma_seq


def run_experiment(cfg: ExperimentConfig, *, validate: bool = False) -> ExperimentResult:
    """
    Build the problem, run every trial and write the trace CSV and a summary record.

    With ``validate`` the trials run the full ``max_iters`` horizon
    (tolerance 0) and the mean error is checked against the certificate.

    Raises:
        ConfigError: the configuration cannot be certified or validated
    """
    if validate:
        cfg.check_certifiable()
        if cfg.run.trials < cfg.validate.min_trials:
            raise ConfigError("run.trials", f"validation needs at least {cfg.validate.min_trials} trials")

    sys = build_instance(cfg.problem)
    solver_cfg = cfg.solver_config(sys.m, rel_error_tol=0.0 if validate else None)

    certificate = sigma_seq = None
    if validate:
        try:
            certificate, sigma_seq = build_certificate(cfg, sys, solver_cfg)
        except (CertificateError, ValueError) as e:
            raise ConfigError("validate.certificate", str(e)) from e

    logger.info("Running %s: %d trial(s) on %s", cfg.method, cfg.run.trials, sys.label)
    traces = run_trials(cfg, sys, solver_cfg)

    output_dir = Path(cfg.run.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    trace_path = output_dir / f"{cfg.name}_trace.csv"
    write_traces(traces, trace_path)

    report = None
    if certificate is not None:
        if any(t.termination is Termination.DIVERGED for t in traces):
            raise ValidationError("a trial diverged; its trace cannot be checked against the certificate")
        report = validate_run(
            traces,
            certificate,
            cfg.validate.confidence_slack,
            sigma_seq=sigma_seq,
            min_trials=cfg.validate.min_trials,
        )
        logger.info("Validation %s for %s", report.verdict, report.bound_kind)

    stats = iteration_stats(get_duckdb_connection(), trace_path)
    summary = {
        "method": cfg.method.value,
        "trials": cfg.run.trials,
        **stats,
        "terminations": dict(Counter(t.termination.value for t in traces)),
        "wall_clock_note": WALL_CLOCK_NOTE,
        "validation": report.to_record() if report is not None else None,
    }
    summary_path = output_dir / SUMMARY_FILE
    append_summary(summary, summary_path)
    return ExperimentResult(cfg, traces, trace_path, summary_path, summary, report)


def spectrum_report(cfg: ExperimentConfig) -> tuple[SpectralSummary, pd.DataFrame]:
    """lambda_min_plus and lambda_max of the configured sketch law, and rho over an omega grid."""
    sys = build_instance(cfg.problem)
    summary = spectrum_for(cfg, sys, cfg.sketch_distribution(sys.m))
    return summary, rho_table(summary.lambda_min_plus)
