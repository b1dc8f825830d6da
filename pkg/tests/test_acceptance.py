"""End-to-end checks of the convergence guarantees and the qualitative timing results.

Statistical runs are marked slow; deterministic identities run with the rest of the suite.
"""

import warnings
from pathlib import Path

import numpy as np
import pytest

from solvers.certificates import RateCertificate, Verdict, convergence_rate, theta_for_cg_distribution, validate_run
from solvers.dual import dual_objective, dual_optimum, primal_image, verify_correspondence
from solvers.inner import InnerSolverSpec, m_norm_sq, sketched_dual_objective, solve_cg, solve_nested_sp
from solvers.linalg import LinearSystemInstance, b_inner, b_norm, spectral_summary
from solvers.primal import InexactnessModel, SolverConfig, SolverState, Termination, ibasic_structured_step, run_solver
from solvers.sketching import SketchDistribution, draw_sketch, stochastic_f_value
from utils.problems import ProblemRecipe, build_instance

SPLICE = Path(__file__).resolve().parent.parent / "data" / "splice"


def gaussian_system(m, n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    z = rng.standard_normal(n)
    return LinearSystemInstance.create(A, A @ z, planted_solution=z)


@pytest.fixture(scope="module")
def kaczmarz_setup():
    sys = gaussian_system(30, 20, seed=101)
    dist = SketchDistribution.coordinate(sys.m)
    summary = spectral_summary(sys, dist)
    assert summary.exact
    return sys, dist, summary


def run_trials(sys, cfg, trials):
    return [run_solver(sys, cfg, trial=t) for t in range(trials)]


@pytest.mark.slow
def test_exact_method_meets_its_rate(kaczmarz_setup):
    sys, dist, summary = kaczmarz_setup
    traces = run_trials(sys, SolverConfig(dist=dist, max_iters=60, rel_error_tol=0.0), 500)
    cert = RateCertificate.build(
        "proportional-distance",
        lambda_min_plus=summary.lambda_min_plus,
        initial_error=float(traces[0].abs_errors_sq[0]),
        q=0.0,
    )
    report = validate_run(traces, cert, 0.05)
    assert report.verdict is Verdict.PASS, report.first_violation_k


@pytest.mark.slow
def test_proportional_errors_meet_their_rate(kaczmarz_setup):
    sys, dist, summary = kaczmarz_setup
    rho = convergence_rate(1.0, summary.lambda_min_plus)
    q = 0.5 * (1 - np.sqrt(rho))
    model = InexactnessModel(mode="proportional-distance", q=q)
    traces = run_trials(sys, SolverConfig(dist=dist, max_iters=60, rel_error_tol=0.0, inexactness=model), 500)
    cert = RateCertificate.build(
        "proportional-distance",
        lambda_min_plus=summary.lambda_min_plus,
        initial_error=float(traces[0].abs_errors_sq[0]),
        q=q,
    )
    assert validate_run(traces, cert).passed


@pytest.mark.slow
def test_fixed_errors_settle_on_a_real_plateau():
    # Rows of an orthogonal matrix give W = I / n, so the plateau is not vacuous.
    rng = np.random.default_rng(7)
    Q, _ = np.linalg.qr(rng.standard_normal((20, 20)))
    z = rng.standard_normal(20)
    sys = LinearSystemInstance.create(Q, Q @ z, planted_solution=z)
    dist = SketchDistribution.coordinate(20)
    summary = spectral_summary(sys, dist)
    sigma = 1e-2
    cert = RateCertificate.build("sigma-plateau", lambda_min_plus=summary.lambda_min_plus, initial_error=b_norm(z, sys), sigma=sigma)

    model = InexactnessModel(mode="abstract-fixed", sigma=sigma)
    traces = run_trials(sys, SolverConfig(dist=dist, max_iters=400, rel_error_tol=0.0, inexactness=model), 500)
    distances = np.sqrt(np.vstack([t.abs_errors_sq for t in traces]))
    settled = distances.mean(axis=0)[-50:].mean()
    assert settled <= 1.1 * cert.plateau
    assert settled >= 0.1 * cert.plateau


@pytest.mark.parametrize("inner", [InnerSolverSpec("cg", r=2), InnerSolverSpec("nested-sp", r=5)], ids=["cg", "nested-sp"])
def test_structured_errors_are_orthogonal(inner):
    sys = gaussian_system(100, 50, seed=102)
    assert sys.full_column_rank
    cfg = SolverConfig(dist=SketchDistribution.block(100, 10), inexactness=InexactnessModel(mode="structured", inner=inner))
    x_star = sys.planted_solution
    state = SolverState.start(np.zeros(50), x_star, cfg)
    for _ in range(100):
        distance_sq = b_norm(state.x - x_star, sys) ** 2
        state = ibasic_structured_step(state, draw_sketch(cfg.dist, sys, state.streams.sketch), inner, cfg, sys)
        # last_exact - x* = (I - B^-1 Z)(x_k - x*)
        assert abs(b_inner(state.last_exact - x_star, state.last_error, sys)) <= 1e-9 * (1 + distance_sq)


@pytest.mark.slow
def test_structured_cg_meets_its_rate():
    sys = gaussian_system(40, 25, seed=103)
    rng = np.random.default_rng(104)
    blocks = [rng.choice(40, size=8, replace=False) for _ in range(200)]
    dist = SketchDistribution.fixed_blocks(40, blocks)
    summary = spectral_summary(sys, dist)
    assert summary.exact and summary.exactness_ok
    theta = theta_for_cg_distribution(sys, dist)
    assert theta.exact

    inner = InnerSolverSpec("cg", r=2)
    model = InexactnessModel(mode="structured", inner=inner)
    cfg = SolverConfig(dist=dist, max_iters=80, rel_error_tol=0.0, inexactness=model, track_epsilon=False)
    traces = run_trials(sys, cfg, 300)
    cert = RateCertificate.build(
        "structured",
        lambda_min_plus=summary.lambda_min_plus,
        initial_error=float(traces[0].abs_errors_sq[0]),
        theta=theta.theta,
        r=2,
    )
    assert validate_run(traces, cert).passed


@pytest.mark.parametrize(
    "model",
    [InexactnessModel(), InexactnessModel(mode="structured", inner=InnerSolverSpec("cg", r=3))],
    ids=["exact", "cg"],
)
def test_primal_iterates_are_images_of_dual_iterates(model):
    sys = gaussian_system(50, 30, seed=105)
    cfg = SolverConfig(dist=SketchDistribution.block(50, 6), inexactness=model, rng_seed=9)
    report = verify_correspondence(sys, cfg, horizon=200)
    assert report.max_deviation <= 1e-8


def test_dual_suboptimality_is_half_the_primal_distance():
    sys = gaussian_system(20, 30, seed=106)
    rng = np.random.default_rng(107)
    x0 = rng.standard_normal(30)
    y_star = dual_optimum(sys, x0)
    d_star = dual_objective(y_star, sys, x0)
    for _ in range(50):
        y = rng.standard_normal(20)
        gap = d_star - dual_objective(y, sys, x0)
        half_distance = 0.5 * b_norm(primal_image(y_star, sys, x0) - primal_image(y, sys, x0), sys) ** 2
        assert abs(gap - half_distance) <= 1e-9 * (1 + abs(d_star))


def test_inner_solver_identities():
    rng = np.random.default_rng(108)
    for trial in range(100):
        m, n = rng.integers(10, 30), rng.integers(5, 20)
        sys = gaussian_system(int(m), int(n), seed=1000 + trial)
        sample = draw_sketch(SketchDistribution.block(sys.m, int(rng.integers(1, 6))), sys, rng)
        x = rng.standard_normal(sys.n)
        d = sample.sketched_residual(x)
        lam_star = sample.M_eig.pinv_apply(d)
        # ||lam*||_M^2 = 2 f_S(x)
        f = stochastic_f_value(sample, x, sys)
        assert abs(m_norm_sq(sample, lam_star) - 2 * f) <= 1e-10 * (1 + f)

        lam = solve_nested_sp(sample, d, 2, rng=rng).lam if trial % 2 else solve_cg(sample, d, 1).lam
        # ||eps||_B^2 = ||lam - lam*||_M^2 with omega = 1
        eps = sample.lift(lam - lam_star)
        err = m_norm_sq(sample, lam - lam_star)
        assert abs(b_norm(eps, sys) ** 2 - err) <= 1e-10 * (1 + err)
        # D(lam*) - D(lam) = 1/2 ||lam - lam*||_M^2
        gap = sketched_dual_objective(sample, d, lam_star) - sketched_dual_objective(sample, d, lam)
        assert abs(gap - 0.5 * err) <= 1e-10 * (1 + abs(gap))


def timed_run(sys, cfg):
    trace = run_solver(sys, cfg)
    return trace, trace.total_wall_clock


@pytest.mark.slow
def test_larger_blocks_need_fewer_iterations():
    sys = build_instance(ProblemRecipe(source="dense-gaussian", m=1000, n=700, seed=11))
    rbk = run_solver(sys, SolverConfig(dist=SketchDistribution.block(1000, 300), max_iters=5000))
    rk = run_solver(sys, SolverConfig(dist=SketchDistribution.coordinate(1000), max_iters=20 * rbk.iterations + 1000))
    assert rbk.termination is Termination.TOL_REACHED
    assert rk.iterations > rbk.iterations


@pytest.mark.slow
def test_inexact_coordinate_descent_is_faster_at_large_blocks():
    sys = build_instance(ProblemRecipe(source="gram-gaussian", m=1000, n=700, b_matrix="equal-to-A", seed=12))
    dist = SketchDistribution.block(sys.m, 450)
    exact, exact_time = timed_run(sys, SolverConfig(dist=dist, max_iters=20_000))
    model = InexactnessModel(mode="structured", inner=InnerSolverSpec("cg", r=5))
    inexact, inexact_time = timed_run(
        sys, SolverConfig(dist=dist, max_iters=20_000, inexactness=model, track_epsilon=False)
    )
    assert exact.termination is Termination.TOL_REACHED
    assert inexact.termination is Termination.TOL_REACHED
    assert inexact.iterations >= exact.iterations
    if inexact_time >= exact_time:
        warnings.warn(
            f"iRBCD took {inexact_time:.2f} s against {exact_time:.2f} s for RBCD; timings are machine-dependent",
            stacklevel=1,
        )


def compare_block_kaczmarz(sys, d, label):
    dist = SketchDistribution.block(sys.m, d)
    exact, exact_time = timed_run(sys, SolverConfig(dist=dist, max_iters=20_000))
    model = InexactnessModel(mode="structured", inner=InnerSolverSpec("cg", r=5))
    inexact, inexact_time = timed_run(
        sys, SolverConfig(dist=dist, max_iters=20_000, inexactness=model, track_epsilon=False)
    )
    assert exact.termination is Termination.TOL_REACHED
    assert inexact.termination is Termination.TOL_REACHED
    assert inexact.iterations >= exact.iterations
    if inexact_time >= exact_time:
        warnings.warn(
            f"iRBK took {inexact_time:.2f} s against {exact_time:.2f} s for RBK on {label}; "
            "timings are machine-dependent",
            stacklevel=2,
        )


@pytest.mark.slow
def test_inexact_block_kaczmarz_is_faster_on_sparse_problems():
    recipe = ProblemRecipe(source="sparse-gaussian", m=1000, n=700, density=0.01, drop_empty_rows=True, seed=13)
    compare_block_kaczmarz(build_instance(recipe), 300, "sparse-gaussian")


@pytest.mark.slow
@pytest.mark.skipif(not SPLICE.exists(), reason="LIBSVM splice file not present at data/splice")
def test_inexact_block_kaczmarz_is_faster_on_splice():
    recipe = ProblemRecipe(source="libsvm-file", path=str(SPLICE), n_features=60, row_normalize=True, drop_empty_rows=True)
    sys = build_instance(recipe)
    assert sys.n == 60
    # Blocks must stay well below n = 60 rows for M to be definite.
    compare_block_kaczmarz(sys, 20, "splice")


def test_understated_certificates_fail(kaczmarz_setup):
    sys, dist, summary = kaczmarz_setup
    model = InexactnessModel(mode="proportional-distance", q=0.3)
    traces = run_trials(sys, SolverConfig(dist=dist, max_iters=30, rel_error_tol=0.0, inexactness=model, rng_seed=3), 30)
    cert = RateCertificate.build(
        "proportional-distance",
        lambda_min_plus=summary.lambda_min_plus,
        initial_error=float(traces[0].abs_errors_sq[0]),
        q=0.0,
    )
    report = validate_run(traces, cert)
    assert report.verdict is Verdict.FAIL
    assert report.first_violation_k is not None
