"""Experiment configuration: TOML files with command-line overrides."""

from __future__ import annotations

import os
import tomllib
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path

from solvers.inner import InnerMethod, InnerSolverSpec
from solvers.primal import InexactnessMode, InexactnessModel, SolverConfig
from solvers.sketching import SketchDistribution, SketchKind
from utils.problems import BMatrixRule, ProblemRecipe, ProblemSource

OUTPUT_DIR_ENV = "INEXACT_SP_OUTPUT_DIR"
REQUIRED = object()


class ConfigError(ValueError):
    """An invalid configuration value; ``field`` is the dotted key path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class Method(StrEnum):
    RK = "rk"
    RBK = "rbk"
    IRBK = "irbk"
    RCD = "rcd"
    RBCD = "rbcd"
    IRBCD = "irbcd"
    IBASIC = "ibasic"
    IBASIC_STRUCTURED = "ibasic-structured"
    SDSA = "sdsa"
    ISDSA = "isdsa"
    ISDSA_STRUCTURED = "isdsa-structured"


KACZMARZ_METHODS = {Method.RK, Method.RBK, Method.IRBK}
COORDINATE_METHODS = {Method.RCD, Method.RBCD, Method.IRBCD}
STRUCTURED_METHODS = {Method.IRBK, Method.IRBCD, Method.IBASIC_STRUCTURED, Method.ISDSA_STRUCTURED}
DUAL_METHODS = {Method.SDSA, Method.ISDSA, Method.ISDSA_STRUCTURED}
EXACT_METHODS = {Method.RK, Method.RBK, Method.RCD, Method.RBCD, Method.SDSA}

TOP_LEVEL = {"method": (str, REQUIRED), "seed": (int, 0)}
SECTIONS = {
    "problem": {
        "source": (str, REQUIRED),
        "m": (int, None),
        "n": (int, None),
        "density": (float, None),
        "path": (str, None),
        "n_features": (int, None),
        "row_normalize": (bool, False),
        "drop_empty_rows": (bool, False),
        "rhs": (str, "planted-gaussian"),
        "rhs_values": (list, None),
        "b_matrix": (str, "identity"),
    },
    "solver": {
        "d": (int, 1),
        "omega": (float, 1.0),
        "tol": (float, 1e-5),
        "max_iters": (int, 10_000),
        "sketch": (str, "block"),
        "record_history": (bool, False),
        "track_epsilon": (bool, True),
    },
    "inner": {
        "kind": (str, "exact"),
        "r": (int, 1),
        "inner_sketch": (str, "coordinate"),
        "inner_d": (int, 1),
    },
    "inexactness": {
        "mode": (str, "none"),
        "sigma": (float, 0.0),
        "decay": (float, 1.0),
        "q": (float, 0.0),
        "at_boundary": (bool, True),
        "orthogonal": (bool, False),
    },
    "run": {
        "trials": (int, 1),
        "workers": (int, 1),
        "output_dir": (str, None),
    },
    "validate": {
        "certificate": (str, "auto"),
        "confidence_slack": (float, 0.05),
        "spectrum_samples": (int, 20_000),
        "min_trials": (int, 30),
    },
}
SKETCH_NAMES = {"block": SketchKind.BLOCK, "coordinate": SketchKind.COORDINATE, "gaussian": SketchKind.GAUSSIAN}

# Command-line flag -> dotted config key.
OVERRIDE_KEYS = {
    "tol": "solver.tol",
    "omega": "solver.omega",
    "max_iters": "solver.max_iters",
    "trials": "run.trials",
    "seed": "seed",
    "d": "solver.d",
    "r": "inner.r",
    "workers": "run.workers",
    "output_dir": "run.output_dir",
}


def _check_type(value, expected, path: str):
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if not isinstance(value, expected):
        raise ConfigError(path, f"expected {expected.__name__}, got {value!r}")
    return value


def _read_fields(raw: dict, schema: dict, prefix: str) -> dict:
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"{prefix}{unknown[0]}", "unknown key")
    values = {}
    for key, (expected, default) in schema.items():
        path = f"{prefix}{key}"
        if key in raw:
            values[key] = _check_type(raw[key], expected, path)
        elif default is REQUIRED:
            raise ConfigError(path, "missing required key")
        else:
            values[key] = default
    return values


@dataclass(frozen=True)
class SolverSettings:
    d: int = 1
    omega: float = 1.0
    tol: float = 1e-5
    max_iters: int = 10_000
    sketch: SketchKind = SketchKind.BLOCK
    record_history: bool = False
    track_epsilon: bool = True


@dataclass(frozen=True)
class RunSettings:
    trials: int = 1
    workers: int = 1
    output_dir: Path = Path("runs")


@dataclass(frozen=True)
class ValidateSettings:
    certificate: str = "auto"
    confidence_slack: float = 0.05
    spectrum_samples: int = 20_000
    min_trials: int = 30


@dataclass(frozen=True)
class ExperimentConfig:
    method: Method
    problem: ProblemRecipe
    seed: int = 0
    solver: SolverSettings = field(default_factory=SolverSettings)
    inner: InnerSolverSpec = field(default_factory=InnerSolverSpec)
    inexactness: InexactnessModel = field(default_factory=InexactnessModel)
    run: RunSettings = field(default_factory=RunSettings)
    validate: ValidateSettings = field(default_factory=ValidateSettings)

    @property
    def dual(self) -> bool:
        return self.method in DUAL_METHODS

    @property
    def structured(self) -> bool:
        return self.inexactness.mode is InexactnessMode.STRUCTURED

    @property
    def name(self) -> str:
        return f"{self.method}-seed{self.seed}"

    def sketch_distribution(self, m: int) -> SketchDistribution:
        """The sketch law for a system with m rows; block sizes are checked against m here."""
        if self.method in (Method.RK, Method.RCD):
            return SketchDistribution.coordinate(m)
        kind = self.solver.sketch
        if self.method in KACZMARZ_METHODS | COORDINATE_METHODS:
            kind = SketchKind.BLOCK
        match kind:
            case SketchKind.COORDINATE:
                return SketchDistribution.coordinate(m)
            case SketchKind.GAUSSIAN:
                return SketchDistribution.gaussian(m)
            case _:
                if self.solver.d > m:
                    raise ConfigError("solver.d", f"block size {self.solver.d} exceeds the {m} rows of A")
                return SketchDistribution.block(m, self.solver.d)

    def check_certifiable(self) -> None:
        """Reject combinations no certificate covers before any trial runs."""
        if self.structured and self.solver.omega != 1.0:
            raise ConfigError("solver.omega", "structured certificates hold for omega = 1 only")
        if self.validate.certificate == "none":
            raise ConfigError("validate.certificate", "validation needs a certificate")

    def solver_config(self, m: int, *, rel_error_tol: float | None = None) -> SolverConfig:
        return SolverConfig(
            dist=self.sketch_distribution(m),
            omega=self.solver.omega,
            max_iters=self.solver.max_iters,
            rel_error_tol=self.solver.tol if rel_error_tol is None else rel_error_tol,
            inexactness=self.inexactness,
            record_history=self.solver.record_history,
            rng_seed=self.seed,
            track_epsilon=self.solver.track_epsilon,
        )


def _set_dotted(raw: dict, dotted: str, value) -> None:
    *sections, key = dotted.split(".")
    target = raw
    for section in sections:
        target = target.setdefault(section, {})
    target[key] = value


def _build_problem(values: dict, method: Method, seed: int) -> ProblemRecipe:
    try:
        source = ProblemSource(values["source"])
    except ValueError:
        raise ConfigError("problem.source", f"unknown source {values['source']!r}") from None
    try:
        b_matrix = BMatrixRule(values["b_matrix"])
    except ValueError:
        raise ConfigError("problem.b_matrix", f"expected identity or equal-to-A, got {values['b_matrix']!r}") from None

    if method in COORDINATE_METHODS:
        if source is not ProblemSource.GRAM_GAUSSIAN:
            raise ConfigError(
                "problem.source",
                f"method {method} needs a symmetric positive definite A (B = A); use gram-gaussian",
            )
        b_matrix = BMatrixRule.EQUAL_TO_A
    elif method in KACZMARZ_METHODS and b_matrix is not BMatrixRule.IDENTITY:
        raise ConfigError("problem.b_matrix", f"method {method} requires B = I")
    if b_matrix is BMatrixRule.EQUAL_TO_A and source is not ProblemSource.GRAM_GAUSSIAN:
        raise ConfigError("problem.b_matrix", "B = A needs a symmetric positive definite A; use gram-gaussian")

    rhs_values = values["rhs_values"]
    if rhs_values is not None:
        rhs_values = tuple(_check_type(v, float, "problem.rhs_values") for v in rhs_values)
    try:
        return ProblemRecipe(
            source=source,
            m=values["m"],
            n=values["n"],
            density=values["density"],
            path=values["path"],
            n_features=values["n_features"],
            row_normalize=values["row_normalize"],
            drop_empty_rows=values["drop_empty_rows"],
            rhs=values["rhs"],
            rhs_values=rhs_values,
            b_matrix=b_matrix,
            seed=seed,
        )
    except ValueError as e:
        raise ConfigError("problem", str(e)) from e


def _build_inner(values: dict) -> InnerSolverSpec:
    try:
        return InnerSolverSpec(
            method=InnerMethod(values["kind"]),
            r=values["r"],
            inner_sketch=SKETCH_NAMES.get(values["inner_sketch"], values["inner_sketch"]),
            inner_block_size=values["inner_d"],
        )
    except ValueError as e:
        raise ConfigError("inner", str(e)) from e


def _build_inexactness(values: dict, method: Method, inner: InnerSolverSpec) -> InexactnessModel:
    try:
        mode = InexactnessMode(values["mode"])
    except ValueError:
        raise ConfigError("inexactness.mode", f"unknown mode {values['mode']!r}") from None

    if method in STRUCTURED_METHODS:
        if mode not in (InexactnessMode.NONE, InexactnessMode.STRUCTURED):
            raise ConfigError("inexactness.mode", f"method {method} takes its errors from the inner solver")
        mode = InexactnessMode.STRUCTURED
    elif method in EXACT_METHODS:
        if mode is not InexactnessMode.NONE:
            raise ConfigError("inexactness.mode", f"method {method} is exact; use ibasic or isdsa for injected errors")
    elif mode is InexactnessMode.STRUCTURED:
        raise ConfigError("inexactness.mode", f"use {method}-structured for inner-solver inexactness")

    try:
        return InexactnessModel(
            mode=mode,
            sigma=values["sigma"],
            decay=values["decay"],
            q=values["q"],
            inner=inner if mode is InexactnessMode.STRUCTURED else None,
            at_boundary=values["at_boundary"],
            orthogonal=values["orthogonal"],
        )
    except ValueError as e:
        raise ConfigError("inexactness", str(e)) from e


def _load_toml(path, text) -> dict:
    if text is None and path is None:
        raise ConfigError("config", "no configuration file given")
    try:
        if text is None:
            with open(path, "rb") as f:
                return tomllib.load(f)
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("config", f"invalid TOML: {e}") from e
    except OSError as e:
        raise ConfigError("config", f"cannot read {path}: {e}") from e


def parse_recipe(path: str | Path | None = None, *, text: str | None = None) -> ProblemRecipe:
    """
    Read the problem recipe from a TOML file holding ``seed`` and a
    ``[problem]`` table. Full experiment configs are accepted too; their
    method and solver sections are not interpreted.
    """
    raw = _load_toml(path, text)
    unknown = sorted(set(raw) - set(SECTIONS) - set(TOP_LEVEL))
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    if "problem" not in raw or not isinstance(raw["problem"], dict):
        raise ConfigError("problem", "missing required section")
    seed = _check_type(raw.get("seed", 0), int, "seed")
    values = _read_fields(raw["problem"], SECTIONS["problem"], "problem.")
    return _build_problem(values, Method.IBASIC, seed)


def parse_config(path: str | Path | None = None, overrides: dict | None = None, *, text: str | None = None) -> ExperimentConfig:
    """
    Load and validate an experiment configuration.

    Args:
        path: TOML file
        overrides: Flag values keyed by flag name (tol, omega, max_iters,
            trials, seed, d, r, workers, output_dir); None entries are ignored
        text: TOML source to use instead of a file

    Returns:
        ExperimentConfig

    Raises:
        ConfigError: naming the offending dotted key
    """
    raw = _load_toml(path, text)
    for flag, value in (overrides or {}).items():
        if value is None:
            continue
        if flag not in OVERRIDE_KEYS:
            raise ConfigError(flag, "unknown override")
        _set_dotted(raw, OVERRIDE_KEYS[flag], str(value) if flag == "output_dir" else value)

    top = {key: value for key, value in raw.items() if key not in SECTIONS}
    top = _read_fields(top, TOP_LEVEL, "")
    for section, value in raw.items():
        if section in SECTIONS and not isinstance(value, dict):
            raise ConfigError(section, "expected a table")
    if "problem" not in raw:
        raise ConfigError("problem", "missing required section")
    sections = {name: _read_fields(raw.get(name, {}), schema, f"{name}.") for name, schema in SECTIONS.items()}

    try:
        method = Method(top["method"])
    except ValueError:
        raise ConfigError("method", f"unknown method {top['method']!r}") from None
    seed = top["seed"]

    solver = sections["solver"]
    if not 0.0 < solver["omega"] < 2.0:
        raise ConfigError("solver.omega", f"must lie in (0, 2), got {solver['omega']}")
    if solver["d"] < 1:
        raise ConfigError("solver.d", "block size must be at least 1")
    if solver["max_iters"] < 0:
        raise ConfigError("solver.max_iters", "must be nonnegative")
    if solver["tol"] < 0:
        raise ConfigError("solver.tol", "must be nonnegative")
    if solver["sketch"] not in SKETCH_NAMES:
        raise ConfigError("solver.sketch", f"expected block, coordinate or gaussian, got {solver['sketch']!r}")

    problem = _build_problem(sections["problem"], method, seed)
    if problem.source is not ProblemSource.LIBSVM_FILE and method not in (Method.RK, Method.RCD):
        rows = problem.n if problem.source is ProblemSource.GRAM_GAUSSIAN else problem.m
        if solver["sketch"] == "block" or method in KACZMARZ_METHODS | COORDINATE_METHODS:
            if solver["d"] > rows:
                raise ConfigError("solver.d", f"block size {solver['d']} exceeds the {rows} rows of A")

    inner = _build_inner(sections["inner"])
    inexactness = _build_inexactness(sections["inexactness"], method, inner)

    run = sections["run"]
    if run["trials"] < 1:
        raise ConfigError("run.trials", "must be at least 1")
    if run["workers"] < 1:
        raise ConfigError("run.workers", "must be at least 1")
    output_dir = run["output_dir"] or os.environ.get(OUTPUT_DIR_ENV) or "runs"

    validate = sections["validate"]
    if validate["confidence_slack"] < 0:
        raise ConfigError("validate.confidence_slack", "must be nonnegative")
    if validate["min_trials"] < 1:
        raise ConfigError("validate.min_trials", "must be at least 1")

    return ExperimentConfig(
        method=method,
        problem=problem,
        seed=seed,
        solver=SolverSettings(
            d=solver["d"],
            omega=solver["omega"],
            tol=solver["tol"],
            max_iters=solver["max_iters"],
            sketch=SKETCH_NAMES[solver["sketch"]],
            record_history=solver["record_history"],
            track_epsilon=solver["track_epsilon"],
        ),
        inner=inner,
        inexactness=inexactness,
        run=RunSettings(trials=run["trials"], workers=run["workers"], output_dir=Path(output_dir)),
        validate=ValidateSettings(**validate),
    )
