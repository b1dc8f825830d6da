import pytest

from harness.config import OUTPUT_DIR_ENV, ConfigError, Method, parse_config, parse_recipe
from solvers.inner import InnerMethod
from solvers.primal import InexactnessMode
from solvers.sketching import SketchKind

MINIMAL = """
method = "rbk"
seed = 7
[problem]
source = "dense-gaussian"
m = 100
n = 70
[solver]
d = 30
"""


def test_minimal_config_fills_defaults(monkeypatch):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
    cfg = parse_config(text=MINIMAL)
    assert cfg.method is Method.RBK
    assert cfg.seed == 7
    assert cfg.solver.d == 30
    assert cfg.solver.omega == 1.0
    assert cfg.solver.tol == 1e-5
    assert cfg.run.trials == 1
    assert str(cfg.run.output_dir) == "runs"
    assert cfg.inexactness.mode is InexactnessMode.NONE
    assert cfg.name == "rbk-seed7"
    assert cfg.problem.seed == 7


def test_flags_override_file_values():
    cfg = parse_config(text=MINIMAL, overrides={"tol": 1e-7, "trials": 4, "omega": None, "output_dir": "out"})
    assert cfg.solver.tol == 1e-7
    assert cfg.run.trials == 4
    assert cfg.solver.omega == 1.0
    assert str(cfg.run.output_dir) == "out"


def test_output_dir_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path))
    assert parse_config(text=MINIMAL).run.output_dir == tmp_path


def test_config_file_on_disk(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(MINIMAL)
    assert parse_config(path).method is Method.RBK


@pytest.mark.parametrize(
    "text, field",
    [
        (MINIMAL + "colour = 1\n", "solver.colour"),
        (MINIMAL.replace('method = "rbk"', 'method = "gmres"'), "method"),
        (MINIMAL.replace('method = "rbk"\n', ""), "method"),
        (MINIMAL.replace("d = 30", 'd = "thirty"'), "solver.d"),
        (MINIMAL.replace("d = 30", "d = 300"), "solver.d"),
        (MINIMAL.replace("d = 30", "omega = 2.5"), "solver.omega"),
        (MINIMAL + "[run]\ntrials = 0\n", "run.trials"),
        (MINIMAL + "[inexactness]\nmode = \"proportional-distance\"\n", "inexactness.mode"),
        ('method = "rk"\n', "problem"),
        ("method = [", "config"),
    ],
)
def test_invalid_configs_name_the_field(text, field):
    with pytest.raises(ConfigError) as excinfo:
        parse_config(text=text)
    assert excinfo.value.field == field
    assert str(excinfo.value).startswith(f"{field}:")


def test_coordinate_descent_needs_an_spd_problem():
    text = MINIMAL.replace('method = "rbk"', 'method = "irbcd"')
    with pytest.raises(ConfigError) as excinfo:
        parse_config(text=text)
    assert excinfo.value.field == "problem.source"
    assert "positive definite" in str(excinfo.value)


def test_coordinate_descent_forces_b_equal_to_a():
    cfg = parse_config(
        text="""
method = "irbcd"
[problem]
source = "gram-gaussian"
m = 60
n = 40
[solver]
d = 10
[inner]
kind = "cg"
r = 5
"""
    )
    assert cfg.problem.b_matrix == "equal-to-A"
    assert cfg.structured
    assert cfg.inexactness.inner.method is InnerMethod.CG
    assert cfg.inexactness.inner.r == 5
    assert cfg.sketch_distribution(40).block_size == 10


def test_kaczmarz_needs_identity_geometry():
    text = MINIMAL.replace("n = 70", 'n = 70\nb_matrix = "equal-to-A"')
    with pytest.raises(ConfigError) as excinfo:
        parse_config(text=text)
    assert excinfo.value.field == "problem.b_matrix"


def test_injected_errors_need_an_inexact_method():
    text = MINIMAL.replace('method = "rbk"', 'method = "ibasic"') + '[inexactness]\nmode = "abstract-fixed"\nsigma = 0.01\n'
    cfg = parse_config(text=text)
    assert cfg.inexactness.sigma == 0.01
    with pytest.raises(ConfigError):
        parse_config(text=text.replace("abstract-fixed", "structured"))


def test_structured_validation_needs_unit_stepsize():
    text = MINIMAL.replace('method = "rbk"', 'method = "irbk"').replace("d = 30", "d = 30\nomega = 0.5")
    cfg = parse_config(text=text)
    with pytest.raises(ConfigError) as excinfo:
        cfg.check_certifiable()
    assert excinfo.value.field == "solver.omega"


def test_single_row_methods_use_coordinate_sketches():
    cfg = parse_config(text=MINIMAL.replace('method = "rbk"', 'method = "rk"'))
    assert cfg.sketch_distribution(100).kind is SketchKind.COORDINATE


def test_dual_methods():
    cfg = parse_config(text=MINIMAL.replace('method = "rbk"', 'method = "isdsa-structured"'))
    assert cfg.dual and cfg.structured


def test_parse_recipe(tmp_path):
    path = tmp_path / "recipe.toml"
    path.write_text('seed = 3\n[problem]\nsource = "sparse-gaussian"\nm = 50\nn = 20\ndensity = 0.2\n')
    recipe = parse_recipe(path)
    assert recipe.seed == 3
    assert recipe.density == 0.2
    with pytest.raises(ConfigError):
        parse_recipe(text="seed = 1\n")
