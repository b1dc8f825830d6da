import numpy as np
import pytest

from conftest import spd_matrix
from solvers.linalg import Geometry, LinearSystemInstance
from utils.container import HEADER, MAGIC, ContainerError, export_instance, import_instance
from utils.problems import ProblemRecipe, build_instance


def assert_identical(a, b):
    assert a.geometry is b.geometry
    assert a.label == b.label
    A_a = a.A.toarray() if hasattr(a.A, "toarray") else a.A
    A_b = b.A.toarray() if hasattr(b.A, "toarray") else b.A
    assert A_a.tobytes() == A_b.tobytes()
    assert a.b.tobytes() == b.b.tobytes()
    assert a.B.tobytes() == b.B.tobytes()
    if a.planted_solution is None:
        assert b.planted_solution is None
    else:
        assert a.planted_solution.tobytes() == b.planted_solution.tobytes()


def test_header_layout():
    assert HEADER.size == 44
    assert len(MAGIC) == 8


@pytest.mark.parametrize(
    "recipe",
    [
        ProblemRecipe(source="dense-gaussian", m=12, n=7, seed=1),
        ProblemRecipe(source="sparse-gaussian", m=30, n=10, density=0.2, seed=2),
        ProblemRecipe(source="gram-gaussian", m=12, n=6, b_matrix="equal-to-A", seed=3),
    ],
    ids=["dense", "sparse", "equal-to-A"],
)
def test_instances_survive_a_round_trip(recipe, tmp_path):
    sys = build_instance(recipe)
    path = tmp_path / "instance.isp"
    export_instance(sys, path)
    assert path.read_bytes()[:8] == MAGIC
    assert_identical(sys, import_instance(path))


def test_general_geometry_without_planted_solution(tmp_path):
    rng = np.random.default_rng(0)
    A = rng.standard_normal((5, 4))
    sys = LinearSystemInstance.create(A, A @ np.ones(4), spd_matrix(4, seed=1), label="général")
    assert sys.geometry is Geometry.GENERAL
    path = tmp_path / "general.isp"
    export_instance(sys, path)
    assert_identical(sys, import_instance(path))


@pytest.fixture
def exported(tmp_path):
    path = tmp_path / "instance.isp"
    export_instance(build_instance(ProblemRecipe(source="dense-gaussian", m=6, n=4)), path)
    return path


def test_corrupted_payload_is_rejected(exported):
    data = bytearray(exported.read_bytes())
    data[60] ^= 0xFF
    exported.write_bytes(bytes(data))
    with pytest.raises(ContainerError, match="checksum"):
        import_instance(exported)


def test_truncated_file_is_rejected(exported):
    exported.write_bytes(exported.read_bytes()[:-40])
    with pytest.raises(ContainerError):
        import_instance(exported)


def test_wrong_magic_is_rejected(exported):
    data = exported.read_bytes()
    exported.write_bytes(b"NOTINST\x00" + data[8:])
    with pytest.raises(ContainerError, match="not an instance file"):
        import_instance(exported)


def test_wrong_version_is_rejected(exported):
    data = bytearray(exported.read_bytes())
    data[8] = 9
    exported.write_bytes(bytes(data))
    with pytest.raises(ContainerError, match="version"):
        import_instance(exported)
