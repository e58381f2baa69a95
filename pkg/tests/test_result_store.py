import numpy as np
import pytest

from data.result_store import ResultStore, format_value
from logic.mesh_fem import build_mesh
from logic.synthdata import ObservationData


def test_format_value():
    assert format_value(0.001) == "1.00000e-03"
    assert format_value(np.float64(2.5)) == "2.50000e+00"
    assert format_value(7) == "7"
    assert format_value(np.int64(7)) == "7"
    assert format_value(True) == "True"
    assert format_value("grad_tol") == "grad_tol"


def test_csv_skips_missing_columns(tmp_path):
    dest = tmp_path / "sub" / "t.csv"
    ResultStore.write_csv(str(dest), ["a", "b"], [{"a": 1.0}, {"a": 2, "b": "x"}])
    assert dest.read_text(encoding="utf-8") == "a,b\n1.00000e+00,\n2,x\n"


def test_observation_bundle_keeps_full_precision(tmp_path):
    mesh = build_mesh(2, 4)
    rng = np.random.default_rng(3)
    obs = ObservationData(mesh=mesh, values=rng.standard_normal((6, mesh.n_interior)), tau=0.2, T0=0.4,
                          epsilon=1e-2, seed=3, delta_realized=0.0123)
    ResultStore.save_observations(str(tmp_path / "obs"), obs, {"example": "smooth2d"})

    loaded = ResultStore.load_observations(str(tmp_path / "obs"))
    assert loaded.mesh.same_as(mesh)
    assert loaded.N == 5
    np.testing.assert_array_equal(loaded.values, obs.values)
    assert loaded.tau == pytest.approx(0.2)
    assert loaded.delta_realized == pytest.approx(0.0123)
    assert ResultStore.read_json(str(tmp_path / "obs" / "meta.json"))["example"] == "smooth2d"


def test_mesh_descriptor(tmp_path):
    dest = str(tmp_path / "mesh.json")
    ResultStore.save_mesh_descriptor(dest, build_mesh(1, 12))
    mesh = ResultStore.load_mesh_descriptor(dest)
    assert (mesh.dim, mesh.M) == (1, 12)
