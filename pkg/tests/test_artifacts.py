import numpy as np

from weakkam import artifacts
from weakkam.aubry import Trajectory
from weakkam.flow import PhaseCloud
from weakkam.grid import GridFunction, PeriodicGrid


def test_grid_file(tmp_path):
    grid = PeriodicGrid(8, 2)
    f = GridFunction.from_function(grid, lambda x: np.sin(2 * np.pi * x[:, 0]) * x[:, 1], "w")
    path = artifacts.write_grid(tmp_path / "w.csv", f)
    assert path.read_text().splitlines()[0] == "x,y,w"
    assert (tmp_path / "w.header.json").exists()
    back = artifacts.read_grid(path)
    assert back.name == "w"
    assert back.grid == grid
    np.testing.assert_array_equal(back.values, f.values)


def test_json_is_sorted_and_handles_numpy(tmp_path):
    obj = {"b": np.float64(0.1), "a": np.arange(3), "c": np.bool_(True), "d": np.int64(4)}
    path = artifacts.write_json(tmp_path / "sub" / "x.json", obj)
    text = path.read_text()
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    assert artifacts.read_json(path) == {"a": [0, 1, 2], "b": 0.1, "c": True, "d": 4}
    assert artifacts.dumps({"z": 1j}) == artifacts.dumps({"z": [0.0, 1.0]})


def test_floats_keep_full_precision(tmp_path):
    path = artifacts.write_table(tmp_path / "t.csv", ["t", "e"], [(1 / 3, 2 / 3)])
    assert path.read_text().splitlines()[1] == "0.33333333333333331,0.66666666666666663"
    np.testing.assert_array_equal(artifacts.read_table(path), [[1 / 3, 2 / 3]])


def test_trajectory_and_cloud_files(tmp_path):
    curve = Trajectory([-0.1, 0.0], [[0.2, 1.0], [0.3, 1.0]], kind="xv")
    path = artifacts.write_trajectory(tmp_path / "c.csv", curve)
    assert path.read_text().splitlines()[0] == "t,x0,v0"
    cloud = PhaseCloud([[0.1, 0.2], [0.3, 0.4]])
    back = artifacts.read_cloud(artifacts.write_cloud(tmp_path / "p.csv", cloud))
    np.testing.assert_array_equal(back.points, cloud.points)
