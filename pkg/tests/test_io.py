import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfpd import io
from mfpd.errors import ValidationError
from mfpd.mesh import gen_disk_mesh

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=40, deadline=None)
@given(st.lists(finite, min_size=1, max_size=50))
def test_csv_round_trip(tmp_path_factory, vals):
    p = tmp_path_factory.mktemp("csv") / "v.csv"
    io.write_csv(vals, p)
    assert np.array_equal(io.read_csv(p), np.array(vals, dtype=float))


def test_csv_with_coords(tmp_path):
    m = gen_disk_mesh(1.0, 0.3)
    v = np.sin(m.vertices[:, 0])
    p = io.write_csv(v, tmp_path / "v.csv", coords=m.vertices)
    assert p.read_text().splitlines()[0] == "id,x1,x2,value"
    assert np.array_equal(io.read_csv(p), v)
    with pytest.raises(ValidationError):
        io.write_csv(v, tmp_path / "bad.csv", coords=m.vertices[:-1])


def test_csv_errors(tmp_path):
    with pytest.raises(ValidationError):
        io.read_csv(tmp_path / "missing.csv")
    (tmp_path / "e.csv").write_text("")
    with pytest.raises(ValidationError):
        io.read_csv(tmp_path / "e.csv")
    (tmp_path / "h.csv").write_text("name,value\n0,1\n")
    with pytest.raises(ValidationError):
        io.read_csv(tmp_path / "h.csv")
    (tmp_path / "r.csv").write_text("id,value\n0,1\n2,3\n")
    with pytest.raises(ValidationError, match="row 3"):
        io.read_csv(tmp_path / "r.csv")


def test_vtk_sections(tmp_path):
    m = gen_disk_mesh(1.0, 0.3)
    pv = m.vertices[:, 0] ** 2
    cv = np.arange(m.n_triangles, dtype=float)
    vec = m.barycenters
    p = io.write_vtk(m, tmp_path / "f.vtk", {"u": pv}, {"label": cv, "grad": vec})
    lines = p.read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert lines[2] == "ASCII" and lines[3] == "DATASET UNSTRUCTURED_GRID"
    assert f"POINT_DATA {m.n_vertices}" in lines and f"CELL_DATA {m.n_triangles}" in lines
    back = io.read_vtk_sections(p)
    assert np.array_equal(back["points"], m.vertices)
    assert np.array_equal(back["cells"], m.triangles)
    assert np.array_equal(back["POINT_DATA"]["u"], pv)
    assert np.array_equal(back["CELL_DATA"]["label"], cv)
    assert np.array_equal(back["CELL_DATA"]["grad"], vec)


def test_vtk_validation(tmp_path):
    m = gen_disk_mesh(1.0, 0.3)
    with pytest.raises(ValidationError):
        io.write_vtk(m, tmp_path / "a.vtk", {"u": np.zeros(3)})
    with pytest.raises(ValidationError):
        io.write_vtk(m, tmp_path / "b.vtk", cell_data={"c": np.zeros(2)})
    with pytest.raises(ValidationError):
        io.write_vtk(m, tmp_path / "c.vtk", {"t": np.zeros((m.n_vertices, 3))})
    (tmp_path / "d.vtk").write_text("not vtk\n")
    with pytest.raises(ValidationError):
        io.read_vtk_sections(tmp_path / "d.vtk")


def test_config_parse(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# comment\nmesh.h = 0.1\n\nfreqs = 1, 3 ,7  # trailing\n")
    assert io.read_config(p) == {"mesh.h": "0.1", "freqs": "1, 3 ,7"}
    p.write_text("mesh.h 0.1\n")
    with pytest.raises(ValidationError, match=":1:"):
        io.read_config(p)
    p.write_text("ok = 1\n = 2\n")
    with pytest.raises(ValidationError, match=":2:"):
        io.read_config(p)
    with pytest.raises(ValidationError):
        io.read_config(tmp_path / "none.txt")


def test_json(tmp_path):
    p = io.write_json(tmp_path / "m.json", {"b": 1, "a": [1, 2]})
    assert p.read_text().startswith('{\n  "a"')
    assert io.read_json(p) == {"a": [1, 2], "b": 1}
    (tmp_path / "bad.json").write_text("{\n oops")
    with pytest.raises(ValidationError, match="line"):
        io.read_json(tmp_path / "bad.json")
    with pytest.raises(ValidationError):
        io.read_json(tmp_path / "missing.json")


def test_coefficients_csv(tmp_path):
    p = io.write_coefficients_csv(tmp_path / "c.csv", [1.0, 2.0], [3.0, 4.0])
    a, q = io.read_coefficients_csv(p, 2)
    assert list(a) == [1.0, 2.0] and list(q) == [3.0, 4.0]
    with pytest.raises(ValidationError):
        io.read_coefficients_csv(p, 3)
    with pytest.raises(ValidationError):
        io.read_coefficients_csv(tmp_path / "none.csv", 2)


def test_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ValidationError):
        io.write_csv([1.0], blocker / "sub" / "v.csv")
