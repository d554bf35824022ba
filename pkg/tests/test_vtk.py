import numpy as np
from numpy.testing import assert_allclose

from rq1stokes import analysis, vtk
from rq1stokes.system import BoundarySpec, solve_stokes


def parse_sections(text):
    """Minimal legacy-VTK reader: {keyword: (header tokens, following lines)}."""
    lines = text.splitlines()
    out = {}
    keys = {"POINTS", "CELLS", "CELL_TYPES", "POINT_DATA", "CELL_DATA", "SCALARS", "VECTORS"}
    for i, line in enumerate(lines):
        tok = line.split()
        if tok and tok[0] in keys:
            out.setdefault(tok[0], []).append((tok, i))
    return lines, out


class TestMeshFile:
    def test_structure(self, box2):
        case = analysis.affine_case()
        sol = solve_stokes(box2, BoundarySpec.full(case.u), None, "b")
        text = vtk.format_mesh_vtk(
            box2, point_data={"pressure": sol.p},
            cell_data={"velocity_cell_average": vtk.cell_average_velocity(sol.velocity)})
        lines, sec = parse_sections(text)
        assert lines[0] == "# vtk DataFile Version 3.0"
        assert lines[2] == "ASCII" and lines[3] == "DATASET UNSTRUCTURED_GRID"
        tok, i = sec["POINTS"][0]
        assert int(tok[1]) == box2.n_vertices
        pts = np.array([list(map(float, l.split())) for l in lines[i + 1:i + 1 + box2.n_vertices]])
        assert np.array_equal(pts, box2.vertices)  # 17 significant digits round-trip
        tok, i = sec["CELLS"][0]
        assert tok[1:] == [str(box2.n_cells), str(5 * box2.n_cells)]
        tok, i = sec["CELL_TYPES"][0]
        assert set(lines[i + 1:i + 1 + box2.n_cells]) == {"10"}
        assert sec["POINT_DATA"][0][0][1] == str(box2.n_vertices)
        assert sec["CELL_DATA"][0][0][1] == str(box2.n_cells)

    def test_cell_average_of_affine_field(self, box2):
        case = analysis.affine_case()
        sol = solve_stokes(box2, BoundarySpec.full(case.u), None, "b")
        assert_allclose(vtk.cell_average_velocity(sol.velocity), case.u(box2.centroids), atol=1e-13)


class TestPointCloud:
    def test_structure(self, box2):
        pts = box2.edge_midpoints
        text = vtk.format_point_cloud_vtk(pts, {"velocity": np.ones((len(pts), 3))})
        lines, sec = parse_sections(text)
        tok, i = sec["CELLS"][0]
        assert tok[1:] == [str(len(pts)), str(2 * len(pts))]
        assert lines[i + 1] == "1 0"
        tok, i = sec["CELL_TYPES"][0]
        assert set(lines[i + 1:i + 1 + len(pts)]) == {"1"}
        assert sec["VECTORS"][0][0][1] == "velocity"


def test_write_solution_is_deterministic(box2, tmp_path):
    case = analysis.cubic_case()
    outputs = []
    for k in range(2):
        sol = solve_stokes(box2, BoundarySpec.full(case.u), None, "btilde")
        paths = vtk.write_solution(str(tmp_path / f"run{k}"), sol)
        outputs.append([open(p).read() for p in paths])
    assert outputs[0] == outputs[1]
