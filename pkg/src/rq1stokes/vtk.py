"""Legacy ASCII VTK (version 3.0) unstructured-grid writers.

Nonconforming velocities have no vertex values, so two views are written:
the tetrahedral mesh with vertex pressure and cell-averaged velocity, and a
point cloud at the edge midpoints carrying the native velocity DOFs.
"""

import numpy as np

VTK_VERTEX = 1
VTK_TETRA = 10


def _fmt(values):
    return " ".join(format(float(v), ".17g") for v in values)


def _header(title):
    return ["# vtk DataFile Version 3.0", title[:255].replace("\n", " "), "ASCII",
            "DATASET UNSTRUCTURED_GRID"]


def _points(points):
    out = [f"POINTS {len(points)} double"]
    out += [_fmt(p) for p in points]
    return out


def _field_lines(name, values):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        out = [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        out += [format(float(v), ".17g") for v in values]
    else:
        out = [f"VECTORS {name} double"]
        out += [_fmt(v) for v in values]
    return out


def format_mesh_vtk(mesh, point_data=None, cell_data=None, title="rq1stokes"):
    """VTK text for the tetrahedral mesh with optional vertex/cell fields."""
    lines = _header(title) + _points(mesh.vertices)
    nc = mesh.n_cells
    lines.append(f"CELLS {nc} {5 * nc}")
    lines += ["4 " + " ".join(str(int(i)) for i in c) for c in mesh.cells]
    lines.append(f"CELL_TYPES {nc}")
    lines += [str(VTK_TETRA)] * nc
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
        for name, vals in point_data.items():
            lines += _field_lines(name, vals)
    if cell_data:
        lines.append(f"CELL_DATA {nc}")
        for name, vals in cell_data.items():
            lines += _field_lines(name, vals)
    return "\n".join(lines) + "\n"


def format_point_cloud_vtk(points, point_data, title="rq1stokes midpoints"):
    """VTK text for isolated points (VTK_VERTEX cells) with point fields."""
    n = len(points)
    lines = _header(title) + _points(points)
    lines.append(f"CELLS {n} {2 * n}")
    lines += [f"1 {i}" for i in range(n)]
    lines.append(f"CELL_TYPES {n}")
    lines += [str(VTK_VERTEX)] * n
    lines.append(f"POINT_DATA {n}")
    for name, vals in point_data.items():
        lines += _field_lines(name, vals)
    return "\n".join(lines) + "\n"


def cell_average_velocity(velocity):
    """Mean of the six midpoint values per cell (the cell average of the
    rotated-Q1 field, since the midpoint rule integrates it exactly)."""
    return velocity.cell_coeffs().mean(axis=1)


def write_solution(prefix, solution):
    """Write ``<prefix>_mesh.vtk`` and ``<prefix>_midpoints.vtk``; returns paths."""
    mesh = solution.velocity.mesh
    mesh_path = f"{prefix}_mesh.vtk"
    cloud_path = f"{prefix}_midpoints.vtk"
    with open(mesh_path, "w") as fh:
        fh.write(format_mesh_vtk(
            mesh,
            point_data={"pressure": solution.pressure.coeffs},
            cell_data={"velocity_cell_average": cell_average_velocity(solution.velocity)},
        ))
    with open(cloud_path, "w") as fh:
        fh.write(format_point_cloud_vtk(
            mesh.edge_midpoints,
            {"velocity": solution.velocity.coeffs.reshape(-1, 3)},
        ))
    return mesh_path, cloud_path
