"""Tetrahedral meshes: generation, topology and affine cell maps."""

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from . import element
from .errors import InvalidArgumentError, MeshFormatError, MeshInvalidError, SingularMapError

LOCAL_EDGES = np.array(element.LOCAL_EDGES)
LOCAL_FACES = np.array(element.LOCAL_FACES)
_REF_EDGE_MATRIX_INV = np.linalg.inv(
    (element.REFERENCE_VERTICES[1:] - element.REFERENCE_VERTICES[0]).T
)


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class Mesh:
    """Tetrahedral mesh with derived topology.

    Attributes
    ----------
    vertices : (nv, 3) float array
    cells : (nc, 4) int array, positively oriented
    faces : (nf, 3) sorted vertex triples
    face_cells : (nf, 2) incident cells, second entry -1 on the boundary
    cell_faces : (nc, 4) global face of local face i (opposite local vertex i)
    edges : (ne, 2) sorted vertex pairs
    cell_edges : (nc, 6) global edge of each local edge (``element.LOCAL_EDGES``)
    edge_midpoints : (ne, 3)
    boundary_face, boundary_edge, boundary_vertex : bool masks
    h : maximum cell diameter

    Per-cell affine maps x = A xhat + x_T are cached in ``jacobians``,
    ``det_jacobians``, ``inv_transposes`` and ``centroids``.
    Instances are immutable; construct them with :func:`build_topology`.
    """

    def __init__(self, vertices, cells, faces, face_cells, cell_faces, edges, cell_edges):
        self.vertices = _frozen(vertices)
        self.cells = _frozen(cells)
        self.faces = _frozen(faces)
        self.face_cells = _frozen(face_cells)
        self.cell_faces = _frozen(cell_faces)
        self.edges = _frozen(edges)
        self.cell_edges = _frozen(cell_edges)
        self.edge_midpoints = _frozen(0.5 * (vertices[edges[:, 0]] + vertices[edges[:, 1]]))

        self.boundary_face = _frozen(face_cells[:, 1] < 0)
        bedge = np.zeros(len(edges), dtype=bool)
        bfaces = faces[self.boundary_face]
        for a, b in ((0, 1), (0, 2), (1, 2)):
            bedge[self.edge_index(bfaces[:, a], bfaces[:, b])] = True
        self.boundary_edge = _frozen(bedge)
        bvert = np.zeros(len(vertices), dtype=bool)
        bvert[bfaces.ravel()] = True
        self.boundary_vertex = _frozen(bvert)

        x = vertices[cells]
        edge_vecs = x[:, 1:, :] - x[:, :1, :]
        phys = np.transpose(edge_vecs, (0, 2, 1))
        jac = phys @ _REF_EDGE_MATRIX_INV
        self.jacobians = _frozen(jac)
        self.det_jacobians = _frozen(np.linalg.det(jac))
        self.inv_transposes = _frozen(np.transpose(np.linalg.inv(jac), (0, 2, 1)))
        self.centroids = _frozen(x.mean(axis=1))
        self.volumes = _frozen(self.det_jacobians * element.REFERENCE_VOLUME)

        lengths = np.linalg.norm(
            x[:, LOCAL_EDGES[:, 1], :] - x[:, LOCAL_EDGES[:, 0], :], axis=2
        )
        self.cell_diameters = _frozen(lengths.max(axis=1))
        self.h = float(self.cell_diameters.max())

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def volume(self):
        return float(self.volumes.sum())

    def edge_index(self, a, b):
        """Global index of the edge(s) joining vertices a and b."""
        a, b = np.asarray(a), np.asarray(b)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        keys = lo.astype(np.int64) * self.n_vertices + hi
        idx = np.searchsorted(self._edge_keys, keys)
        idx = np.minimum(idx, len(self._edge_keys) - 1)
        if np.any(self._edge_keys[idx] != keys):
            raise InvalidArgumentError("vertex pair is not a mesh edge")
        return idx

    @property
    def _edge_keys(self):
        return self.edges[:, 0].astype(np.int64) * self.n_vertices + self.edges[:, 1]

    def interior_edges_per_cell(self):
        return (~self.boundary_edge[self.cell_edges]).sum(axis=1)

    def outward_face_normals(self):
        """Unit outward normals of each cell's four local faces, shape (nc, 4, 3)."""
        x = self.vertices[self.cells]
        normals = np.empty((self.n_cells, 4, 3))
        for i, (a, b, c) in enumerate(LOCAL_FACES):
            n = np.cross(x[:, b] - x[:, a], x[:, c] - x[:, a])
            n /= np.linalg.norm(n, axis=1)[:, None]
            flip = np.einsum("cd,cd->c", n, x[:, a] - x[:, i]) < 0
            n[flip] *= -1
            normals[:, i] = n
        return normals

    def face_areas(self):
        f = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(f[:, 1] - f[:, 0], f[:, 2] - f[:, 0]), axis=1)

    def __repr__(self):
        return (
            f"Mesh(n_vertices={self.n_vertices}, n_cells={self.n_cells}, "
            f"n_edges={self.n_edges}, n_faces={self.n_faces}, h={self.h:.4g})"
        )


def signed_volumes(vertices, cells):
    x = np.asarray(vertices)[np.asarray(cells)]
    return np.linalg.det(x[:, 1:, :] - x[:, :1, :]) / 6.0


def build_topology(vertices, cells):
    """Derive faces, edges and boundary flags; reorient cells to positive volume.

    Raises MeshInvalidError for out-of-range indices, degenerate or
    duplicate cells and faces shared by more than two cells.
    """
    vertices = np.array(vertices, dtype=float)
    cells = np.array(cells, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise MeshInvalidError("vertices must have shape (n, 3)")
    if cells.ndim != 2 or cells.shape[1] != 4 or len(cells) == 0:
        raise MeshInvalidError("cells must have shape (m, 4) with m >= 1")
    nv = len(vertices)
    if cells.min() < 0 or cells.max() >= nv:
        raise MeshInvalidError("cell references a vertex index out of range")
    if np.any(np.sort(cells, axis=1)[:, 1:] == np.sort(cells, axis=1)[:, :-1]):
        raise MeshInvalidError("cell with repeated vertex")

    vol = signed_volumes(vertices, cells)
    scale = np.ptp(vertices, axis=0).max() if nv > 1 else 1.0
    degenerate = np.abs(vol) <= 1e-14 * scale**3
    if np.any(degenerate):
        raise MeshInvalidError(f"degenerate cells: {np.flatnonzero(degenerate)[:10].tolist()}")
    flip = vol < 0
    cells[flip] = cells[flip][:, [0, 1, 3, 2]]

    sorted_cells = np.sort(cells, axis=1)
    _, counts = np.unique(sorted_cells, axis=0, return_counts=True)
    if np.any(counts > 1):
        raise MeshInvalidError("duplicate cells")

    nc = len(cells)
    all_faces = np.sort(cells[:, LOCAL_FACES].reshape(-1, 3), axis=1)
    faces, face_inv, face_count = np.unique(
        all_faces, axis=0, return_inverse=True, return_counts=True
    )
    face_inv = face_inv.ravel()
    if np.any(face_count > 2):
        raise MeshInvalidError("non-manifold face shared by more than two cells")
    cell_faces = face_inv.reshape(nc, 4)
    face_cells = np.full((len(faces), 2), -1, dtype=np.int64)
    owner = np.repeat(np.arange(nc), 4)
    order = np.argsort(face_inv, kind="stable")
    sorted_faces = face_inv[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_faces[1:] != sorted_faces[:-1]
    face_cells[sorted_faces[first], 0] = owner[order[first]]
    face_cells[sorted_faces[~first], 1] = owner[order[~first]]

    all_edges = np.sort(cells[:, LOCAL_EDGES].reshape(-1, 2), axis=1)
    edges, edge_inv = np.unique(all_edges, axis=0, return_inverse=True)
    cell_edges = edge_inv.ravel().reshape(nc, 6)

    return Mesh(vertices, cells, faces, face_cells, cell_faces, edges, cell_edges)


@dataclass(frozen=True)
class AffineMap:
    """x = matrix @ xhat + translation, mapping the reference cell onto a cell."""

    matrix: np.ndarray
    translation: np.ndarray
    det: float
    inv_transpose: np.ndarray

    def __call__(self, xhat):
        return np.asarray(xhat) @ self.matrix.T + self.translation

    def inverse(self, x):
        return (np.asarray(x) - self.translation) @ self.inv_transpose


def affine_map(mesh, cell):
    if not 0 <= cell < mesh.n_cells:
        raise InvalidArgumentError(f"cell index {cell} out of range")
    det = float(mesh.det_jacobians[cell])
    if abs(det) <= 1e-300 or not np.isfinite(det):
        raise SingularMapError(f"cell {cell} has a singular affine map")
    return AffineMap(
        matrix=np.array(mesh.jacobians[cell]),
        translation=np.array(mesh.centroids[cell]),
        det=det,
        inv_transpose=np.array(mesh.inv_transposes[cell]),
    )


# --------------------------------------------------------------------------
# Generators.

_KUHN_PATHS = [
    [(0, 0, 0), tuple(np.eye(3, dtype=int)[p[0]]),
     tuple(np.eye(3, dtype=int)[p[0]] + np.eye(3, dtype=int)[p[1]]), (1, 1, 1)]
    for p in permutations(range(3))
]


def _structured_tets(n):
    """Kuhn subdivision of an n[0] x n[1] x n[2] grid of unit boxes.

    The subdivision is reflected about the grid mid-planes (a box's local
    axis d is flipped when its index i_d satisfies 2 i_d >= n_d).  This stays
    conforming, since the flip along d depends only on i_d, and puts every
    boundary plane through the start of the main diagonal, so for n_d >= 2
    no cell gets two boundary faces.
    """
    nx, ny, nz = n
    i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    mx, my, mz = (2 * i >= nx), (2 * j >= ny), (2 * k >= nz)

    def vid(a, b, c):
        return ((i + (a ^ mx)) * (ny + 1) + (j + (b ^ my))) * (nz + 1) + (k + (c ^ mz))

    tets = [np.stack([vid(*v) for v in path], axis=1) for path in _KUHN_PATHS]
    return np.stack(tets, axis=1).reshape(-1, 4)


def _check_positive(values, name, integer=False):
    vals = tuple(values)
    if len(vals) != 3:
        raise InvalidArgumentError(f"{name} must have three entries")
    for v in vals:
        if integer and (int(v) != v):
            raise InvalidArgumentError(f"{name} must be integers, got {vals}")
        if not v > 0:
            raise InvalidArgumentError(f"{name} must be positive, got {vals}")
    return tuple(int(v) for v in vals) if integer else tuple(float(v) for v in vals)


def generate_box_mesh(extent, subdivisions, origin=(0.0, 0.0, 0.0)):
    """Structured Kuhn mesh of origin + [0, extent_x] x [0, extent_y] x [0, extent_z]."""
    extent = _check_positive(extent, "extent")
    n = _check_positive(subdivisions, "subdivisions", integer=True)
    axes = [np.linspace(0.0, extent[d], n[d] + 1) + origin[d] for d in range(3)]
    # pin the far faces to the exact bounds
    for d in range(3):
        axes[d][-1] = origin[d] + extent[d]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    vertices = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    return build_topology(vertices, _structured_tets(n))


def generate_ball_mesh(radius=1.0, refinement=0):
    """Ball mesh by mapping a Kuhn-subdivided cube [-1, 1]^3 onto the ball.

    The cube has 2^(refinement + 1) boxes per direction.  Each max-norm shell
    max_i |x_i| = s is projected radially onto the sphere of radius
    radius * s, i.e. x -> radius * x * s / |x|.  The cube surface lands on
    the sphere and distances along rays are preserved up to the scale.
    """
    if not radius > 0:
        raise InvalidArgumentError(f"radius must be positive, got {radius}")
    if int(refinement) != refinement or refinement < 0:
        raise InvalidArgumentError(f"refinement must be a non-negative integer, got {refinement}")
    n = 2 ** (int(refinement) + 1)
    cube = generate_box_mesh((2.0, 2.0, 2.0), (n, n, n), origin=(-1.0, -1.0, -1.0))
    x = np.array(cube.vertices)
    s = np.abs(x).max(axis=1)
    r = np.linalg.norm(x, axis=1)
    factor = np.ones_like(s)
    nz = r > 0
    factor[nz] = s[nz] / r[nz]
    y = radius * x * factor[:, None]
    on_surface = np.isclose(s, 1.0, rtol=0, atol=1e-14)
    y[on_surface] *= radius / np.linalg.norm(y[on_surface], axis=1)[:, None]
    return build_topology(y, cube.cells)


# --------------------------------------------------------------------------
# Internal-edge assumption.

@dataclass
class InternalEdgeReport:
    passed: bool
    internal_edge_counts: np.ndarray
    offending_cells: np.ndarray
    dependent_tangent_cells: np.ndarray

    def __bool__(self):
        return self.passed


def check_internal_edge_assumption(mesh, tol=1e-8):
    """Every cell needs >= 3 internal edges whose tangents span R^3."""
    counts = mesh.interior_edges_per_cell()
    offending = np.flatnonzero(counts < 3)
    x = mesh.vertices
    tang = x[mesh.edges[:, 1]] - x[mesh.edges[:, 0]]
    tang /= np.linalg.norm(tang, axis=1)[:, None]
    t = tang[mesh.cell_edges] * (~mesh.boundary_edge[mesh.cell_edges])[:, :, None]
    sv = np.linalg.svd(t, compute_uv=False)
    dependent = np.flatnonzero(sv[:, 2] <= tol * np.maximum(sv[:, 0], 1e-300))
    passed = len(offending) == 0 and len(dependent) == 0
    return InternalEdgeReport(passed, counts, offending, dependent)


# --------------------------------------------------------------------------
# rq1mesh text format.

def write_mesh(path, mesh):
    with open(path, "w") as fh:
        fh.write(format_mesh(mesh.vertices, mesh.cells))


def format_mesh(vertices, cells):
    lines = ["rq1mesh 1", f"vertices {len(vertices)}"]
    lines += [" ".join(format(float(c), ".17g") for c in v) for v in vertices]
    lines.append(f"cells {len(cells)}")
    lines += [" ".join(str(int(i)) for i in c) for c in cells]
    return "\n".join(lines) + "\n"


def parse_mesh(text):
    """Parse ``rq1mesh`` text into (vertices, cells) arrays."""
    lines = text.splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise MeshFormatError("unexpected end of file", line=len(lines) + 1)
        pos += 1
        return pos, lines[pos - 1].split()

    def header(keyword):
        lineno, tok = next_line()
        if len(tok) != 2 or tok[0] != keyword:
            raise MeshFormatError(f"expected '{keyword} N'", line=lineno)
        try:
            count = int(tok[1])
        except ValueError:
            raise MeshFormatError(f"invalid count {tok[1]!r}", line=lineno) from None
        if count < 0:
            raise MeshFormatError("negative count", line=lineno)
        return count

    lineno, tok = next_line()
    if tok != ["rq1mesh", "1"]:
        raise MeshFormatError("expected header 'rq1mesh 1'", line=lineno)
    nv = header("vertices")
    vertices = np.empty((nv, 3))
    for i in range(nv):
        lineno, tok = next_line()
        try:
            if len(tok) != 3:
                raise ValueError
            vertices[i] = [float(t) for t in tok]
        except ValueError:
            raise MeshFormatError("expected three coordinates", line=lineno) from None
    nc = header("cells")
    cells = np.empty((nc, 4), dtype=np.int64)
    for i in range(nc):
        lineno, tok = next_line()
        try:
            if len(tok) != 4:
                raise ValueError
            cells[i] = [int(t) for t in tok]
        except ValueError:
            raise MeshFormatError("expected four vertex indices", line=lineno) from None
        if cells[i].min() < 0 or cells[i].max() >= nv:
            raise MeshFormatError("vertex index out of range", line=lineno)
    while pos < len(lines):
        if lines[pos].strip():
            raise MeshFormatError("trailing content", line=pos + 1)
        pos += 1
    return vertices, cells


def read_mesh(path):
    with open(path) as fh:
        vertices, cells = parse_mesh(fh.read())
    return build_topology(vertices, cells)
