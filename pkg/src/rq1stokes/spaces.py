"""Degree-of-freedom maps for the velocity and pressure spaces.

Velocity: three scalar DOFs per mesh edge (the midpoint value of each
component), numbered edge-major, component-minor: dof = 3 * edge + comp.
Global edges are stored as (min vertex, max vertex); DOFs are point values,
so no per-cell orientation signs are needed.

Pressure: one DOF per mesh vertex (continuous P1).
"""

from dataclasses import dataclass

import numpy as np

from . import element
from .errors import InvalidArgumentError, OutOfCellError

BARYCENTRIC_TOL = 1e-10


class VelocityDofMap:
    def __init__(self, mesh):
        self.mesh = mesh
        self.n_dofs = 3 * mesh.n_edges
        cd = 3 * mesh.cell_edges[:, :, None] + np.arange(3)[None, None, :]
        cd.setflags(write=False)
        self.cell_dofs = cd  # (nc, 6, 3)
        bmask = np.repeat(mesh.boundary_edge, 3)
        bmask.setflags(write=False)
        self.boundary = bmask
        self.dof_edge = np.repeat(np.arange(mesh.n_edges), 3)
        self.dof_component = np.tile(np.arange(3), mesh.n_edges)

    @property
    def dof_points(self):
        return self.mesh.edge_midpoints[self.dof_edge]

    def __repr__(self):
        return f"VelocityDofMap(n_dofs={self.n_dofs}, n_boundary={int(self.boundary.sum())})"


class PressureDofMap:
    def __init__(self, mesh):
        self.mesh = mesh
        self.n_dofs = mesh.n_vertices
        self.cell_dofs = mesh.cells

    def __repr__(self):
        return f"PressureDofMap(n_dofs={self.n_dofs})"


def build_velocity_dofs(mesh):
    return VelocityDofMap(mesh)


def build_pressure_dofs(mesh):
    return PressureDofMap(mesh)


@dataclass
class DiscreteField:
    """Coefficient vector over a velocity or pressure DOF map."""

    dofmap: object
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.dofmap.n_dofs,):
            raise InvalidArgumentError(
                f"expected {self.dofmap.n_dofs} coefficients, got {self.coeffs.shape}"
            )

    @property
    def mesh(self):
        return self.dofmap.mesh

    @property
    def is_velocity(self):
        return isinstance(self.dofmap, VelocityDofMap)

    def cell_coeffs(self):
        """Local coefficients: (nc, 6, 3) for velocity, (nc, 4) for pressure."""
        return self.coeffs[self.dofmap.cell_dofs]

    def evaluate(self, cell, point):
        return evaluate_field(self, cell, point)

    def gradient(self, cell, point):
        return evaluate_gradient(self, cell, point)

    def __add__(self, other):
        return DiscreteField(self.dofmap, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return DiscreteField(self.dofmap, self.coeffs - other.coeffs)

    def __mul__(self, alpha):
        return DiscreteField(self.dofmap, alpha * self.coeffs)

    __rmul__ = __mul__


def to_reference(mesh, cell, points, check=True):
    """Pull physical points back to the reference cell via F^{-1}."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    xhat = (pts - mesh.centroids[cell]) @ mesh.inv_transposes[cell]
    if check:
        lam = element.eval_p1_basis(xhat)
        if np.any(lam < -BARYCENTRIC_TOL):
            raise OutOfCellError(f"point outside cell {cell}")
    return xhat


def evaluate_field(field, cell, point):
    """Evaluate a field on ``cell`` at physical ``point`` (or (n, 3) points)."""
    single = np.ndim(point) == 1
    xhat = to_reference(field.mesh, cell, point)
    local = field.coeffs[field.dofmap.cell_dofs[cell]]
    if field.is_velocity:
        val = element.eval_edge_basis(xhat) @ local
    else:
        val = element.eval_p1_basis(xhat) @ local
    return val[0] if single else val


def evaluate_gradient(field, cell, point):
    """Physical gradient; (3, 3) Jacobian d u_a / d x_d for velocity fields."""
    single = np.ndim(point) == 1
    mesh = field.mesh
    xhat = to_reference(mesh, cell, point)
    G = mesh.inv_transposes[cell]
    local = field.coeffs[field.dofmap.cell_dofs[cell]]
    if field.is_velocity:
        g = element.eval_edge_basis_grad(xhat) @ G.T  # (n, 6, 3)
        val = np.einsum("ia,nid->nad", local, g)
    else:
        g = element.P1_GRADIENTS @ G.T
        val = np.broadcast_to(local @ g, (len(xhat), 3)).copy()
    return val[0] if single else val


def interpolate_at_midpoints(mesh, dofmap, fn):
    """Velocity field whose DOFs are ``fn`` sampled at the edge midpoints.

    ``fn`` maps an (n, 3) array of points to (n, 3) values.
    """
    vals = np.asarray(fn(mesh.edge_midpoints), dtype=float).reshape(mesh.n_edges, 3)
    return DiscreteField(dofmap, vals.ravel())


def interpolate_at_vertices(mesh, dofmap, fn):
    """Pressure field sampled at the vertices; ``fn`` maps (n, 3) -> (n,)."""
    vals = np.asarray(fn(mesh.vertices), dtype=float).reshape(mesh.n_vertices)
    return DiscreteField(dofmap, vals)


def face_normal_jump_means(field):
    """Integral over each face of the normal jump [n . v], by the face
    edge-midpoint rule (exact: traces are quadratic).

    Returns an array over faces; boundary faces carry n . v.
    """
    mesh = field.mesh
    normals = mesh.outward_face_normals()
    local = field.cell_coeffs()  # (nc, 6, 3)
    jumps = np.zeros(mesh.n_faces)
    areas = mesh.face_areas()
    for f, verts in enumerate(element.LOCAL_FACES):
        # midpoints of the face's three edges, in reference coordinates
        mids = np.array([
            0.5 * (element.REFERENCE_VERTICES[a] + element.REFERENCE_VERTICES[b])
            for a, b in ((verts[0], verts[1]), (verts[0], verts[2]), (verts[1], verts[2]))
        ])
        phi = element.eval_edge_basis(mids)  # (3, 6)
        vals = np.einsum("qi,cia->cqa", phi, local).mean(axis=1)  # (nc, 3)
        flux = np.einsum("ca,ca->c", vals, normals[:, f])
        np.add.at(jumps, mesh.cell_faces[:, f], flux)
    return jumps * areas
