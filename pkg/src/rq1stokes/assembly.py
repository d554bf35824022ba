"""Element kernels and global assembly of the Stokes operators.

Sign conventions (fixed here once):

* ``B_CONSISTENT``: B[q, v] = -sum_T (v, grad q)_T
* ``B_TILDE``:      B[q, v] =  sum_T (div v, q)_T

Both matrices represent the divergence form b(v, q), so they agree on
conforming fields that vanish on the boundary.  The saddle system built in
:mod:`rq1stokes.system` uses the gradient block -B^T in the momentum rows.

Element matrices are computed cell-chunk by cell-chunk (optionally on a
thread pool capped by the ``RQ1_THREADS`` environment variable) and merged
in cell order, so assembly output is bitwise reproducible.
"""

import enum
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.io
import scipy.sparse as sp

from . import element

DEFAULT_DEGREE = 4
CHUNK_SIZE = 4096


class FormKind(enum.Enum):
    LAPLACIAN = "laplacian"
    STRAIN = "strain"
    B_CONSISTENT = "b"
    B_TILDE = "btilde"


class GramKind(enum.Enum):
    MASS = "mass"
    STIFFNESS = "stiffness"


def _threads():
    try:
        return max(1, int(os.environ.get("RQ1_THREADS", "1")))
    except ValueError:
        return 1


def _map_chunks(fn, n_cells):
    """Apply ``fn(slice)`` over cell chunks; results concatenated in order."""
    slices = [slice(s, min(s + CHUNK_SIZE, n_cells)) for s in range(0, n_cells, CHUNK_SIZE)]
    nthreads = min(_threads(), len(slices))
    if nthreads > 1:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            parts = list(pool.map(fn, slices))
    else:
        parts = [fn(s) for s in slices]
    return np.concatenate(parts, axis=0)


def _to_csr(rows, cols, vals, shape):
    mat = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def physical_basis_gradients(mesh, cells, qpoints):
    """(nc, nq, 6, 3) gradients of the edge-ordered shape functions."""
    gref = element.eval_edge_basis_grad(qpoints)  # (nq, 6, 3)
    return np.einsum("cde,qie->cqid", mesh.inv_transposes[cells], gref)


def _check_kind(kind, allowed):
    kind = FormKind(kind)
    if kind not in allowed:
        raise ValueError(f"form kind {kind} not allowed here")
    return kind


def velocity_element_matrices(mesh, kind, cells=slice(None), degree=DEFAULT_DEGREE):
    """Element matrices, shape (nc, 6, 3, 6, 3) indexed (i, a, j, b)."""
    kind = _check_kind(kind, (FormKind.LAPLACIAN, FormKind.STRAIN))
    rule = element.volume_quadrature(degree)
    G = physical_basis_gradients(mesh, cells, rule.points)
    wdet = mesh.det_jacobians[cells][:, None] * rule.weights[None, :]  # (nc, nq)
    lap = np.einsum("cq,cqid,cqjd->cij", wdet, G, G)
    eye = np.eye(3)
    out = np.einsum("cij,ab->ciajb", lap, eye)
    if kind is FormKind.STRAIN:
        # 2 eps(phi_i e_a) : eps(phi_j e_b) = delta_ab g_i.g_j + g_i[b] g_j[a]
        out = out + np.einsum("cq,cqib,cqja->ciajb", wdet, G, G)
    return out


def assemble_velocity_operator(mesh, vdofs, kind=FormKind.LAPLACIAN, degree=DEFAULT_DEGREE):
    """Global LAPLACIAN or STRAIN matrix over all velocity DOFs (CSR)."""
    kind = _check_kind(kind, (FormKind.LAPLACIAN, FormKind.STRAIN))
    vals = _map_chunks(
        lambda s: velocity_element_matrices(mesh, kind, s, degree), mesh.n_cells
    )
    dofs = vdofs.cell_dofs  # (nc, 6, 3)
    rows = np.broadcast_to(dofs[:, :, :, None, None], vals.shape)
    cols = np.broadcast_to(dofs[:, None, None, :, :], vals.shape)
    return _to_csr(rows, cols, vals, (vdofs.n_dofs, vdofs.n_dofs))


def divergence_element_matrices(mesh, kind, cells=slice(None), degree=DEFAULT_DEGREE):
    """Element matrices, shape (nc, 4, 6, 3) indexed (pressure k, edge j, comp a)."""
    kind = _check_kind(kind, (FormKind.B_CONSISTENT, FormKind.B_TILDE))
    rule = element.volume_quadrature(degree)
    det = mesh.det_jacobians[cells]
    if kind is FormKind.B_CONSISTENT:
        phi = element.eval_edge_basis(rule.points)  # (nq, 6)
        int_phi = rule.weights @ phi  # (6,)
        grad_lam = np.einsum("cde,ke->ckd", mesh.inv_transposes[cells], element.P1_GRADIENTS)
        return -np.einsum("c,j,cka->ckja", det, int_phi, grad_lam)
    G = physical_basis_gradients(mesh, cells, rule.points)  # (nc, nq, 6, 3)
    lam = element.eval_p1_basis(rule.points)  # (nq, 4)
    return np.einsum("c,q,qk,cqja->ckja", det, rule.weights, lam, G)


def assemble_divergence_operator(mesh, vdofs, pdofs, kind=FormKind.B_CONSISTENT,
                                 degree=DEFAULT_DEGREE):
    """Divergence matrix B (rows: pressure DOFs, cols: velocity DOFs)."""
    kind = _check_kind(kind, (FormKind.B_CONSISTENT, FormKind.B_TILDE))
    vals = _map_chunks(
        lambda s: divergence_element_matrices(mesh, kind, s, degree), mesh.n_cells
    )
    rows = np.broadcast_to(pdofs.cell_dofs[:, :, None, None], vals.shape)
    cols = np.broadcast_to(vdofs.cell_dofs[:, None, :, :], vals.shape)
    return _to_csr(rows, cols, vals, (pdofs.n_dofs, vdofs.n_dofs))


def quadrature_points_physical(mesh, rule, cells=slice(None)):
    return np.einsum("cde,qe->cqd", mesh.jacobians[cells], rule.points) + mesh.centroids[cells][:, None, :]


def assemble_rhs(mesh, vdofs, f, degree=DEFAULT_DEGREE):
    """Load vector (f, v) for a vectorised ``f``: (n, 3) points -> (n, 3)."""
    rule = element.volume_quadrature(degree)
    phi = element.eval_edge_basis(rule.points)  # (nq, 6)

    def chunk(s):
        x = quadrature_points_physical(mesh, rule, s)
        nc, nq = x.shape[:2]
        fx = np.asarray(f(x.reshape(-1, 3)), dtype=float).reshape(nc, nq, 3)
        return np.einsum("c,q,qj,cqa->cja", mesh.det_jacobians[s], rule.weights, phi, fx)

    vals = _map_chunks(chunk, mesh.n_cells)
    out = np.zeros(vdofs.n_dofs)
    np.add.at(out, vdofs.cell_dofs.ravel(), vals.ravel())
    return out


def assemble_pressure_gram(mesh, pdofs, weight=GramKind.MASS, degree=2):
    """P1 mass matrix (int lam_i lam_j) or stiffness matrix (int grad.grad)."""
    weight = GramKind(weight)
    det = mesh.det_jacobians
    if weight is GramKind.MASS:
        rule = element.volume_quadrature(degree)
        lam = element.eval_p1_basis(rule.points)
        ref = np.einsum("q,qi,qj->ij", rule.weights, lam, lam)
        vals = det[:, None, None] * ref[None]
    else:
        g = np.einsum("cde,ke->ckd", mesh.inv_transposes, element.P1_GRADIENTS)
        vals = element.REFERENCE_VOLUME * det[:, None, None] * np.einsum("cid,cjd->cij", g, g)
    dofs = pdofs.cell_dofs
    rows = np.broadcast_to(dofs[:, :, None], vals.shape)
    cols = np.broadcast_to(dofs[:, None, :], vals.shape)
    return _to_csr(rows, cols, vals, (pdofs.n_dofs, pdofs.n_dofs))


def assemble_pressure_weights(mesh, pdofs):
    """m_i = int_Omega lam_i (the zero-mean constraint row)."""
    out = np.zeros(pdofs.n_dofs)
    np.add.at(out, pdofs.cell_dofs.ravel(), np.repeat(mesh.volumes / 4.0, 4))
    return out


def assemble_boundary_flux_load(mesh, pdofs, g, degree=6):
    """Vector int_{dOmega} (g . n) lam_i dS over all boundary faces."""
    rule = element.triangle_quadrature(degree)
    bf = np.flatnonzero(mesh.boundary_face)
    cells = mesh.face_cells[bf, 0]
    local = np.argmax(mesh.cell_faces[cells] == bf[:, None], axis=1)
    normals = mesh.outward_face_normals()[cells, local]
    verts = mesh.faces[bf]
    x = mesh.vertices[verts]  # (nb, 3, 3)
    s, t = rule.points[:, 0], rule.points[:, 1]
    lam = np.stack([1 - s - t, s, t], axis=1)  # (nq, 3)
    pts = np.einsum("qk,fkd->fqd", lam, x)
    gv = np.asarray(g(pts.reshape(-1, 3)), dtype=float).reshape(len(bf), len(s), 3)
    gn = np.einsum("fqd,fd->fq", gv, normals)
    area2 = 2.0 * mesh.face_areas()[bf]
    vals = np.einsum("f,q,fq,qk->fk", area2, rule.weights, gn, lam)
    out = np.zeros(pdofs.n_dofs)
    np.add.at(out, verts.ravel(), vals.ravel())
    return out


def export_matrix_market(path, matrix, comment=""):
    scipy.io.mmwrite(path, sp.coo_matrix(matrix), comment=comment)
