"""Error measures, convergence studies, stability constants and the
element-level identity checks."""

from dataclasses import dataclass, field
import time

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import assembly, element
from .assembly import FormKind, GramKind
from .errors import AssumptionError, InvalidArgumentError, SingularSystemError
from .mesh import build_topology, check_internal_edge_assumption
from .spaces import DiscreteField, build_pressure_dofs, build_velocity_dofs
from .system import BoundarySpec, solve_stokes

ERROR_DEGREE = 8
DENSE_EIG_LIMIT = 5000


# --------------------------------------------------------------------------
# Manufactured solutions.

@dataclass
class ManufacturedCase:
    """Exact Stokes data; all callables are vectorised over (n, 3) points.

    ``grad_u`` returns (n, 3, 3) with [k, a, d] = d u_a / d x_d.
    """

    name: str
    u: object
    grad_u: object
    p: object
    f: object
    domain: str = "box"
    laplacian_u: object = None

    def check(self, n_samples=100, seed=0, step=1e-4, tol=1e-10, scale=1.0):
        """Verify -Lap u + grad p = f and div u = 0 at random points.

        Derivatives are taken by central differences of ``grad_u`` and
        ``p``; for the polynomial cases here (degree <= 3) the second
        difference of a cubic is exact up to roundoff.
        """
        rng = np.random.default_rng(seed)
        x = scale * rng.uniform(-1, 1, size=(n_samples, 3))
        lap = np.zeros((n_samples, 3))
        gp = np.zeros((n_samples, 3))
        for d in range(3):
            e = np.zeros(3)
            e[d] = step
            lap += (self.grad_u(x + e)[:, :, d] - self.grad_u(x - e)[:, :, d]) / (2 * step)
            gp[:, d] = (self.p(x + e) - self.p(x - e)) / (2 * step)
        div = np.trace(self.grad_u(x), axis1=1, axis2=2)
        mom = -lap + gp - self.f(x)
        return max(np.abs(mom).max(), np.abs(div).max()) <= tol * max(1.0, np.abs(gp).max())


def cubic_case(domain="box"):
    """Cubic velocity / quadratic pressure with f = 0 (the ball test)."""

    def u(x):
        x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
        return np.stack([x2**3 - x3**3, x1**3 - x3**3, -x1**3 - x2**3], axis=1)

    def grad_u(x):
        x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
        z = np.zeros_like(x1)
        return np.stack([
            np.stack([z, 3 * x2**2, -3 * x3**2], axis=1),
            np.stack([3 * x1**2, z, -3 * x3**2], axis=1),
            np.stack([-3 * x1**2, -3 * x2**2, z], axis=1),
        ], axis=1)

    def p(x):
        x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
        return 6.0 * (x1 * x2 - x1 * x3 - x2 * x3)

    def f(x):
        return np.zeros((len(x), 3))

    return ManufacturedCase("cubic", u, grad_u, p, f, domain)


def affine_case(domain="box"):
    """u = (x2, 0, 0), p = 0: divergence free and inside the discrete space."""

    def u(x):
        return np.stack([x[:, 1], np.zeros(len(x)), np.zeros(len(x))], axis=1)

    def grad_u(x):
        g = np.zeros((len(x), 3, 3))
        g[:, 0, 1] = 1.0
        return g

    def zero_p(x):
        return np.zeros(len(x))

    def f(x):
        return np.zeros((len(x), 3))

    return ManufacturedCase("affine", u, grad_u, zero_p, f, domain)


def linear_pressure_case(domain="box"):
    """u = (x2, x3, x1), p = x1 + 2 x2 - x3, f = grad p; exact in W_h x Q_h."""
    c = np.array([1.0, 2.0, -1.0])

    def u(x):
        return np.stack([x[:, 1], x[:, 2], x[:, 0]], axis=1)

    def grad_u(x):
        g = np.zeros((len(x), 3, 3))
        g[:, 0, 1] = g[:, 1, 2] = g[:, 2, 0] = 1.0
        return g

    def p(x):
        return x @ c

    def f(x):
        return np.broadcast_to(c, (len(x), 3)).copy()

    return ManufacturedCase("linear-pressure", u, grad_u, p, f, domain)


CASES = {"cubic": cubic_case, "affine": affine_case, "linear-pressure": linear_pressure_case}


# --------------------------------------------------------------------------
# Norms.

def _field_values(mesh, rule, u_coeffs=None, p_coeffs=None, vdofs=None, pdofs=None):
    out = {}
    if u_coeffs is not None:
        local = u_coeffs[vdofs.cell_dofs]  # (nc, 6, 3)
        phi = element.eval_edge_basis(rule.points)
        out["u"] = np.einsum("qi,cia->cqa", phi, local)
        G = assembly.physical_basis_gradients(mesh, slice(None), rule.points)
        out["grad_u"] = np.einsum("cia,cqid->cqad", local, G)
    if p_coeffs is not None:
        lam = element.eval_p1_basis(rule.points)
        out["p"] = lam @ p_coeffs[pdofs.cell_dofs].T  # (nq, nc)
        out["p"] = out["p"].T
    return out


def error_norms(solution, case, pressure_modulo_constant=True, degree=ERROR_DEGREE):
    """L2 velocity, broken H1 velocity and L2 pressure errors.

    Cellwise quadrature exact to ``degree`` (default 8; the squared error of
    a cubic exact solution has degree 6).  With ``pressure_modulo_constant``
    both pressures are shifted to zero mean before comparison.
    """
    u_field, p_field = solution.velocity, solution.pressure
    mesh = u_field.mesh
    rule = element.volume_quadrature(degree)
    x = assembly.quadrature_points_physical(mesh, rule)
    nc, nq = x.shape[:2]
    xf = x.reshape(-1, 3)
    vals = _field_values(mesh, rule, u_field.coeffs, p_field.coeffs, u_field.dofmap, p_field.dofmap)
    w = mesh.det_jacobians[:, None] * rule.weights[None, :]

    eu = vals["u"] - case.u(xf).reshape(nc, nq, 3)
    eg = vals["grad_u"] - case.grad_u(xf).reshape(nc, nq, 3, 3)
    pe = case.p(xf).reshape(nc, nq)
    ph = vals["p"]
    if pressure_modulo_constant:
        vol = w.sum()
        pe = pe - (w * pe).sum() / vol
        ph = ph - (w * ph).sum() / vol
    ep = ph - pe
    return (
        float(np.sqrt((w[:, :, None] * eu**2).sum())),
        float(np.sqrt((w[:, :, None, None] * eg**2).sum())),
        float(np.sqrt((w * ep**2).sum())),
    )


def boundary_pressure_error(solution, case, pressure_modulo_constant=True, degree=ERROR_DEGREE):
    """||p - p_h||_{L2(boundary)}, with both pressures shifted by their
    volume means (the same normalization as ``error_norms``)."""
    p_field = solution.pressure
    mesh = p_field.mesh
    shift_h = shift_e = 0.0
    if pressure_modulo_constant:
        rule = element.volume_quadrature(degree)
        x = assembly.quadrature_points_physical(mesh, rule)
        nc, nq = x.shape[:2]
        ph = _field_values(mesh, rule, p_coeffs=p_field.coeffs, pdofs=p_field.dofmap)["p"]
        w = mesh.det_jacobians[:, None] * rule.weights[None, :]
        vol = w.sum()
        shift_h = (w * ph).sum() / vol
        shift_e = (w * case.p(x.reshape(-1, 3)).reshape(nc, nq)).sum() / vol

    tri = element.triangle_quadrature(degree)
    bary = np.column_stack([1.0 - tri.points.sum(axis=1), tri.points])     # (nq, 3)
    faces = mesh.faces[mesh.boundary_face]
    v = mesh.vertices[faces]                                               # (nf, 3, 3)
    area2 = np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)
    xq = np.einsum("qa,fad->fqd", bary, v)
    ph = p_field.coeffs[faces] @ bary.T - shift_h                          # (nf, nq)
    pe = case.p(xq.reshape(-1, 3)).reshape(ph.shape) - shift_e
    return float(np.sqrt((area2[:, None] * tri.weights[None, :] * (ph - pe) ** 2).sum()))


def interpolant_solution(mesh, case):
    """Midpoint interpolant of u and vertex interpolant of p, as a solution."""
    from .spaces import interpolate_at_midpoints, interpolate_at_vertices
    from .system import StokesSolution

    vd, pd = build_velocity_dofs(mesh), build_pressure_dofs(mesh)
    uf = interpolate_at_midpoints(mesh, vd, case.u)
    pf = interpolate_at_vertices(mesh, pd, case.p)
    return StokesSolution(uf.coeffs, pf.coeffs, 0.0, {}, uf, pf)


def triple_norm(v, q, mesh=None):
    """(a_h(v, v) + ||q||^2 + h^2 ||grad q||^2)^(1/2) via assembled Gram matrices."""
    mesh = mesh or v.mesh
    A = assembly.assemble_velocity_operator(mesh, v.dofmap, FormKind.LAPLACIAN)
    M = assembly.assemble_pressure_gram(mesh, q.dofmap, GramKind.MASS)
    K = assembly.assemble_pressure_gram(mesh, q.dofmap, GramKind.STIFFNESS)
    val = v.coeffs @ (A @ v.coeffs) + q.coeffs @ (M @ q.coeffs) + mesh.h**2 * (q.coeffs @ (K @ q.coeffs))
    return float(np.sqrt(max(val, 0.0)))


# --------------------------------------------------------------------------
# Stability constants.

def estimate_infsup(mesh, kind=FormKind.B_CONSISTENT, check_assumption=True, max_dofs=20000):
    """Discrete inf-sup constant in the norm (||q||^2 + h^2 ||grad q||^2)^(1/2).

    beta^2 is the smallest eigenvalue of (B A^{-1} B^T) q = mu (M + h^2 K) q
    over zero-mean q, with A the Laplacian on interior velocity DOFs.
    A is factorised sparsely; the pressure-space eigenproblem is dense.
    """
    kind = FormKind(kind)
    if check_assumption:
        report = check_internal_edge_assumption(mesh)
        if not report.passed:
            raise AssumptionError(
                f"{len(report.offending_cells)} cells have fewer than three internal edges"
            )
    vd, pd = build_velocity_dofs(mesh), build_pressure_dofs(mesh)
    free = ~vd.boundary
    if free.sum() == 0:
        raise SingularSystemError("no interior velocity DOFs", hint="mesh too coarse")
    if free.sum() > max_dofs:
        raise InvalidArgumentError(f"{free.sum()} velocity DOFs exceed max_dofs={max_dofs}")
    A = assembly.assemble_velocity_operator(mesh, vd, FormKind.LAPLACIAN)[free][:, free]
    B = assembly.assemble_divergence_operator(mesh, vd, pd, kind)[:, free]
    try:
        lu = spla.splu(A.tocsc())
    except RuntimeError as exc:
        raise SingularSystemError(f"velocity operator singular: {exc}") from None
    X = lu.solve(B.T.toarray())
    S = B @ X
    S = 0.5 * (S + S.T)
    M = assembly.assemble_pressure_gram(mesh, pd, GramKind.MASS).toarray()
    K = assembly.assemble_pressure_gram(mesh, pd, GramKind.STIFFNESS).toarray()
    N = M + mesh.h**2 * K
    Z = scipy.linalg.null_space(M.sum(axis=0)[None, :])
    mu = scipy.linalg.eigh(Z.T @ S @ Z, Z.T @ N @ Z, eigvals_only=True, subset_by_index=[0, 0])
    return float(np.sqrt(max(mu[0], 0.0)))


@dataclass
class KornResult:
    alpha: float
    eigenvector: np.ndarray = None


def _min_generalized_eig(S, L, want_vector=False):
    n = S.shape[0]
    if n <= DENSE_EIG_LIMIT:
        Sd = S.toarray() if sp.issparse(S) else S
        Ld = L.toarray() if sp.issparse(L) else L
        vals, vecs = scipy.linalg.eigh(Sd, Ld, subset_by_index=[0, 0])
        return vals[0], vecs[:, 0]
    vals, vecs = spla.eigsh(S.tocsc(), k=1, M=L.tocsc(), sigma=0.0, which="LM")
    return vals[0], vecs[:, 0]


def korn_constant(mesh, constrained=True):
    """Smallest generalized eigenvalue of STRAIN vs LAPLACIAN.

    With ``constrained`` the boundary DOFs are removed (homogeneous
    Dirichlet data).  Without it, the componentwise constants (the common
    kernel) are projected out and the minimum is attained by rigid rotations.
    """
    vd = build_velocity_dofs(mesh)
    S = assembly.assemble_velocity_operator(mesh, vd, FormKind.STRAIN)
    L = assembly.assemble_velocity_operator(mesh, vd, FormKind.LAPLACIAN)
    if constrained:
        free = ~vd.boundary
        alpha, vec = _min_generalized_eig(S[free][:, free], L[free][:, free])
        full = np.zeros(vd.n_dofs)
        full[free] = vec
        return KornResult(float(alpha), full)
    consts = np.zeros((vd.n_dofs, 3))
    for c in range(3):
        consts[c::3, c] = 1.0
    Z = scipy.linalg.null_space(consts.T)
    Sd, Ld = Z.T @ S.toarray() @ Z, Z.T @ L.toarray() @ Z
    vals, vecs = scipy.linalg.eigh(Sd, Ld, subset_by_index=[0, 0])
    return KornResult(float(max(vals[0], 0.0)) if abs(vals[0]) < 1e-10 else float(vals[0]), Z @ vecs[:, 0])


def estimate_korn(meshes):
    return [korn_constant(m).alpha for m in meshes]


# --------------------------------------------------------------------------
# Verfuerth candidate field.

def edge_tangential_derivative(mesh, q_coeffs):
    """t_E . grad q on every edge, from the cell-averaged gradient of q."""
    g = np.einsum("cde,ke->ckd", mesh.inv_transposes, element.P1_GRADIENTS)
    grads = np.einsum("ck,ckd->cd", q_coeffs[mesh.cells], g)  # (nc, 3)
    sums = np.zeros((mesh.n_edges, 3))
    counts = np.zeros(mesh.n_edges)
    for k in range(6):
        np.add.at(sums, mesh.cell_edges[:, k], grads)
        np.add.at(counts, mesh.cell_edges[:, k], 1.0)
    avg = sums / counts[:, None]
    t = mesh.vertices[mesh.edges[:, 1]] - mesh.vertices[mesh.edges[:, 0]]
    t /= np.linalg.norm(t, axis=1)[:, None]
    return np.einsum("ed,ed->e", t, avg), t


def verfurth_candidate(mesh, q, scale=None, interior=None):
    """v* with DOF vector scale * (t_E . grad q) t_E on interior edges.

    ``scale`` defaults to -h^2.  ``interior`` overrides the edge mask
    (default: edges not on the boundary).
    """
    vd = build_velocity_dofs(mesh)
    qc = q.coeffs if isinstance(q, DiscreteField) else np.asarray(q, float)
    if scale is None:
        scale = -mesh.h**2
    mask = ~mesh.boundary_edge if interior is None else np.asarray(interior, bool)
    td, t = edge_tangential_derivative(mesh, qc)
    vals = scale * td[:, None] * t * mask[:, None]
    return DiscreteField(vd, vals.ravel())


# --------------------------------------------------------------------------
# Identity verifiers.

BULK_CONSTANT = 4.0 / 9.0
BOUNDARY_CONSTANT = 4.0 / 15.0
COMBINED_CONSTANT = 8.0 / 45.0


def _reference_face_data():
    R = element.REFERENCE_VERTICES
    out = []
    for i, (a, b, c) in enumerate(element.LOCAL_FACES):
        P = R[[a, b, c]]
        n = np.cross(P[1] - P[0], P[2] - P[0])
        area = 0.5 * np.linalg.norm(n)
        n /= np.linalg.norm(n)
        if n @ (P[0] - R[i]) < 0:
            n = -n
        out.append((P, n, area))
    return out


def verify_appendix_reference(b, combined_constant=COMBINED_CONSTANT, degree=6):
    """Per-edge bulk / boundary / total terms of b~_T(v*, q) for q = b . x on
    the reference cell, each evaluated by quadrature and compared with the
    closed forms (t_E . b)^2 * {4/9, 4/15, combined_constant}.

    The total is computed twice: as bulk minus boundary term, and directly as
    the volume integral (div v_E, q) with v_E = -(t_E . b) t_E phi_E.
    """
    b = np.asarray(b, dtype=float)
    vol = element.volume_quadrature(degree)
    tri = element.triangle_quadrature(degree)
    faces = _reference_face_data()
    phi_v = element.eval_edge_basis(vol.points)  # (nq, 6)
    grad_v = element.eval_edge_basis_grad(vol.points)  # (nq, 6, 3)
    q_v = vol.points @ b
    rows = []
    for k, t in enumerate(element.EDGE_TANGENTS):
        tb = float(t @ b)
        bulk = tb * tb * (vol.weights @ phi_v[:, k])
        boundary = 0.0
        for P, n, area in faces:
            x = P[0] + tri.points[:, :1] * (P[1] - P[0]) + tri.points[:, 1:] * (P[2] - P[0])
            vals = element.eval_edge_basis(x)[:, k] * (x @ b)
            boundary += (n @ t) * 2.0 * area * (tri.weights @ vals)
        boundary *= tb
        direct = -tb * (vol.weights @ ((grad_v[:, k, :] @ t) * q_v))
        rows.append({
            "edge": k, "tb2": tb * tb, "bulk": bulk, "boundary": boundary,
            "total": bulk - boundary, "total_direct": direct,
        })
    dev = {
        "bulk": max(abs(r["bulk"] - BULK_CONSTANT * r["tb2"]) for r in rows),
        "boundary": max(abs(r["boundary"] - BOUNDARY_CONSTANT * r["tb2"]) for r in rows),
        "total": max(abs(r["total"] - combined_constant * r["tb2"]) for r in rows),
        "total_direct": max(abs(r["total_direct"] - combined_constant * r["tb2"]) for r in rows),
    }
    return {
        "edges": rows,
        "sum_total": sum(r["total"] for r in rows),
        "sum_tb2": sum(r["tb2"] for r in rows),
        "deviation": dev,
        "max_deviation": max(dev.values()),
    }


def reference_mesh():
    return build_topology(element.REFERENCE_VERTICES, [[0, 1, 2, 3]])


def verify_face_jacobian_identity(mesh, cell, edge, face):
    """Both sides of n.t_E |F|/|Fhat| = det(A) ||A that_E||^{-1} nhat.that_E.

    The left side uses only physical geometry (vertex coordinates), the
    right side only reference geometry and the cell's Jacobian A.
    ``edge`` and ``face`` are global indices incident to ``cell``; the edge
    must not lie in the face for the relative difference to be meaningful.
    """
    local_edges = np.flatnonzero(mesh.cell_edges[cell] == edge)
    local_faces = np.flatnonzero(mesh.cell_faces[cell] == face)
    if len(local_edges) != 1 or len(local_faces) != 1:
        raise InvalidArgumentError("edge and face must belong to the cell")
    le, lf = int(local_edges[0]), int(local_faces[0])
    a, b = element.LOCAL_EDGES[le]
    fa, fb, fc = element.LOCAL_FACES[lf]

    x = mesh.vertices[mesh.cells[cell]]
    t = x[b] - x[a]
    t /= np.linalg.norm(t)
    n = np.cross(x[fb] - x[fa], x[fc] - x[fa])
    area = 0.5 * np.linalg.norm(n)
    n /= np.linalg.norm(n)
    if n @ (x[fa] - x[lf]) < 0:
        n = -n
    lhs = (n @ t) * area / element.REFERENCE_FACE_AREA

    R = element.REFERENCE_VERTICES
    that = element.EDGE_TANGENTS[le]
    nhat = np.cross(R[fb] - R[fa], R[fc] - R[fa])
    nhat /= np.linalg.norm(nhat)
    if nhat @ (R[fa] - R[lf]) < 0:
        nhat = -nhat
    A = mesh.jacobians[cell]
    rhs = np.linalg.det(A) / np.linalg.norm(A @ that) * (nhat @ that)
    denom = max(abs(lhs), abs(rhs))
    rel = abs(lhs - rhs) / denom if denom > 0 else 0.0
    return {"lhs": float(lhs), "rhs": float(rhs), "relative_difference": float(rel),
            "edge_in_face": bool(set((a, b)) <= {fa, fb, fc})}


def random_affine_cell(rng, max_condition=10.0):
    """A random affine image of the reference cell with cond(A) <= max_condition."""
    while True:
        Q1, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        Q2, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        s = np.exp(rng.uniform(0, np.log(max_condition), size=3))
        s /= s.min()
        A = Q1 @ np.diag(s) @ Q2 * rng.uniform(0.1, 10.0)
        if np.linalg.cond(A) <= max_condition * (1 + 1e-12):
            return element.REFERENCE_VERTICES @ A.T + rng.normal(size=3)


def verify_element_identities(tol=1e-12):
    """Element identity checks; returns {name: max deviation}."""
    rng = np.random.default_rng(12345)
    pts = rng.uniform(-1, 1, size=(100, 3))
    nodal = element.nodal_matrix(element.NODE_BASIS_COEFFS)
    out = {
        "lagrange": float(np.abs(nodal - np.eye(6)).max()),
        "partition_of_unity": float(np.abs(element.eval_basis(pts).sum(axis=1) - 1).max()),
        "gradient_sum_zero": float(np.abs(element.eval_basis_grad(pts).sum(axis=1)).max()),
    }
    span = np.array([
        [1, 0, 0, 0, 0, 0, 0], [0, 1, 0, 0, 0, 0, 0], [0, 0, 1, 0, 0, 0, 0],
        [0, 0, 0, 1, 0, 0, 0], [0, 0, 0, 0, 1, -1, 0], [0, 0, 0, 0, 0, 1, -1],
    ], dtype=float)
    N = element.nodal_matrix(span)
    det = abs(np.linalg.det(N))
    out["nodal_map_invertible"] = 0.0 if det > 1e-8 and np.isfinite(np.linalg.cond(N)) else 1.0
    sumsq = element.nodal_matrix([[0, 0, 0, 0, 1, 1, 1]])
    one = element.nodal_matrix([[1, 0, 0, 0, 0, 0, 0]])
    out["sum_of_squares_nodal"] = float(np.abs(sumsq - one).max())
    rule = element.edge_midpoint_quadrature()
    worst = 0.0
    for row in span:
        exact = float(element.integrate_polynomial_reference(row))
        approx = rule.weights @ (element.monomial_values(rule.points) @ row)
        worst = max(worst, abs(exact - approx))
    out["midpoint_rule_exact_on_V"] = worst
    return out


def run_verification_suite(combined_constant=COMBINED_CONSTANT, n_random=50, tol=1e-12):
    """All element and reference-cell checks: {name: (deviation, passed)}."""
    results = {k: v for k, v in verify_element_identities().items()}
    rng = np.random.default_rng(2024)
    e1 = verify_appendix_reference([1.0, 0.0, 0.0], combined_constant)
    # quadrature sum over the six edges vs. the closed form constant * sum (t_E . e1)^2
    results["reference_cell_e1_sum"] = abs(e1["sum_total"] - combined_constant * e1["sum_tb2"])
    dev = {"bulk": 0.0, "boundary": 0.0, "total": 0.0, "total_direct": 0.0}
    for _ in range(n_random):
        rep = verify_appendix_reference(rng.normal(size=3), combined_constant)
        for k in dev:
            dev[k] = max(dev[k], rep["deviation"][k])
    results.update({f"reference_cell_{k}": v for k, v in dev.items()})
    worst = 0.0
    for _ in range(100):
        m = build_topology(random_affine_cell(rng), [[0, 1, 2, 3]])
        for le in range(6):
            for lf in range(4):
                rep = verify_face_jacobian_identity(m, 0, m.cell_edges[0, le], m.cell_faces[0, lf])
                if not rep["edge_in_face"]:
                    worst = max(worst, rep["relative_difference"])
    results["face_jacobian_identity"] = worst
    return {k: (float(v), bool(v <= tol)) for k, v in results.items()}


# --------------------------------------------------------------------------
# Convergence studies.

CSV_HEADER = "h,ndof_u,ndof_p,eL2u,eH1u,eL2p,slope_eL2u,slope_eH1u,slope_eL2p,seconds"


@dataclass
class ConvergenceRow:
    h: float
    ndof_u: int
    ndof_p: int
    eL2u: float
    eH1u: float
    eL2p: float
    seconds: float
    eL2p_boundary: float = float("nan")


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)
    error: str = None

    def slopes(self):
        """Observed orders log(e_c / e_f) / log(h_c / h_f) between consecutive rows."""
        out = []
        for c, f in zip(self.rows[:-1], self.rows[1:]):
            r = np.log(c.h / f.h)
            out.append(tuple(np.log(getattr(c, k) / getattr(f, k)) / r for k in ("eL2u", "eH1u", "eL2p")))
        return out

    def finest_slopes(self):
        return self.slopes()[-1]

    def to_csv(self):
        lines = [CSV_HEADER]
        slopes = [None] + self.slopes()
        for row, s in zip(self.rows, slopes):
            sl = ["", "", ""] if s is None else [format(v, ".17g") for v in s]
            vals = [format(row.h, ".17g"), str(row.ndof_u), str(row.ndof_p),
                    format(row.eL2u, ".17g"), format(row.eH1u, ".17g"), format(row.eL2p, ".17g"),
                    *sl, format(row.seconds, ".6f")]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"


def run_convergence_study(case, meshes, form=FormKind.B_CONSISTENT, operator=FormKind.LAPLACIAN):
    """Solve ``case`` on each mesh with exact Dirichlet data and zero-mean
    pressure; collect errors.  A solver failure stops the study and is
    recorded in ``table.error`` with the rows computed so far."""
    if len(meshes) < 3:
        raise InvalidArgumentError("a convergence study needs at least three meshes")
    table = ConvergenceTable()
    for mesh in meshes:
        t0 = time.perf_counter()
        try:
            sol = solve_stokes(mesh, BoundarySpec.full(case.u), case.f, form, operator,
                               mean_constraint=True)
        except SingularSystemError as exc:
            table.error = str(exc)
            break
        e = error_norms(sol, case)
        eb = boundary_pressure_error(sol, case)
        table.rows.append(ConvergenceRow(mesh.h, sol.velocity.dofmap.n_dofs, sol.pressure.dofmap.n_dofs,
                                         *e, time.perf_counter() - t0, eb))
    return table


# --------------------------------------------------------------------------
# Channel flow with a natural outflow boundary.

POISEUILLE_EXTENT = (3.0, 1.0, 0.1)
POISEUILLE_SUBDIVISIONS = (30, 10, 2)


def poiseuille_inflow(x):
    out = np.zeros((len(x), 3))
    out[:, 0] = x[:, 1] * (1.0 - x[:, 1])
    return out


def poiseuille_boundary(extent=POISEUILLE_EXTENT, tol=1e-9):
    """Parabolic inflow at x1 = 0, no-slip at x2 in {0, L2}, u3 = 0 on the
    two x3 planes (the thin slab approximates a 2D channel) and a natural
    outflow boundary at x1 = L1."""
    L1, L2, L3 = extent
    spec = BoundarySpec()
    spec.add(lambda x: np.abs(x[:, 0]) < tol, (0, 1, 2), poiseuille_inflow)
    spec.add(lambda x: (np.abs(x[:, 1]) < tol) | (np.abs(x[:, 1] - L2) < tol), (0, 1, 2))
    spec.add(lambda x: (np.abs(x[:, 2]) < tol) | (np.abs(x[:, 2] - L3) < tol), (2,))
    return spec


def boundary_flux(field, predicate):
    """Sum of int_F n . u_h over boundary faces whose centroid satisfies
    ``predicate``, by the edge-midpoint rule on each face."""
    mesh = field.mesh
    bf = np.flatnonzero(mesh.boundary_face)
    cent = mesh.vertices[mesh.faces[bf]].mean(axis=1)
    bf = bf[np.asarray(predicate(cent), dtype=bool)]
    cells = mesh.face_cells[bf, 0]
    local = np.argmax(mesh.cell_faces[cells] == bf[:, None], axis=1)
    normals = mesh.outward_face_normals()[cells, local]
    total = 0.0
    for f, cell, n in zip(bf, cells, normals):
        a, b, c = mesh.faces[f]
        pts = 0.5 * mesh.vertices[[a, a, b]] + 0.5 * mesh.vertices[[b, c, c]]
        vals = field.evaluate(cell, pts)
        total += mesh.face_areas()[f] * float(np.mean(vals @ n))
    return total


def mirror_symmetry_defect(field, axis=1, center=0.5, tol=1e-9):
    """Relative defect of u under reflection x_axis -> 2 center - x_axis.

    Compares DOFs at mirrored edge midpoints (the mesh is mirror-symmetric);
    the reflected component changes sign.
    """
    mesh = field.mesh
    X = mesh.edge_midpoints
    Y = X.copy()
    Y[:, axis] = 2 * center - Y[:, axis]
    scale = np.abs(X).max() + 1.0
    keys = {tuple(np.round(x / (tol * scale)).astype(np.int64)): i for i, x in enumerate(X)}
    partner = np.array([keys.get(tuple(np.round(y / (tol * scale)).astype(np.int64)), -1) for y in Y])
    if np.any(partner < 0):
        raise InvalidArgumentError("mesh is not mirror-symmetric about the requested plane")
    U = field.coeffs.reshape(-1, 3)
    V = U[partner].copy()
    V[:, axis] *= -1.0
    return float(np.linalg.norm(U - V) / max(np.linalg.norm(U), 1e-300))


def strip_pressure_means(pressure, n_strips, length):
    """Volume-weighted mean pressure over cells binned by centroid x1."""
    mesh = pressure.mesh
    cell_p = pressure.coeffs[mesh.cells].mean(axis=1)
    bins = np.clip((mesh.centroids[:, 0] / length * n_strips).astype(int), 0, n_strips - 1)
    num = np.bincount(bins, weights=cell_p * mesh.volumes, minlength=n_strips)
    den = np.bincount(bins, weights=mesh.volumes, minlength=n_strips)
    return num / den


@dataclass
class PoiseuilleReport:
    operator: str
    solution: object
    inflow: float
    outflow: float
    flux_balance: float
    symmetry_defect: float
    strip_pressures: np.ndarray
    monotone_pressure: bool
    seconds: float
    pressure_integral: float = 0.0

    @property
    def passed(self):
        return self.flux_balance <= 0.02 and self.symmetry_defect <= 0.02 and self.monotone_pressure


def run_poiseuille(operator=FormKind.LAPLACIAN, subdivisions=POISEUILLE_SUBDIVISIONS,
                   extent=POISEUILLE_EXTENT, method="auto"):
    """Channel flow solved with the b~ form and no pressure mean constraint
    (the natural outflow boundary fixes the pressure level)."""
    from .mesh import generate_box_mesh

    t0 = time.perf_counter()
    mesh = generate_box_mesh(extent, subdivisions)
    sol = solve_stokes(mesh, poiseuille_boundary(extent), None, FormKind.B_TILDE, operator,
                       mean_constraint=False, method=method)
    tol = 1e-9
    L1, L2 = extent[0], extent[1]
    inflow = -boundary_flux(sol.velocity, lambda x: np.abs(x[:, 0]) < tol)
    outflow = boundary_flux(sol.velocity, lambda x: np.abs(x[:, 0] - L1) < tol)
    strips = strip_pressure_means(sol.pressure, subdivisions[0], L1)
    return PoiseuilleReport(
        FormKind(operator).value, sol, inflow, outflow,
        abs(inflow - outflow) / abs(inflow),
        mirror_symmetry_defect(sol.velocity, axis=1, center=L2 / 2),
        strips, bool(np.all(np.diff(strips) < 0)), time.perf_counter() - t0,
        float(assembly.assemble_pressure_weights(mesh, sol.pressure.dofmap) @ sol.p),
    )
