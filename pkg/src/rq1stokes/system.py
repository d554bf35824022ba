"""Boundary conditions, the bordered saddle-point system and its solution.

The discrete problem reads

    [  A   -B^T   0 ] [u]   [f]
    [ -B    0     m ] [p] = [g]
    [  0    m^T   0 ] [l]   [0]

where B is the divergence matrix of :mod:`rq1stokes.assembly`, m_i = int lam_i
is the optional zero-mean pressure row and l its Lagrange multiplier.  The
matrix is symmetric indefinite.  Dirichlet DOFs are eliminated
symmetrically: their rows and columns are replaced by the identity and the
prescribed values moved to the right-hand side.
"""

import ctypes.util
from dataclasses import dataclass, field, replace
import glob
import os
import sys
import sysconfig
import warnings

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import assembly
from .assembly import FormKind
from .errors import BoundaryConditionError, ConfigurationError, SingularSystemError
from .spaces import DiscreteField, build_pressure_dofs, build_velocity_dofs

DENSE_THRESHOLD = 1500
RESIDUAL_TOL = 1e-10
KRYLOV_RTOL = 1e-13
KRYLOV_MAXITER = 3000
AMG_SEED = 0


# --------------------------------------------------------------------------
# Boundary specification.

@dataclass(frozen=True)
class BoundaryRegion:
    """Dirichlet data on the boundary midpoints selected by ``predicate``.

    ``predicate`` maps (n, 3) points to a boolean mask, ``value`` maps (n, 3)
    points to (n, 3) values; only ``components`` are constrained.
    """

    predicate: object
    components: tuple = (0, 1, 2)
    value: object = None

    def values_at(self, points):
        if self.value is None:
            return np.zeros((len(points), 3))
        return np.asarray(self.value(points), dtype=float).reshape(len(points), 3)


@dataclass(frozen=True)
class DirichletConstraints:
    dofs: np.ndarray
    values: np.ndarray


class BoundarySpec:
    def __init__(self, regions=()):
        self.regions = list(regions)

    def add(self, predicate, components=(0, 1, 2), value=None):
        self.regions.append(BoundaryRegion(predicate, tuple(components), value))
        return self

    @classmethod
    def full(cls, value=None):
        """Every component constrained on every boundary edge midpoint."""
        return cls([BoundaryRegion(lambda x: np.ones(len(x), dtype=bool), (0, 1, 2), value)])

    def resolve(self, vdofs, tol=1e-10):
        """Constrained DOFs and values on ``vdofs``' mesh.

        Only boundary midpoints are tested against the predicates.  Raises
        BoundaryConditionError when overlapping regions disagree.
        """
        mesh = vdofs.mesh
        bedges = np.flatnonzero(mesh.boundary_edge)
        pts = mesh.edge_midpoints[bedges]
        assigned = {}
        for region in self.regions:
            mask = np.asarray(region.predicate(pts), dtype=bool)
            if not mask.any():
                continue
            vals = region.values_at(pts[mask])
            for e, v in zip(bedges[mask], vals):
                for c in region.components:
                    dof = 3 * int(e) + c
                    old = assigned.get(dof)
                    if old is not None and abs(old - v[c]) > tol:
                        raise BoundaryConditionError(
                            f"conflicting Dirichlet values at edge {e} component {c}: "
                            f"{old} vs {v[c]}"
                        )
                    assigned[dof] = float(v[c])
        dofs = np.array(sorted(assigned), dtype=np.int64)
        values = np.array([assigned[d] for d in dofs.tolist()])
        return DirichletConstraints(dofs, values)

    def has_natural_boundary(self, vdofs):
        """True if some boundary velocity DOF is left unconstrained."""
        constrained = np.zeros(vdofs.n_dofs, dtype=bool)
        constrained[self.resolve(vdofs).dofs] = True
        return bool(np.any(vdofs.boundary & ~constrained))


# --------------------------------------------------------------------------
# Saddle system.

@dataclass
class SaddleSystem:
    A: sp.csr_matrix
    B: sp.csr_matrix
    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_u: int
    n_p: int
    n_lambda: int
    vdofs: object = None
    pdofs: object = None
    mean_weights: np.ndarray = None
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    constrained_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def size(self):
        return self.n_u + self.n_p + self.n_lambda


def build_saddle_system(A, B, rhs, mean_constraint=False, mean_weights=None,
                        pressure_rhs=None, vdofs=None, pdofs=None):
    """Assemble the bordered symmetric indefinite matrix.

    ``rhs`` is the velocity load; ``pressure_rhs`` (default zero) the right
    side of the continuity rows; ``mean_weights`` is required when
    ``mean_constraint`` is set.
    """
    A = sp.csr_matrix(A)
    B = sp.csr_matrix(B)
    n_p, n_u = B.shape
    if A.shape != (n_u, n_u) or len(rhs) != n_u:
        raise ValueError(f"dimension mismatch: A {A.shape}, B {B.shape}, rhs {len(rhs)}")
    if pressure_rhs is None:
        pressure_rhs = np.zeros(n_p)
    if len(pressure_rhs) != n_p:
        raise ValueError("pressure_rhs has wrong length")
    blocks = [[A, -B.T], [-B, None]]
    n_lambda = 0
    if mean_constraint:
        if mean_weights is None or len(mean_weights) != n_p:
            raise ValueError("mean_constraint requires mean_weights of length n_p")
        m = sp.csr_matrix(np.asarray(mean_weights, dtype=float).reshape(-1, 1))
        blocks = [[A, -B.T, None], [-B, None, m], [None, m.T, None]]
        n_lambda = 1
    K = sp.bmat(blocks, format="csr")
    K.sum_duplicates()
    K.sort_indices()
    full_rhs = np.concatenate([np.asarray(rhs, float), np.asarray(pressure_rhs, float), np.zeros(n_lambda)])
    return SaddleSystem(A, B, K, full_rhs, n_u, n_p, n_lambda, vdofs, pdofs,
                        None if mean_weights is None else np.asarray(mean_weights, float))


def apply_dirichlet(system, constraints):
    """Symmetric elimination of the constrained velocity DOFs.

    ``constraints`` is a DirichletConstraints or a BoundarySpec, which is
    resolved against the system's velocity DOF map.
    """
    if isinstance(constraints, BoundarySpec):
        if system.vdofs is None:
            raise BoundaryConditionError("a BoundarySpec needs a system built with its velocity DOF map")
        constraints = constraints.resolve(system.vdofs)
    dofs = np.asarray(constraints.dofs, dtype=np.int64)
    if len(dofs) == 0:
        return system
    if np.any(dofs < 0) or np.any(dofs >= system.n_u):
        raise BoundaryConditionError("constrained DOF outside the velocity block")
    if system.vdofs is not None and not np.all(system.vdofs.boundary[dofs]):
        raise BoundaryConditionError("Dirichlet constraint on a non-boundary velocity DOF")
    n = system.size
    g = np.zeros(n)
    g[dofs] = constraints.values
    rhs = system.rhs - system.matrix @ g
    rhs[dofs] = constraints.values
    keep = np.ones(n)
    keep[dofs] = 0.0
    D = sp.diags(keep)
    K = (D @ system.matrix @ D + sp.diags(1.0 - keep)).tocsr()
    K.eliminate_zeros()
    K.sort_indices()
    return replace(system, matrix=K, rhs=rhs, constrained=dofs,
                   constrained_values=np.asarray(constraints.values, float))


# --------------------------------------------------------------------------
# Solve.

@dataclass
class StokesSolution:
    u: np.ndarray
    p: np.ndarray
    multiplier: float
    diagnostics: dict
    velocity: DiscreteField = None
    pressure: DiscreteField = None


def _free_velocity_mask(system):
    free = np.ones(system.n_u, dtype=bool)
    free[system.constrained] = False
    return free


def _check_constant_pressure_mode(system):
    if system.n_lambda:
        return
    ones = np.ones(system.n_p)
    r = (system.B.T @ ones)[_free_velocity_mask(system)]
    scale = max(abs(system.B).max(), 1e-300) * np.sqrt(system.n_p)
    if np.linalg.norm(r) <= 1e-12 * scale:
        raise SingularSystemError(
            "saddle matrix is singular: constant pressures are in the kernel",
            hint="constant pressure mode; enable the zero-mean constraint or leave an outflow boundary natural",
        )


def _solve_dense(K, b, hint):
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            return scipy.linalg.solve(K.toarray(), b, assume_a="sym"), {}
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
            raise SingularSystemError(f"factorization failed: {exc}", hint=hint) from None


def _solve_sparse_direct(K, b, hint):
    try:
        lu = spla.splu(K.tocsc(), permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise SingularSystemError(f"factorization failed: {exc}", hint=hint) from None
    udiag = np.abs(lu.U.diagonal())
    info = {"factor_nnz": int(lu.L.nnz + lu.U.nnz),
            "pivot_min": float(udiag.min()), "pivot_max": float(udiag.max())}
    return lu.solve(b), info


def _locate_mkl_runtime():
    """Point pypardiso at libmkl_rt when its own lookup would miss it.

    pypardiso searches ``sys.prefix``; system-wide pip installs on some
    distributions put the MKL wheel's libraries under ``/usr/local/lib``.
    """
    if os.environ.get("PYPARDISO_MKL_RT") or ctypes.util.find_library("mkl_rt"):
        return
    dirs = [sysconfig.get_config_var("LIBDIR"), os.path.join(sys.prefix, "lib"),
            os.path.join(sys.prefix, "local", "lib"), "/usr/local/lib"]
    for d in dirs:
        if d:
            hits = sorted(glob.glob(os.path.join(d, "libmkl_rt.so*")), key=len)
            if hits:
                os.environ["PYPARDISO_MKL_RT"] = hits[0]
                return


def pardiso_available():
    try:
        _locate_mkl_runtime()
        import pypardiso  # noqa: F401
    except (ImportError, OSError):
        return False
    return True


def _solve_pardiso(K, b, hint):
    _locate_mkl_runtime()
    import pypardiso

    solver = pypardiso.PyPardisoSolver()
    try:
        x = solver.solve(K.tocsr(), b)
    except Exception as exc:  # PyPardisoError carries the MKL error code
        raise SingularSystemError(f"factorization failed: {exc}", hint=hint) from None
    finally:
        solver.free_memory(everything=True)
    return x, {"factorization": "pardiso"}


def _block_preconditioner(system):
    """blockdiag(AMG(A), diag(m)^{-1}, (m^T diag(m)^{-1} m)^{-1}).

    The lumped pressure mass stands in for the Schur complement, which is
    spectrally equivalent to the pressure mass matrix for an inf-sup
    stable pair.
    """
    import pyamg

    n_u, n_p = system.n_u, system.n_p
    Auu = system.matrix[:n_u, :n_u].tocsr()
    near_null = np.kron(np.ones((n_u // 3, 1)), np.eye(3))
    # pyamg draws spectral-radius start vectors from the global numpy RNG;
    # seed it for the setup so repeated solves are bitwise identical.
    state = np.random.get_state()
    np.random.seed(AMG_SEED)
    try:
        amg = pyamg.smoothed_aggregation_solver(Auu, B=near_null, symmetry="symmetric")
    finally:
        np.random.set_state(state)
    pa = amg.aspreconditioner(cycle="V")
    w = system.mean_weights
    dinv = 1.0 / w
    lam = 1.0 / float(w @ (dinv * w)) if system.n_lambda else 0.0

    def apply(x):
        y = np.empty_like(x)
        y[:n_u] = pa(x[:n_u])
        y[n_u:n_u + n_p] = dinv * x[n_u:n_u + n_p]
        y[n_u + n_p:] = lam * x[n_u + n_p:]
        return y

    return spla.LinearOperator(system.matrix.shape, apply), len(amg.levels)


def _solve_krylov(system, hint):
    M, levels = _block_preconditioner(system)
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = spla.minres(system.matrix, system.rhs, M=M, rtol=KRYLOV_RTOL,
                          maxiter=KRYLOV_MAXITER, callback=cb)
    if info < 0:
        raise SingularSystemError(f"MINRES breakdown (info={info})", hint=hint)
    return x, {"iterations": count[0], "amg_levels": levels}


def _choose_backend(system, method):
    if method != "auto":
        return method
    if system.size <= DENSE_THRESHOLD:
        return "dense"
    return "pardiso" if pardiso_available() else "superlu"


def solve(system, method="auto"):
    """Solve the saddle system.

    ``method`` is ``"dense"`` (symmetric-indefinite LAPACK solve),
    ``"pardiso"`` (MKL sparse direct), ``"superlu"`` (scipy sparse LU),
    ``"minres"`` (MINRES with an AMG/lumped-mass block preconditioner;
    needs pyamg) or ``"auto"``: dense up to ``DENSE_THRESHOLD`` unknowns,
    then PARDISO, falling back to SuperLU when MKL cannot be loaded.
    Raises SingularSystemError with a hint when the matrix is singular or
    the relative residual exceeds 1e-10.
    """
    _check_constant_pressure_mode(system)
    K, b = system.matrix, system.rhs
    diag = {"n_u": system.n_u, "n_p": system.n_p, "n_lambda": system.n_lambda,
            "n_constrained": int(len(system.constrained)), "nnz": int(K.nnz)}
    hint = "insufficient velocity boundary conditions or rank-deficient coupling"
    backend = _choose_backend(system, method)
    solvers = {"dense": _solve_dense, "superlu": _solve_sparse_direct, "pardiso": _solve_pardiso,
               "minres": lambda K, b, hint: _solve_krylov(system, hint)}
    if backend not in solvers:
        raise ValueError(f"unknown solve method {method!r}")
    diag["backend"] = backend
    x, extra = solvers[backend](K, b, hint)
    diag.update(extra)
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("solution is not finite", hint=hint)
    res = np.linalg.norm(K @ x - b)
    rel = res / max(np.linalg.norm(b), np.linalg.norm(K @ x), 1e-300)
    diag["residual"] = float(res)
    diag["relative_residual"] = float(rel)
    if rel > RESIDUAL_TOL:
        diag["status"] = "failed"
        raise SingularSystemError(f"relative residual {rel:.3e} exceeds {RESIDUAL_TOL}", hint=hint)
    diag["status"] = "ok"
    u = x[: system.n_u]
    p = x[system.n_u: system.n_u + system.n_p]
    lam = float(x[-1]) if system.n_lambda else 0.0
    sol = StokesSolution(u, p, lam, diag)
    if system.vdofs is not None:
        sol.velocity = DiscreteField(system.vdofs, u)
    if system.pdofs is not None:
        sol.pressure = DiscreteField(system.pdofs, p)
    return sol


def format_diagnostics(diag):
    """Line-oriented ``key=value`` report."""
    lines = []
    for key in sorted(diag):
        v = diag[key]
        lines.append(f"{key}={format(v, '.17g') if isinstance(v, float) else v}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# One-call driver.

def solve_stokes(mesh, boundary, f=None, form=FormKind.B_CONSISTENT, operator=FormKind.LAPLACIAN,
                 mean_constraint=True, dirichlet_data=None, method="auto"):
    """Assemble, constrain and solve a Stokes problem on ``mesh``.

    ``dirichlet_data`` (a vectorised 3D->3D callable) is needed only for the
    pressure-consistent form with inhomogeneous data: the continuity rows
    then carry int_{dOmega} (g . n) q, the boundary term of b(u, q) for a
    conforming u.  When omitted it defaults to the value of the single
    full-boundary region of ``boundary`` if there is one.
    """
    form, operator = FormKind(form), FormKind(operator)
    vdofs, pdofs = build_velocity_dofs(mesh), build_pressure_dofs(mesh)
    constraints = boundary.resolve(vdofs)
    natural = bool(np.any(vdofs.boundary & ~np.isin(np.arange(vdofs.n_dofs), constraints.dofs)))
    if form is FormKind.B_CONSISTENT and natural:
        raise ConfigurationError(
            "the pressure-consistent form b requires Dirichlet data on the whole boundary; "
            "use btilde with natural boundaries"
        )
    A = assembly.assemble_velocity_operator(mesh, vdofs, operator)
    B = assembly.assemble_divergence_operator(mesh, vdofs, pdofs, form)
    rhs = np.zeros(vdofs.n_dofs) if f is None else assembly.assemble_rhs(mesh, vdofs, f)
    prhs = None
    if form is FormKind.B_CONSISTENT:
        if dirichlet_data is None and len(boundary.regions) == 1:
            dirichlet_data = boundary.regions[0].value
        if dirichlet_data is not None:
            prhs = assembly.assemble_boundary_flux_load(mesh, pdofs, dirichlet_data)
    weights = assembly.assemble_pressure_weights(mesh, pdofs)
    system = build_saddle_system(A, B, rhs, mean_constraint, weights, prhs, vdofs, pdofs)
    system = apply_dirichlet(system, constraints)
    return solve(system, method)
