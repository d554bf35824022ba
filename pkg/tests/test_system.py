import numpy as np
import pytest
import scipy.sparse as sp
from numpy.testing import assert_allclose

from rq1stokes import analysis, assembly
from rq1stokes.assembly import FormKind
from rq1stokes.errors import BoundaryConditionError, ConfigurationError, SingularSystemError
from rq1stokes.mesh import generate_box_mesh
from rq1stokes.spaces import build_pressure_dofs, build_velocity_dofs
from rq1stokes.system import (BoundarySpec, DirichletConstraints, apply_dirichlet,
                              build_saddle_system, format_diagnostics, pardiso_available, solve,
                              solve_stokes)


def _system(mesh, form=FormKind.B_CONSISTENT, mean=True):
    vd, pd = build_velocity_dofs(mesh), build_pressure_dofs(mesh)
    A = assembly.assemble_velocity_operator(mesh, vd)
    B = assembly.assemble_divergence_operator(mesh, vd, pd, form)
    w = assembly.assemble_pressure_weights(mesh, pd)
    return build_saddle_system(A, B, np.zeros(vd.n_dofs), mean, w, None, vd, pd), vd


class TestBoundarySpec:
    def test_full(self, box2):
        vd = build_velocity_dofs(box2)
        c = BoundarySpec.full().resolve(vd)
        assert np.array_equal(c.dofs, np.flatnonzero(vd.boundary))
        assert_allclose(c.values, 0.0)

    def test_components_and_values(self, box2):
        vd = build_velocity_dofs(box2)
        spec = BoundarySpec().add(lambda x: x[:, 2] < 1e-12, (2,), lambda x: x + 1.0)
        c = spec.resolve(vd)
        assert np.all(c.dofs % 3 == 2)
        assert_allclose(c.values, 1.0)  # x3 + 1 on the plane x3 = 0
        assert spec.has_natural_boundary(vd)
        assert not BoundarySpec.full().has_natural_boundary(vd)

    def test_conflict(self, box2):
        vd = build_velocity_dofs(box2)
        spec = BoundarySpec()
        spec.add(lambda x: x[:, 0] < 1e-12, (0,), lambda x: np.ones((len(x), 3)))
        spec.add(lambda x: x[:, 1] < 1e-12, (0,))
        with pytest.raises(BoundaryConditionError):
            spec.resolve(vd)

    def test_overlap_with_equal_values_allowed(self, box2):
        vd = build_velocity_dofs(box2)
        spec = BoundarySpec()
        spec.add(lambda x: x[:, 0] < 1e-12)
        spec.add(lambda x: x[:, 1] < 1e-12)
        assert len(spec.resolve(vd).dofs) > 0


class TestSaddleSystem:
    def test_structure(self, box2):
        system, vd = _system(box2)
        K = system.matrix
        assert K.shape == (system.size, system.size)
        assert abs(K - K.T).max() < 1e-15
        assert system.n_lambda == 1
        assert_allclose(K[system.n_u:-1, -1].toarray().ravel(), system.mean_weights)

    def test_dirichlet_elimination_keeps_symmetry(self, box2):
        system, vd = _system(box2)
        dofs = np.flatnonzero(vd.boundary)
        s2 = apply_dirichlet(system, DirichletConstraints(dofs, np.ones(len(dofs))))
        K = s2.matrix
        assert abs(K - K.T).max() < 1e-15
        assert_allclose(K[dofs][:, dofs].toarray(), np.eye(len(dofs)))
        assert_allclose(s2.rhs[dofs], 1.0)

    def test_constraint_on_interior_dof_rejected(self, box2):
        system, vd = _system(box2)
        dof = int(np.flatnonzero(~vd.boundary)[0])
        with pytest.raises(BoundaryConditionError):
            apply_dirichlet(system, DirichletConstraints(np.array([dof]), np.zeros(1)))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            build_saddle_system(sp.eye(3), sp.csr_matrix((2, 4)), np.zeros(3))
        with pytest.raises(ValueError):
            build_saddle_system(sp.eye(3), sp.csr_matrix((2, 3)), np.zeros(3), mean_constraint=True)


class TestSolve:
    @pytest.mark.parametrize("form", ["b", "btilde"])
    def test_patch_test(self, box2, form):
        case = analysis.affine_case()
        sol = solve_stokes(box2, BoundarySpec.full(case.u), case.f, form)
        errs = analysis.error_norms(sol, case)
        assert max(errs) < 1e-12
        assert sol.diagnostics["relative_residual"] < 1e-10

    def test_linear_pressure_reproduced_by_consistent_form(self, box2):
        case = analysis.linear_pressure_case()
        sol = solve_stokes(box2, BoundarySpec.full(case.u), case.f, "b")
        assert max(analysis.error_norms(sol, case)) < 1e-12

    def test_zero_data_gives_zero_solution(self, box2):
        sol = solve_stokes(box2, BoundarySpec.full(), None, "b")
        assert np.abs(sol.u).max() == 0.0 and np.abs(sol.p).max() == 0.0

    @pytest.mark.parametrize("method", ["dense", "superlu", "pardiso", "minres"])
    def test_backends_agree(self, method):
        if method == "minres":
            pytest.importorskip("pyamg")
        if method == "pardiso" and not pardiso_available():
            pytest.skip("MKL runtime not loadable")
        mesh = generate_box_mesh((1, 1, 1), (3, 3, 3), origin=(-0.5, -0.5, -0.5))
        case = analysis.cubic_case()
        ref = solve_stokes(mesh, BoundarySpec.full(case.u), case.f, "b", method="dense")
        sol = solve_stokes(mesh, BoundarySpec.full(case.u), case.f, "b", method=method)
        assert sol.diagnostics["backend"] == method
        assert_allclose(sol.u, ref.u, atol=1e-9)
        assert_allclose(sol.p, ref.p, atol=1e-9)

    def test_auto_backend_by_size(self, box2):
        sol = solve_stokes(box2, BoundarySpec.full(), None, "b")
        assert sol.diagnostics["backend"] == "dense"

    def test_apply_dirichlet_accepts_boundary_spec(self, box2):
        system, vd = _system(box2)
        spec = BoundarySpec.full(lambda x: x)
        a = apply_dirichlet(system, spec)
        b = apply_dirichlet(system, spec.resolve(vd))
        assert_allclose(a.rhs, b.rhs)
        assert (a.matrix != b.matrix).nnz == 0

    def test_auto_backend_large_system_is_direct(self):
        mesh = generate_box_mesh((1, 1, 1), (4, 4, 4))
        sol = solve_stokes(mesh, BoundarySpec.full(), None, "b")
        assert sol.diagnostics["backend"] == ("pardiso" if pardiso_available() else "superlu")

    def test_unknown_method(self, box2):
        with pytest.raises(ValueError):
            solve_stokes(box2, BoundarySpec.full(), None, "b", method="cg")

    def test_constant_pressure_mode_detected(self, box2):
        with pytest.raises(SingularSystemError) as exc:
            solve_stokes(box2, BoundarySpec.full(), None, "b", mean_constraint=False)
        assert "hint" in str(exc.value)
        assert "constant pressure" in str(exc.value)

    def test_missing_boundary_conditions_singular(self, box2):
        system, vd = _system(box2, FormKind.B_TILDE)
        with pytest.raises(SingularSystemError):
            solve(system)

    def test_consistent_form_rejects_natural_boundary(self, box2):
        spec = BoundarySpec().add(lambda x: x[:, 0] < 1e-12)
        with pytest.raises(ConfigurationError):
            solve_stokes(box2, spec, None, "b")

    def test_diagnostics_format(self, box2):
        sol = solve_stokes(box2, BoundarySpec.full(), None, "b")
        text = format_diagnostics(sol.diagnostics)
        assert "backend=dense" in text
        assert all("=" in line for line in text.splitlines())

    def test_mean_zero_pressure(self, centered_box3):
        case = analysis.cubic_case()
        sol = solve_stokes(centered_box3, BoundarySpec.full(case.u), case.f, "btilde")
        w = assembly.assemble_pressure_weights(centered_box3, sol.pressure.dofmap)
        assert abs(w @ sol.p) < 1e-12
