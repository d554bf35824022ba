import numpy as np
import pytest
import scipy.io
from numpy.testing import assert_allclose

from rq1stokes import assembly, element
from rq1stokes.assembly import FormKind, GramKind
from rq1stokes.mesh import build_topology, generate_box_mesh
from rq1stokes.spaces import (build_pressure_dofs, build_velocity_dofs,
                              interpolate_at_midpoints, interpolate_at_vertices)


@pytest.fixture(scope="module")
def ops():
    m = generate_box_mesh((1, 1, 1), (3, 3, 3), origin=(-0.5, -0.5, -0.5))
    vd, pd = build_velocity_dofs(m), build_pressure_dofs(m)
    return m, vd, pd


def ref_mesh():
    return build_topology(element.REFERENCE_VERTICES, [[0, 1, 2, 3]])


class TestVelocityOperators:
    @pytest.mark.parametrize("kind", [FormKind.LAPLACIAN, FormKind.STRAIN])
    def test_symmetric_and_psd(self, ops, kind):
        m, vd, _ = ops
        A = assembly.assemble_velocity_operator(m, vd, kind)
        assert abs(A - A.T).max() < 1e-14
        ev = np.linalg.eigvalsh(A.toarray())
        assert ev.min() > -1e-12

    @pytest.mark.parametrize("kind", [FormKind.LAPLACIAN, FormKind.STRAIN])
    def test_constants_in_kernel(self, ops, kind):
        m, vd, _ = ops
        A = assembly.assemble_velocity_operator(m, vd, kind)
        for c in range(3):
            v = np.zeros(vd.n_dofs)
            v[c::3] = 1.0
            assert np.abs(A @ v).max() < 1e-13

    def test_energy_of_affine_field(self, ops):
        # a_h(u, u) = |W|_F^2 |Omega| for u = W x; strain form gives 2 |sym W|^2 |Omega|
        m, vd, _ = ops
        W = np.array([[0.0, 1.0, 0.5], [0.2, 0.0, -1.0], [0.3, 0.4, 0.0]])
        u = interpolate_at_midpoints(m, vd, lambda x: x @ W.T).coeffs
        L = assembly.assemble_velocity_operator(m, vd, FormKind.LAPLACIAN)
        S = assembly.assemble_velocity_operator(m, vd, FormKind.STRAIN)
        sym = 0.5 * (W + W.T)
        assert u @ L @ u == pytest.approx((W**2).sum(), rel=1e-12)
        assert u @ S @ u == pytest.approx(2 * (sym**2).sum(), rel=1e-12)

    def test_rotation_strain_free(self, ops):
        m, vd, _ = ops
        W = np.array([[0.0, 1.0, -2.0], [-1.0, 0.0, 0.5], [2.0, -0.5, 0.0]])
        u = interpolate_at_midpoints(m, vd, lambda x: x @ W.T).coeffs
        S = assembly.assemble_velocity_operator(m, vd, FormKind.STRAIN)
        assert abs(u @ S @ u) < 1e-12

    def test_quadrature_degree_independent(self, ops):
        # gradients are linear, so degree 2 is already exact
        m, vd, _ = ops
        A2 = assembly.assemble_velocity_operator(m, vd, degree=2)
        A5 = assembly.assemble_velocity_operator(m, vd, degree=5)
        assert abs(A2 - A5).max() < 1e-13

    def test_reference_element_matrix(self):
        # oracle: exact integrals of products of basis gradients
        m = ref_mesh()
        K = assembly.velocity_element_matrices(m, FormKind.LAPLACIAN)[0, :, 0, :, 0]
        C = element.EDGE_BASIS_COEFFS
        exact = np.zeros((6, 6))
        for i in range(6):
            for j in range(6):
                total = 0.0
                for d in range(3):
                    gi, gj = _grad_poly(C[i], d), _grad_poly(C[j], d)
                    total += _integrate_product(gi, gj)
                exact[i, j] = total
        assert_allclose(K, exact, atol=1e-13)

    def test_thread_count_does_not_change_result(self, ops, monkeypatch):
        m, vd, pd = ops
        monkeypatch.setattr(assembly, "CHUNK_SIZE", 16)
        monkeypatch.setenv("RQ1_THREADS", "1")
        A1 = assembly.assemble_velocity_operator(m, vd, FormKind.STRAIN)
        monkeypatch.setenv("RQ1_THREADS", "4")
        A4 = assembly.assemble_velocity_operator(m, vd, FormKind.STRAIN)
        assert np.array_equal(A1.data, A4.data) and np.array_equal(A1.indices, A4.indices)


def _grad_poly(c, d):
    # derivative of sum c_k m_k along x_d, returned as {exponent: coeff}
    out = {}
    for ck, e in zip(c, element.MONOMIALS):
        if ck and e[d] > 0:
            e2 = list(e)
            e2[d] -= 1
            out[tuple(e2)] = out.get(tuple(e2), 0.0) + ck * e[d]
    return out


def _integrate_product(p, q):
    total = 0.0
    for ea, ca in p.items():
        for eb, cb in q.items():
            e = tuple(a + b for a, b in zip(ea, eb))
            total += ca * cb * float(element.integrate_monomial_simplex(element.REFERENCE_VERTICES, e))
    return total


class TestDivergence:
    def test_reference_entries(self):
        # on the reference cell with q = x1 (a combination of the P1 basis)
        m = ref_mesh()
        vd, pd = build_velocity_dofs(m), build_pressure_dofs(m)
        q = element.REFERENCE_VERTICES[:, 0]
        for kind in (FormKind.B_CONSISTENT, FormKind.B_TILDE):
            B = assembly.assemble_divergence_operator(m, vd, pd, kind).toarray()
            row = (q @ B).reshape(6, 3)
            if kind is FormKind.B_CONSISTENT:
                # -int phi_E e1 . grad x1 = -|T|/6 = -4/9 for the first component
                assert_allclose(row[:, 0], -4 / 9, atol=1e-14)
                assert_allclose(row[:, 1:], 0.0, atol=1e-14)

    def test_constant_pressure_annihilated_by_consistent_form(self, ops):
        m, vd, pd = ops
        B = assembly.assemble_divergence_operator(m, vd, pd, FormKind.B_CONSISTENT)
        assert np.abs(B.T @ np.ones(pd.n_dofs)).max() < 1e-14

    def test_tilde_form_of_constant_is_boundary_flux(self, ops, rng):
        # sum_T (div v, 1)_T = sum of boundary fluxes (interior jump means vanish)
        m, vd, pd = ops
        Bt = assembly.assemble_divergence_operator(m, vd, pd, FormKind.B_TILDE)
        v = rng.normal(size=vd.n_dofs)
        v[vd.boundary] = 0.0
        assert abs(np.ones(pd.n_dofs) @ Bt @ v) < 1e-13

    def test_forms_agree_on_conforming_fields(self, ops, rng):
        m, vd, pd = ops
        B = assembly.assemble_divergence_operator(m, vd, pd, FormKind.B_CONSISTENT)
        Bt = assembly.assemble_divergence_operator(m, vd, pd, FormKind.B_TILDE)
        interior = ~m.boundary_vertex
        for _ in range(5):
            nodal = np.zeros((m.n_vertices, 3))
            nodal[interior] = rng.normal(size=(interior.sum(), 3))
            v = (0.5 * (nodal[m.edges[:, 0]] + nodal[m.edges[:, 1]])).ravel()
            assert_allclose(B @ v, Bt @ v, atol=1e-13)

    def test_divergence_of_affine_field(self, ops):
        m, vd, pd = ops
        W = np.diag([1.0, 2.0, -0.5])
        u = interpolate_at_midpoints(m, vd, lambda x: x @ W.T).coeffs
        Bt = assembly.assemble_divergence_operator(m, vd, pd, FormKind.B_TILDE)
        w = assembly.assemble_pressure_weights(m, pd)
        assert_allclose(Bt @ u, np.trace(W) * w, atol=1e-13)


class TestPressureGram:
    def test_reference_mass_matrix(self):
        m = ref_mesh()
        M = assembly.assemble_pressure_gram(m, build_pressure_dofs(m), GramKind.MASS).toarray()
        expected = (8 / 3) / 20 * (np.ones((4, 4)) + np.eye(4))
        assert_allclose(M, expected, atol=1e-14)

    def test_stiffness_of_linear_field(self, ops):
        m, _, pd = ops
        K = assembly.assemble_pressure_gram(m, pd, GramKind.STIFFNESS)
        q = interpolate_at_vertices(m, pd, lambda x: x @ [1.0, -2.0, 0.5]).coeffs
        assert q @ K @ q == pytest.approx(5.25 * m.volume, rel=1e-13)
        assert np.abs(K @ np.ones(pd.n_dofs)).max() < 1e-13

    def test_weights_sum_to_volume(self, ops):
        m, _, pd = ops
        M = assembly.assemble_pressure_gram(m, pd, GramKind.MASS)
        w = assembly.assemble_pressure_weights(m, pd)
        assert_allclose(w, M @ np.ones(pd.n_dofs), atol=1e-15)
        assert w.sum() == pytest.approx(m.volume)


class TestLoads:
    def test_rhs_of_constant_force(self, ops):
        m, vd, _ = ops
        f = assembly.assemble_rhs(m, vd, lambda x: np.tile([1.0, 2.0, 3.0], (len(x), 1)))
        assert_allclose(f.reshape(-1, 3).sum(axis=0), [1.0, 2.0, 3.0], rtol=1e-13)

    def test_boundary_flux_load(self, ops):
        m, _, pd = ops
        g = lambda x: x  # noqa: E731  div g = 3
        load = assembly.assemble_boundary_flux_load(m, pd, g)
        assert load.sum() == pytest.approx(3 * m.volume, rel=1e-13)
        assert np.abs(load[~m.boundary_vertex]).max() == 0.0

    def test_matrix_market_export(self, ops, tmp_path):
        m, vd, pd = ops
        B = assembly.assemble_divergence_operator(m, vd, pd)
        path = tmp_path / "B.mtx"
        assembly.export_matrix_market(path, B)
        B2 = scipy.io.mmread(path)
        assert abs(B - B2).max() < 1e-15
