import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose

from rq1stokes import element
from rq1stokes.element import (EDGE_MIDPOINTS, EDGE_TANGENTS, LOCAL_EDGES, NODES,
                               REFERENCE_VERTICES)
from rq1stokes.errors import InvalidArgumentError

SPAN = np.array([
    [1, 0, 0, 0, 0, 0, 0],
    [0, 1, 0, 0, 0, 0, 0],
    [0, 0, 1, 0, 0, 0, 0],
    [0, 0, 0, 1, 0, 0, 0],
    [0, 0, 0, 0, 1, -1, 0],
    [0, 0, 0, 0, 0, 1, -1],
], dtype=float)


class TestReferenceGeometry:
    def test_vertices_positively_oriented(self):
        J = (REFERENCE_VERTICES[1:] - REFERENCE_VERTICES[0]).T
        assert np.linalg.det(J) == pytest.approx(16.0)

    def test_volume_matches_exact_integral(self):
        assert float(element.integrate_monomial_simplex(REFERENCE_VERTICES, (0, 0, 0))) == pytest.approx(8 / 3)
        assert element.REFERENCE_VOLUME == pytest.approx(8 / 3)

    def test_edge_midpoints_are_cube_face_centres(self):
        found = sorted(map(tuple, EDGE_MIDPOINTS))
        assert found == sorted(map(tuple, NODES))
        assert_allclose(NODES[element.EDGE_TO_NODE], EDGE_MIDPOINTS)

    def test_edges_have_equal_length(self):
        for a, b in LOCAL_EDGES:
            assert np.linalg.norm(REFERENCE_VERTICES[b] - REFERENCE_VERTICES[a]) == pytest.approx(2 * np.sqrt(2))

    def test_face_area(self):
        for face in element.LOCAL_FACES:
            P = REFERENCE_VERTICES[list(face)]
            area = 0.5 * np.linalg.norm(np.cross(P[1] - P[0], P[2] - P[0]))
            assert area == pytest.approx(element.REFERENCE_FACE_AREA)

    def test_faces_are_opposite_vertices(self):
        for i, face in enumerate(element.LOCAL_FACES):
            assert i not in face
            assert len(set(face)) == 3

    def test_tangents_unit(self):
        assert_allclose(np.linalg.norm(EDGE_TANGENTS, axis=1), 1.0)

    def test_sum_of_squared_tangent_components(self):
        # sum_E (t_E . e_i)^2 = 2 for each axis
        assert_allclose((EDGE_TANGENTS**2).sum(axis=0), 2.0, atol=1e-14)


class TestBasis:
    def test_lagrange_property(self):
        assert_allclose(element.nodal_matrix(element.NODE_BASIS_COEFFS), np.eye(6), atol=1e-14)
        assert_allclose(element.eval_edge_basis(EDGE_MIDPOINTS), np.eye(6), atol=1e-14)

    def test_first_basis_function_closed_form(self, rng):
        x = rng.uniform(-1, 1, (50, 3))
        x1, x2, x3 = x.T
        expected = (1 + 3 * x1 + 2 * x1**2 - x2**2 - x3**2) / 6
        assert_allclose(element.eval_basis(x)[:, 0], expected, atol=1e-15)

    def test_partition_of_unity(self, rng):
        x = rng.uniform(-1, 1, (100, 3))
        assert_allclose(element.eval_basis(x).sum(axis=1), 1.0, atol=1e-14)

    def test_gradient_sum_zero(self, rng):
        x = rng.uniform(-1, 1, (100, 3))
        assert_allclose(element.eval_basis_grad(x).sum(axis=1), 0.0, atol=1e-14)

    def test_gradients_match_finite_differences(self, rng):
        x = rng.uniform(-1, 1, (20, 3))
        h = 1e-6
        fd = np.stack([
            (element.eval_basis(x + h * e) - element.eval_basis(x - h * e)) / (2 * h)
            for e in np.eye(3)
        ], axis=-1)
        assert_allclose(element.eval_basis_grad(x), fd, atol=1e-8)

    def test_basis_spans_shape_space(self):
        # every basis function is a combination of the six spanning polynomials
        coef, *_ = np.linalg.lstsq(SPAN.T, element.NODE_BASIS_COEFFS.T, rcond=None)
        assert_allclose(SPAN.T @ coef, element.NODE_BASIS_COEFFS.T, atol=1e-14)

    def test_nodal_map_invertible(self):
        N = element.nodal_matrix(SPAN)
        assert abs(np.linalg.det(N)) > 1e-3
        assert np.linalg.cond(N) < 100

    def test_sum_of_squares_has_same_nodal_values_as_one(self):
        # x1^2 + x2^2 + x3^2 equals 1 at every node: not in V, but N(.) = N(1)
        assert_allclose(element.nodal_matrix([[0, 0, 0, 0, 1, 1, 1]]),
                        element.nodal_matrix([[1, 0, 0, 0, 0, 0, 0]]))

    def test_interpolation_reproduces_shape_space(self, rng):
        c = rng.normal(size=6) @ SPAN
        x = rng.uniform(-1, 1, (30, 3))
        nodal = element.monomial_values(NODES) @ c
        assert_allclose(element.eval_basis(x) @ nodal, element.monomial_values(x) @ c, atol=1e-13)

    def test_edge_order_is_permutation_of_node_order(self, rng):
        x = rng.uniform(-1, 1, (10, 3))
        assert_allclose(element.eval_edge_basis(x), element.eval_basis(x)[:, element.EDGE_TO_NODE])


class TestP1:
    def test_barycentric_at_vertices(self):
        assert_allclose(element.eval_p1_basis(REFERENCE_VERTICES), np.eye(4), atol=1e-15)

    def test_gradients_sum_zero(self):
        assert_allclose(element.eval_p1_basis_grad().sum(axis=0), 0.0, atol=1e-15)


class TestQuadrature:
    @pytest.mark.parametrize("degree", range(0, element.MAX_VOLUME_DEGREE + 1))
    def test_volume_rule_exact_against_oracle(self, degree):
        rule = element.volume_quadrature(degree)
        assert rule.degree >= degree
        assert_allclose(rule.weights.sum(), 8 / 3, rtol=1e-14)
        for e in itertools.product(range(degree + 1), repeat=3):
            if sum(e) > degree:
                continue
            exact = float(element.integrate_monomial_simplex(REFERENCE_VERTICES, e))
            approx = rule.integrate(lambda x: np.prod(x ** np.array(e), axis=1))
            assert approx == pytest.approx(exact, abs=1e-13), e

    def test_weights_positive_and_points_inside(self):
        for degree in range(element.MAX_VOLUME_DEGREE + 1):
            rule = element.volume_quadrature(degree)
            assert np.all(rule.weights > 0)
            assert np.all(element.eval_p1_basis(rule.points) > -1e-14)

    @pytest.mark.parametrize("degree", [-1, 13, 2.5, "4"])
    def test_invalid_degree(self, degree):
        with pytest.raises(InvalidArgumentError):
            element.volume_quadrature(degree)

    def test_degree_zero_is_centroid(self):
        rule = element.volume_quadrature(0)
        assert len(rule) == 1
        assert_allclose(rule.points[0], 0.0, atol=1e-15)

    def test_edge_midpoint_rule_exact_on_shape_space(self):
        rule = element.edge_midpoint_quadrature()
        for row in SPAN:
            exact = float(element.integrate_polynomial_reference(row))
            assert rule.weights @ (element.monomial_values(rule.points) @ row) == pytest.approx(exact, abs=1e-14)

    def test_edge_midpoint_rule_not_exact_on_all_quadratics(self):
        rule = element.edge_midpoint_quadrature()
        row = [0, 0, 0, 0, 1, 0, 0]  # x1^2
        exact = float(element.integrate_polynomial_reference(row))
        approx = rule.weights @ (element.monomial_values(rule.points) @ row)
        assert abs(approx - exact) > 1e-3

    @pytest.mark.parametrize("degree", [1, 2, 4, 6, 8])
    def test_triangle_rule(self, degree):
        rule = element.triangle_quadrature(degree)
        tri = element.REFERENCE_TRIANGLE
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                exact = float(element.integrate_monomial_simplex(tri, (a, b)))
                assert rule.integrate(lambda x: x[:, 0]**a * x[:, 1]**b) == pytest.approx(exact, abs=1e-14)

    def test_face_midpoint_rule_degree_two(self):
        rule = element.face_midpoint_quadrature()
        tri = element.REFERENCE_TRIANGLE
        for a, b in [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]:
            exact = float(element.integrate_monomial_simplex(tri, (a, b)))
            assert rule.integrate(lambda x: x[:, 0]**a * x[:, 1]**b) == pytest.approx(exact, abs=1e-15)


class TestExactIntegration:
    def test_unit_simplex_monomials(self):
        unit = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
        # int x^a y^b z^c = a! b! c! / (a+b+c+3)!
        assert element.integrate_monomial_simplex(unit, (1, 2, 0)) == pytest.approx(2 / 720)
        assert element.integrate_monomial_simplex(unit, (0, 0, 0)) == pytest.approx(1 / 6)
