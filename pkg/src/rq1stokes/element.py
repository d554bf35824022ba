"""Rotated-Q1 tetrahedral element and the P1 pressure element.

The reference tetrahedron is inscribed in the cube [-1, 1]^3: its edges are
face diagonals of the cube, so its six edge midpoints are the cube face
centres {+-e_i}, its centroid is the origin and every edge has length
2*sqrt(2).  The shape space is

    V = span(1, x1, x2, x3, x1^2 - x2^2, x2^2 - x3^2)

with one nodal value per edge midpoint.

Two orderings of the six shape functions are used:

* *node order* (``eval_basis``): the nodes +e1, -e1, +e2, -e2, +e3, -e3,
  i.e. phi_1 = phi(x1, x2, x3), phi_2 = phi(-x1, x2, x3), ...;
* *edge order* (``eval_edge_basis``): local edges in lexicographic
  vertex-pair order, which is what assembly uses.

Polynomials are stored as coefficient vectors over the monomials
``MONOMIALS`` = (1, x1, x2, x3, x1^2, x2^2, x3^2).
"""

from dataclasses import dataclass
from fractions import Fraction
from itertools import permutations, product
from math import factorial

import numpy as np
from scipy.special import roots_jacobi

from .errors import InvalidArgumentError

# Ordered so that det(v1 - v0, v2 - v0, v3 - v0) > 0.
REFERENCE_VERTICES = np.array(
    [[1.0, 1.0, 1.0],
     [-1.0, 1.0, -1.0],
     [1.0, -1.0, -1.0],
     [-1.0, -1.0, 1.0]]
)
REFERENCE_VOLUME = 8.0 / 3.0
# Equilateral triangle with side 2*sqrt(2).
REFERENCE_FACE_AREA = 2.0 * np.sqrt(3.0)

LOCAL_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
# Local face i is opposite local vertex i.
LOCAL_FACES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))

NODES = np.array(
    [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0],
     [0.0, 1.0, 0.0], [0.0, -1.0, 0.0],
     [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]
)

EDGE_MIDPOINTS = np.array(
    [0.5 * (REFERENCE_VERTICES[a] + REFERENCE_VERTICES[b]) for a, b in LOCAL_EDGES]
)
_edge_vectors = np.array(
    [REFERENCE_VERTICES[b] - REFERENCE_VERTICES[a] for a, b in LOCAL_EDGES]
)
EDGE_TANGENTS = _edge_vectors / np.linalg.norm(_edge_vectors, axis=1)[:, None]

# EDGE_TO_NODE[k] is the node index of local edge k's midpoint.
EDGE_TO_NODE = np.array(
    [int(np.flatnonzero(np.all(np.isclose(NODES, m), axis=1))[0]) for m in EDGE_MIDPOINTS]
)

MONOMIALS = ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1), (2, 0, 0), (0, 2, 0), (0, 0, 2))


def _phi_coefficients(axis, sign):
    # phi(s*x_axis, x_other, x_other) = (1 + 3 s x_axis + 2 x_axis^2 - others^2) / 6
    c = np.zeros(7)
    c[0] = 1.0
    c[1 + axis] = 3.0 * sign
    c[4:7] = -1.0
    c[4 + axis] = 2.0
    return c / 6.0


NODE_BASIS_COEFFS = np.array(
    [_phi_coefficients(axis, sign) for axis in range(3) for sign in (1.0, -1.0)]
)
EDGE_BASIS_COEFFS = NODE_BASIS_COEFFS[EDGE_TO_NODE]


def monomial_values(points):
    """Values of the seven monomials at ``points``, shape (..., 7)."""
    x = np.asarray(points, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    one = np.ones_like(x1)
    return np.stack([one, x1, x2, x3, x1 * x1, x2 * x2, x3 * x3], axis=-1)


def monomial_gradients(points):
    """Gradients of the seven monomials, shape (..., 7, 3)."""
    x = np.asarray(points, dtype=float)
    g = np.zeros(x.shape[:-1] + (7, 3))
    g[..., 1, 0] = 1.0
    g[..., 2, 1] = 1.0
    g[..., 3, 2] = 1.0
    g[..., 4, 0] = 2.0 * x[..., 0]
    g[..., 5, 1] = 2.0 * x[..., 1]
    g[..., 6, 2] = 2.0 * x[..., 2]
    return g


def eval_basis(points):
    """Shape functions phi_1..phi_6 in node order, shape (..., 6)."""
    return monomial_values(points) @ NODE_BASIS_COEFFS.T


def eval_basis_grad(points):
    """Gradients of phi_1..phi_6 in node order, shape (..., 6, 3)."""
    return np.einsum("nm,...md->...nd", NODE_BASIS_COEFFS, monomial_gradients(points))


def eval_edge_basis(points):
    """Shape functions in local-edge order, shape (..., 6)."""
    return monomial_values(points) @ EDGE_BASIS_COEFFS.T


def eval_edge_basis_grad(points):
    return np.einsum("nm,...md->...nd", EDGE_BASIS_COEFFS, monomial_gradients(points))


def nodal_matrix(coeffs):
    """Node evaluation matrix N[i, j] = p_i(x_j) for polynomials given as rows."""
    return np.asarray(coeffs) @ monomial_values(NODES).T


# --------------------------------------------------------------------------
# P1 pressure element on the same reference tetrahedron.

_P1_MATRIX = np.linalg.inv(np.hstack([np.ones((4, 1)), REFERENCE_VERTICES]))
# lambda_i(x) = _P1_MATRIX[0, i] + x . _P1_MATRIX[1:, i]
P1_GRADIENTS = _P1_MATRIX[1:, :].T.copy()


def eval_p1_basis(points):
    """Barycentric coordinates w.r.t. the reference vertices, shape (..., 4)."""
    x = np.asarray(points, dtype=float)
    return _P1_MATRIX[0] + x @ _P1_MATRIX[1:]


def eval_p1_basis_grad(points=None):
    """Constant gradients of the four P1 basis functions, shape (4, 3)."""
    return P1_GRADIENTS.copy()


# --------------------------------------------------------------------------
# Quadrature.

@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def integrate(self, fn):
        """Apply the rule to a vectorised callable ``fn(points) -> values``."""
        values = np.asarray(fn(self.points), dtype=float)
        return np.tensordot(self.weights, values, axes=(0, 0))

    def __len__(self):
        return len(self.weights)


def edge_midpoint_quadrature():
    """Six-point rule at the edge midpoints with equal weights |T|/6.

    Exact on the shape space V (not on general quadratics).
    """
    w = np.full(6, REFERENCE_VOLUME / 6.0)
    return QuadratureRule(EDGE_MIDPOINTS.copy(), w, degree=1)


def _orbit(*bary):
    # distinct permutations of one barycentric point
    return sorted(set(permutations(bary)))


def _unit_simplex_rule(degree):
    """Rules on the unit simplex {xi >= 0, sum xi <= 1}; weights sum to 1/6."""
    if degree <= 1:
        bary = [(0.25, 0.25, 0.25, 0.25)]
        weights = [1.0 / 6.0]
        exact = 1
    elif degree == 2:
        a = 0.1381966011250105
        bary = _orbit(a, a, a, 1 - 3 * a)
        weights = [1.0 / 24.0] * 4
        exact = 2
    elif degree <= 5:
        # 14-point positive-weight rule of degree 5.
        a1, a2, b = 0.0927352503108912, 0.3108859192633006, 0.0455037041256496
        groups = [
            (_orbit(a1, a1, a1, 1 - 3 * a1), 0.01224884051939366),
            (_orbit(a2, a2, a2, 1 - 3 * a2), 0.01878132095300264),
            (_orbit(b, b, 0.5 - b, 0.5 - b), 0.007091003462846911),
        ]
        bary, weights = [], []
        for orbit, w in groups:
            bary += orbit
            weights += [w] * len(orbit)
        exact = 5
    else:
        return _conical_simplex_rule(degree)
    bary = np.array(bary)
    return bary[:, 1:], np.array(weights), exact


def _gauss_jacobi01(n, alpha):
    # Gauss-Jacobi on [0, 1] with weight (1 - t)^alpha.
    x, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


def _conical_simplex_rule(degree):
    n = (degree + 2) // 2
    t1, w1 = _gauss_jacobi01(n, 2.0)
    t2, w2 = _gauss_jacobi01(n, 1.0)
    t3, w3 = _gauss_jacobi01(n, 0.0)
    pts, wts = [], []
    for i, j, k in product(range(n), repeat=3):
        a, b, c = t1[i], t2[j], t3[k]
        pts.append((a, (1 - a) * b, (1 - a) * (1 - b) * c))
        wts.append(w1[i] * w2[j] * w3[k])
    return np.array(pts), np.array(wts), 2 * n - 1


_REF_JACOBIAN = (REFERENCE_VERTICES[1:] - REFERENCE_VERTICES[0]).T
MAX_VOLUME_DEGREE = 12


def volume_quadrature(min_degree=4):
    """Rule on the reference tetrahedron exact for polynomials of degree
    ``min_degree`` (0 <= min_degree <= 12).

    Degrees up to 5 use tabulated symmetric rules; higher degrees use a
    collapsed-coordinate Gauss-Jacobi product rule.
    """
    if not isinstance(min_degree, (int, np.integer)) or not 0 <= min_degree <= MAX_VOLUME_DEGREE:
        raise InvalidArgumentError(f"unsupported quadrature degree {min_degree!r}")
    xi, w, exact = _unit_simplex_rule(int(min_degree))
    points = REFERENCE_VERTICES[0] + xi @ _REF_JACOBIAN.T
    scale = abs(np.linalg.det(_REF_JACOBIAN))
    return QuadratureRule(points, w * scale, degree=exact)


# Unit reference triangle {(s, t): s, t >= 0, s + t <= 1}, area 1/2.
REFERENCE_TRIANGLE = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def face_midpoint_quadrature():
    """Three-point edge-midpoint rule on the unit triangle (exact to degree 2)."""
    pts = np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
    return QuadratureRule(pts, np.full(3, 1.0 / 6.0), degree=2)


def triangle_quadrature(degree):
    """Collapsed Gauss-Jacobi rule on the unit triangle exact to ``degree``."""
    if degree < 0:
        raise InvalidArgumentError(f"unsupported quadrature degree {degree!r}")
    n = max(1, (degree + 2) // 2)
    t1, w1 = _gauss_jacobi01(n, 1.0)
    t2, w2 = _gauss_jacobi01(n, 0.0)
    pts = np.array([(a, (1 - a) * b) for a in t1 for b in t2])
    wts = np.array([wa * wb for wa in w1 for wb in w2])
    return QuadratureRule(pts, wts, degree=2 * n - 1)


# --------------------------------------------------------------------------
# Exact monomial integration (independent oracle for the quadrature rules).

def _poly_mul(p, q):
    out = {}
    for ea, ca in p.items():
        for eb, cb in q.items():
            e = tuple(i + j for i, j in zip(ea, eb))
            out[e] = out.get(e, 0) + ca * cb
    return out


def integrate_monomial_simplex(vertices, exponents):
    """Exact integral of prod x_i^{a_i} over the simplex with given vertices.

    The simplex is written as v0 + J xi over the unit simplex and the
    monomial is expanded in xi; each xi-monomial integrates to
    beta! / (|beta| + d)!.  Vertex coordinates are converted to Fractions,
    so the result is exact for dyadic/rational input.
    """
    verts = [[Fraction(c) for c in v] for v in np.asarray(vertices).tolist()]
    d = len(verts) - 1
    v0 = verts[0]
    jac = [[verts[j + 1][i] - v0[i] for j in range(d)] for i in range(d)]
    result = {tuple([0] * d): Fraction(1)}
    for i, a in enumerate(exponents):
        lin = {tuple([0] * d): v0[i]}
        for j in range(d):
            e = [0] * d
            e[j] = 1
            if jac[i][j] != 0:
                lin[tuple(e)] = jac[i][j]
        for _ in range(a):
            result = _poly_mul(result, lin)
    total = Fraction(0)
    for beta, c in result.items():
        num = 1
        for b in beta:
            num *= factorial(b)
        total += c * Fraction(num, factorial(sum(beta) + d))
    det = Fraction(_det_exact(jac))
    return total * abs(det)


def _det_exact(m):
    if len(m) == 1:
        return m[0][0]
    if len(m) == 2:
        return m[0][0] * m[1][1] - m[0][1] * m[1][0]
    return sum(
        (-1) ** j * m[0][j] * _det_exact([row[:j] + row[j + 1:] for row in m[1:]])
        for j in range(len(m))
    )


def integrate_polynomial_reference(coeffs):
    """Exact integral over the reference tetrahedron of a polynomial in the
    ``MONOMIALS`` basis."""
    total = Fraction(0)
    for c, e in zip(coeffs, MONOMIALS):
        if c != 0:
            total += Fraction(c) * integrate_monomial_simplex(REFERENCE_VERTICES, e)
    return total
