"""Polynomial bases and quadrature rules on reference simplices.

The reference simplex in dimension d has vertices at the origin and the d
unit coordinate vectors.  Volume rules are collapsed (Duffy-transformed)
tensor products of Gauss-Legendre and Gauss-Jacobi rules, so any exactness
degree is available constructively with positive weights.  Scalar bases are
L2-orthonormal on the reference simplex, built by Gram-Schmidt against an
exact quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import roots_jacobi, roots_legendre

# Lebesgue measure of the unit reference simplex per dimension.
REFERENCE_MEASURE = {1: 1.0, 2: 0.5, 3: 1.0 / 6.0}


def reference_vertices(dim: int) -> np.ndarray:
    """Vertices of the reference simplex, origin first, shape (dim+1, dim)."""
    verts = np.zeros((dim + 1, dim))
    verts[1:] = np.eye(dim)
    return verts


def local_facet_vertices(dim: int, local_facet: int) -> tuple[int, ...]:
    """Local vertex indices of the facet opposite `local_facet`, increasing."""
    if not 0 <= local_facet <= dim:
        raise ValueError(f"local facet {local_facet} out of range for dim {dim}")
    return tuple(i for i in range(dim + 1) if i != local_facet)


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature on a reference simplex: weights sum to its measure."""

    dim: int
    degree: int
    points: np.ndarray  # (nq, dim)
    weights: np.ndarray  # (nq,)

    @property
    def num_points(self) -> int:
        return self.points.shape[0]

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Contract quadrature weights against values sampled at the points."""
        return np.tensordot(self.weights, values, axes=(0, 0))


def _gauss_unit(n: int) -> tuple[np.ndarray, np.ndarray]:
    # Gauss-Legendre for \int_0^1 f dt.
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _jacobi_unit(n: int, alpha: int) -> tuple[np.ndarray, np.ndarray]:
    # Gauss-Jacobi for \int_0^1 f(t) (1-t)^alpha dt.
    x, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def make_quadrature(dim: int, exactness_degree: int) -> QuadratureRule:
    """Build a rule exact for polynomials of total degree `exactness_degree`.

    dim=1 is the reference segment [0, 1], used for facets of triangles.
    """
    if exactness_degree < 0:
        raise ValueError("exactness degree must be nonnegative")
    if dim not in (1, 2, 3):
        raise ValueError(f"unsupported dimension {dim}")
    n = exactness_degree // 2 + 1

    if dim == 1:
        x, w = _gauss_unit(n)
        pts = x[:, None].copy()
        wts = w
    elif dim == 2:
        # x = a(1-b), y = b; the Jacobi weight absorbs the (1-b) Jacobian.
        a, wa = _gauss_unit(n)
        b, wb = _jacobi_unit(n, 1)
        A, B = np.meshgrid(a, b, indexing="ij")
        pts = np.column_stack([(A * (1.0 - B)).ravel(), B.ravel()])
        wts = np.outer(wa, wb).ravel()
    else:
        # x = a(1-b)(1-c), y = b(1-c), z = c with Jacobian (1-b)(1-c)^2.
        a, wa = _gauss_unit(n)
        b, wb = _jacobi_unit(n, 1)
        c, wc = _jacobi_unit(n, 2)
        A, B, C = np.meshgrid(a, b, c, indexing="ij")
        pts = np.column_stack(
            [
                (A * (1.0 - B) * (1.0 - C)).ravel(),
                (B * (1.0 - C)).ravel(),
                C.ravel(),
            ]
        )
        wts = (wa[:, None, None] * wb[None, :, None] * wc[None, None, :]).ravel()

    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(dim=dim, degree=exactness_degree, points=pts, weights=wts)


def _monomial_exponents(dim: int, degree: int) -> np.ndarray:
    exps = [e for e in product(range(degree + 1), repeat=dim) if sum(e) <= degree]
    exps.sort(key=lambda e: (sum(e), e))
    return np.array(exps, dtype=np.int64)


def _monomial_values(exponents: np.ndarray, points: np.ndarray) -> np.ndarray:
    # (npts, nmono); 0**0 == 1 under numpy broadcasting.
    return np.prod(points[:, None, :] ** exponents[None, :, :], axis=2)


def _monomial_gradients(exponents: np.ndarray, points: np.ndarray) -> np.ndarray:
    npts, dim = points.shape
    nmono = exponents.shape[0]
    grads = np.zeros((npts, nmono, dim))
    for k in range(dim):
        shifted = exponents.copy()
        shifted[:, k] = np.maximum(shifted[:, k] - 1, 0)
        vals = np.prod(points[:, None, :] ** shifted[None, :, :], axis=2)
        grads[:, :, k] = exponents[None, :, k] * vals
    return grads


@dataclass(frozen=True)
class ScalarBasis:
    """L2-orthonormal basis of P_degree on the reference simplex."""

    dim: int
    degree: int
    exponents: np.ndarray  # (size, dim) monomial exponents
    coefficients: np.ndarray  # (size, size), column j = basis function j

    @property
    def size(self) -> int:
        return self.coefficients.shape[1]

    def values(self, points: np.ndarray) -> np.ndarray:
        """Basis values at reference points, shape (npts, size)."""
        return _monomial_values(self.exponents, points) @ self.coefficients

    def gradients(self, points: np.ndarray) -> np.ndarray:
        """Reference gradients at reference points, shape (npts, size, dim)."""
        dm = _monomial_gradients(self.exponents, points)
        return np.einsum("qmk,mj->qjk", dm, self.coefficients)


@lru_cache(maxsize=None)
def make_basis(dim: int, degree: int) -> ScalarBasis:
    """Orthonormalize the monomials of total degree <= `degree`.

    Two Cholesky-based Gram-Schmidt passes keep the reference mass matrix
    equal to the identity to machine precision for the degrees used here.
    """
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    if dim not in (2, 3):
        raise ValueError(f"unsupported dimension {dim}")
    exps = _monomial_exponents(dim, degree)
    quad = make_quadrature(dim, 2 * degree)
    V = _monomial_values(exps, quad.points)
    coeff = np.eye(exps.shape[0])
    for _ in range(2):
        B = V @ coeff
        gram = np.einsum("qi,q,qj->ij", B, quad.weights, B)
        L = np.linalg.cholesky(gram)
        coeff = solve_triangular(L, coeff.T, lower=True).T
    coeff.setflags(write=False)
    exps.setflags(write=False)
    return ScalarBasis(dim=dim, degree=degree, exponents=exps, coefficients=coeff)


@lru_cache(maxsize=None)
def make_facet_quadrature(dim: int, exactness_degree: int) -> QuadratureRule:
    """Rule on the reference facet ((d-1)-simplex) of a d-simplex."""
    return make_quadrature(dim - 1, exactness_degree)


@lru_cache(maxsize=None)
def facet_quadrature_trace(
    dim: int,
    exactness_degree: int,
    local_facet: int,
    permutation: tuple[int, ...],
) -> tuple[np.ndarray, np.ndarray]:
    """Facet quadrature expressed in element reference coordinates.

    The facet rule is parametrized by barycentric coordinates with respect to
    the facet's canonical vertex order (sorted global indices).  `permutation`
    maps canonical slot i to a position in the element's increasing local
    facet vertex list, as recorded by facet connectivity.  Mapping the same
    canonical rule through both adjacent elements therefore yields the same
    physical quadrature points, which makes jumps evaluable pointwise.

    Returns (points in element reference coordinates, reference facet weights).
    """
    if sorted(permutation) != list(range(dim)):
        raise ValueError(f"invalid facet permutation {permutation}")
    rule = make_facet_quadrature(dim, exactness_degree)
    lam = np.column_stack([1.0 - rule.points.sum(axis=1), rule.points])  # (nq, dim)
    locs = local_facet_vertices(dim, local_facet)
    verts = reference_vertices(dim)
    corner = np.array([verts[locs[permutation[i]]] for i in range(dim)])  # (dim, dim)
    pts = lam @ corner
    pts.setflags(write=False)
    return pts, rule.weights
