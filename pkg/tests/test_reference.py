"""Quadrature exactness and basis orthonormality on reference simplices."""

import numpy as np
import pytest

from elastidg.reference import (
    REFERENCE_MEASURE,
    facet_quadrature_trace,
    local_facet_vertices,
    make_basis,
    make_facet_quadrature,
    make_quadrature,
    reference_vertices,
)


def exact_monomial_integral(exponents) -> float:
    """int over the unit simplex of prod x_i^{a_i} = prod(a_i!) / (d + sum a_i)!."""
    from math import factorial

    d = len(exponents)
    num = 1
    for a in exponents:
        num *= factorial(a)
    return num / factorial(d + sum(exponents))


def test_quadrature_constant_2d():
    assert make_quadrature(2, 0).weights.sum() == pytest.approx(0.5, abs=1e-14)


def test_quadrature_constant_3d():
    assert make_quadrature(3, 0).weights.sum() == pytest.approx(1.0 / 6.0, abs=1e-14)


def test_quadrature_x2y2():
    # Frozen from the factorial formula: 2!2!/6! = 1/180.
    rule = make_quadrature(2, 4)
    value = rule.integrate(rule.points[:, 0] ** 2 * rule.points[:, 1] ** 2)
    assert value == pytest.approx(1.0 / 180.0, rel=1e-13)


@pytest.mark.parametrize("dim", [1, 2, 3])
@pytest.mark.parametrize("degree", [0, 1, 2, 3, 5, 8, 12])
def test_quadrature_monomial_exactness(dim, degree):
    rule = make_quadrature(dim, degree)
    assert rule.weights.sum() == pytest.approx(REFERENCE_MEASURE[dim], rel=1e-14)
    assert np.all(rule.weights > 0.0)
    for total in range(degree + 1):
        for _ in range(4):
            rng = np.random.default_rng(hash((dim, degree, total)) % 2**32)
            exps = rng.multinomial(total, np.ones(dim) / dim)
            vals = np.prod(rule.points ** exps[None, :], axis=1)
            exact = exact_monomial_integral(tuple(exps))
            assert rule.integrate(vals) == pytest.approx(exact, rel=1e-12)


@pytest.mark.parametrize("dim,degree", [(2, 6), (3, 6)])
def test_quadrature_random_polynomial(dim, degree):
    rng = np.random.default_rng(42)
    rule = make_quadrature(dim, degree)
    from elastidg.reference import _monomial_exponents, _monomial_values

    exps = _monomial_exponents(dim, degree)
    coef = rng.standard_normal(exps.shape[0])
    vals = _monomial_values(exps, rule.points) @ coef
    exact = sum(c * exact_monomial_integral(tuple(e)) for c, e in zip(coef, exps))
    assert rule.integrate(vals) == pytest.approx(exact, rel=1e-12)


def test_basis_constant_normalization():
    basis = make_basis(2, 0)
    pts = np.array([[0.1, 0.2], [0.4, 0.5]])
    assert basis.values(pts) == pytest.approx(np.sqrt(2.0) * np.ones((2, 1)), abs=1e-14)


@pytest.mark.parametrize("dim,degree", [(2, 0), (2, 1), (2, 2), (2, 3), (2, 5), (3, 0), (3, 1), (3, 2), (3, 3)])
def test_basis_orthonormal(dim, degree):
    basis = make_basis(dim, degree)
    from math import comb

    assert basis.size == comb(degree + dim, dim)
    rule = make_quadrature(dim, 2 * degree)
    V = basis.values(rule.points)
    gram = np.einsum("qi,q,qj->ij", V, rule.weights, V)
    assert np.abs(gram - np.eye(basis.size)).max() < 1e-12


def test_basis_spans_polynomials():
    # Vandermonde at generic points is nonsingular, so the basis spans P_p.
    basis = make_basis(2, 3)
    rng = np.random.default_rng(7)
    pts = rng.dirichlet((1, 1, 1), size=basis.size)[:, :2]
    V = basis.values(pts)
    assert np.linalg.matrix_rank(V) == basis.size


@pytest.mark.parametrize("dim,degree", [(2, 2), (2, 4), (3, 2)])
def test_basis_gradients_match_finite_differences(dim, degree):
    basis = make_basis(dim, degree)
    rng = np.random.default_rng(3)
    pts = 0.1 + 0.1 * rng.random((5, dim))  # interior of the simplex
    grads = basis.gradients(pts)
    step = 1e-6
    for k in range(dim):
        shift = np.zeros(dim)
        shift[k] = step
        fd = (basis.values(pts + shift) - basis.values(pts - shift)) / (2 * step)
        scale = np.abs(grads[:, :, k]).max() + 1.0
        assert np.abs(fd - grads[:, :, k]).max() / scale < 1e-6


def test_facet_rule_lengths_2d():
    verts = reference_vertices(2)
    for local in range(3):
        pts, wref = facet_quadrature_trace(2, 3, local, (0, 1))
        locs = local_facet_vertices(2, local)
        length = np.linalg.norm(verts[locs[1]] - verts[locs[0]])
        # Physical weights scale by |e| / reference measure.
        assert wref.sum() * length / REFERENCE_MEASURE[1] == pytest.approx(length, rel=1e-14)
        assert length in (1.0, pytest.approx(np.sqrt(2.0)))


def test_facet_rule_area_3d():
    rule = make_facet_quadrature(3, 2)
    assert rule.weights.sum() == pytest.approx(0.5, rel=1e-14)
    # Any face of the reference tet: scaled weights sum to the face area.
    verts = reference_vertices(3)
    for local in range(4):
        locs = local_facet_vertices(3, local)
        cross = np.cross(verts[locs[1]] - verts[locs[0]], verts[locs[2]] - verts[locs[0]])
        area = 0.5 * np.linalg.norm(cross)
        assert rule.weights.sum() * area / REFERENCE_MEASURE[2] == pytest.approx(area, rel=1e-14)


def test_trace_points_land_on_facet():
    pts, _ = facet_quadrature_trace(3, 4, 0, (0, 1, 2))
    # Facet opposite vertex 0 is x + y + z = 1.
    assert np.abs(pts.sum(axis=1) - 1.0).max() < 1e-14


def test_trace_rejects_bad_permutation():
    with pytest.raises(ValueError):
        facet_quadrature_trace(2, 2, 0, (0, 0))


@pytest.mark.parametrize("dim", [2, 3])
def test_trace_points_match_across_sides(dim):
    from elastidg.mesh import build_uniform_mesh

    mesh = build_uniform_mesh(dim, 2)
    for facet in mesh.interior_facets:
        pp, _ = facet_quadrature_trace(dim, 4, facet.plus_local, facet.plus_perm)
        pm, _ = facet_quadrature_trace(dim, 4, facet.minus_local, facet.minus_perm)
        xp = mesh.map_points(facet.plus_element, pp)
        xm = mesh.map_points(facet.minus_element, pm)
        assert np.abs(xp - xm).max() < 1e-13


def test_quadrature_validation():
    with pytest.raises(ValueError):
        make_quadrature(2, -1)
    with pytest.raises(ValueError):
        make_quadrature(4, 2)
    with pytest.raises(ValueError):
        make_basis(2, -1)
