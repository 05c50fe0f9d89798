"""DOF layout, projection, and field evaluation."""

import numpy as np
import pytest

from elastidg.mesh import build_uniform_mesh
from elastidg.spaces import (
    FieldCoefficients,
    build_space,
    evaluate_field,
    l2_project,
    voigt_to_matrix,
    zero_field,
)


def test_dof_counts_2d_vector():
    mesh = build_uniform_mesh(2, 4)
    space = build_space(mesh, "vector", 0)
    assert space.total_dofs == 32 * 2


def test_dof_counts_2d_symtensor():
    mesh = build_uniform_mesh(2, 4)
    space = build_space(mesh, "symtensor", 1)
    assert space.total_dofs == 32 * 3 * 3


def test_dof_counts_3d_symtensor():
    mesh = build_uniform_mesh(3, 2)
    space = build_space(mesh, "symtensor", 2)
    assert space.total_dofs == 48 * 6 * 10


def test_dof_layout_element_major():
    mesh = build_uniform_mesh(2, 2)
    space = build_space(mesh, "vector", 1)
    assert space.element_offset(3) == 3 * space.dofs_per_element
    coeffs = zero_field(space)
    # Component 1, basis 0 of element 2.
    coeffs.values[space.element_offset(2) + 1 * space.basis.size] = 1.0
    vals = evaluate_field(coeffs, 2, np.array([[0.25, 0.25]]))
    assert vals[0, 0] == 0.0 and vals[0, 1] != 0.0


def test_project_constant_vector():
    mesh = build_uniform_mesh(2, 3)
    space = build_space(mesh, "vector", 2)
    c = np.array([0.7, -1.3])
    coeffs = l2_project(space, lambda x: np.broadcast_to(c, (x.shape[0], 2)).copy())
    pts = np.array([[0.2, 0.3], [0.1, 0.05], [0.6, 0.3]])
    for eid in range(mesh.num_elements):
        assert np.abs(evaluate_field(coeffs, eid, pts) - c).max() < 1e-13


def _random_polynomial_field(rng, dim, degree, ncomp):
    from elastidg.reference import _monomial_exponents, _monomial_values

    exps = _monomial_exponents(dim, degree)
    coef = rng.standard_normal((exps.shape[0], ncomp))

    def field(x):
        return _monomial_values(exps, x) @ coef

    return field


@pytest.mark.parametrize("dim,degree", [(2, 1), (2, 3), (3, 2)])
def test_project_reproduces_polynomials(dim, degree):
    rng = np.random.default_rng(11)
    mesh = build_uniform_mesh(dim, 2)
    space = build_space(mesh, "vector", degree)
    field = _random_polynomial_field(rng, dim, degree, dim)
    coeffs = l2_project(space, field)
    lam = rng.dirichlet(np.ones(dim + 1), size=20)
    for eid in range(mesh.num_elements):
        ref_pts = lam[:, 1:]
        phys = mesh.map_points(eid, ref_pts)
        num = evaluate_field(coeffs, eid, ref_pts)
        assert np.abs(num - field(phys)).max() < 1e-11


def test_project_reproduces_symtensor_polynomials():
    rng = np.random.default_rng(5)
    mesh = build_uniform_mesh(2, 2)
    space = build_space(mesh, "symtensor", 2)
    comp_field = _random_polynomial_field(rng, 2, 2, 3)

    def field(x):
        return voigt_to_matrix(comp_field(x), 2)

    coeffs = l2_project(space, field)
    ref_pts = rng.dirichlet(np.ones(3), size=20)[:, 1:]
    for eid in range(mesh.num_elements):
        num = evaluate_field(coeffs, eid, ref_pts)
        assert np.abs(num - field(mesh.map_points(eid, ref_pts))).max() < 1e-11


def test_zero_coefficients_evaluate_to_zero():
    mesh = build_uniform_mesh(3, 1)
    space = build_space(mesh, "symtensor", 1)
    vals, div = evaluate_field(zero_field(space), 0, np.array([[0.2, 0.2, 0.2]]), with_divergence=True)
    assert np.all(vals == 0.0) and np.all(div == 0.0)


def test_constant_tensor_divergence_free():
    mesh = build_uniform_mesh(2, 2)
    space = build_space(mesh, "symtensor", 1)
    M = np.array([[1.0, 2.0], [2.0, -3.0]])
    coeffs = l2_project(space, lambda x: np.broadcast_to(M, (x.shape[0], 2, 2)).copy())
    pts = np.array([[0.3, 0.3], [0.1, 0.7]])
    for eid in range(mesh.num_elements):
        vals, div = evaluate_field(coeffs, eid, pts, with_divergence=True)
        assert np.abs(vals - M).max() < 1e-13
        assert np.abs(div).max() < 1e-13


def test_linear_tensor_divergence():
    # sigma = x_1 * M has div sigma = M e_1 (hand differentiation).
    mesh = build_uniform_mesh(2, 2)
    space = build_space(mesh, "symtensor", 1)
    M = np.array([[0.5, -1.0], [-1.0, 2.0]])

    def field(x):
        return x[:, 0, None, None] * M

    coeffs = l2_project(space, field)
    expected = M @ np.array([1.0, 0.0])
    for eid in range(mesh.num_elements):
        _, div = evaluate_field(coeffs, eid, np.array([[0.25, 0.5], [0.1, 0.1]]), with_divergence=True)
        assert np.abs(div - expected).max() < 1e-12


def test_symtensor_values_exactly_symmetric():
    rng = np.random.default_rng(17)
    mesh = build_uniform_mesh(3, 1)
    space = build_space(mesh, "symtensor", 2)
    coeffs = FieldCoefficients(space, rng.standard_normal(space.total_dofs))
    vals = evaluate_field(coeffs, 2, rng.dirichlet(np.ones(4), size=8)[:, 1:])
    assert np.array_equal(vals, np.swapaxes(vals, -1, -2))


def test_coefficient_length_validated():
    mesh = build_uniform_mesh(2, 1)
    space = build_space(mesh, "vector", 1)
    with pytest.raises(ValueError):
        FieldCoefficients(space, np.zeros(space.total_dofs + 1))


def test_build_space_validation():
    mesh = build_uniform_mesh(2, 1)
    with pytest.raises(ValueError):
        build_space(mesh, "tensor", 1)
    with pytest.raises(ValueError):
        build_space(mesh, "vector", -1)
