"""Saddle-point solver paths and well-posedness behavior."""

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import quartic_problem_2d
from elastidg.analysis import compute_errors
from elastidg.forms import ComplianceTensor, assemble_system
from elastidg.mesh import build_uniform_mesh
from elastidg.problems import problem_2d
from elastidg.solver import SolverError, WellPosednessError, solve_saddle
from elastidg.spaces import FieldCoefficients, build_space


def paper_system(n=4, k=0):
    prob = problem_2d()
    mesh = build_uniform_mesh(2, n)
    stress = build_space(mesh, "symtensor", k + 1)
    disp = build_space(mesh, "vector", k)
    ct = ComplianceTensor(mu=prob.mu, lam=prob.lam, dim=2)
    return prob, stress, disp, assemble_system(stress, disp, ct, prob.f)


def test_zero_load_gives_zero_solution():
    _, stress, disp, system = paper_system()
    sol = solve_saddle(system.A, system.B, np.zeros_like(system.F))
    assert np.abs(sol.stress).max() < 1e-14
    assert np.abs(sol.displacement).max() < 1e-14


def test_block_residual_invariant():
    _, _, _, system = paper_system()
    sol = solve_saddle(system.A, system.B, system.F)
    assert sol.residual_stress_eq <= 1e-9
    assert sol.residual_displacement_eq <= 1e-9


def test_scaling_equivariance():
    _, _, _, system = paper_system()
    base = solve_saddle(system.A, system.B, system.F)
    scaled = solve_saddle(system.A, system.B, 7.5 * system.F)
    assert np.abs(scaled.stress - 7.5 * base.stress).max() <= 1e-12 * np.abs(base.stress).max() * 7.5 * 10
    assert np.abs(scaled.displacement - 7.5 * base.displacement).max() <= (
        1e-12 * np.abs(base.displacement).max() * 7.5 * 10
    )


def test_direct_and_schur_agree_on_coarse_mesh():
    _, stress, _, system = paper_system()
    direct = solve_saddle(system.A, system.B, system.F, "direct")
    schur = solve_saddle(system.A, system.B, system.F, "schur-cg",
                         stress_block_size=stress.dofs_per_element)
    rel_s = np.linalg.norm(direct.stress - schur.stress) / np.linalg.norm(direct.stress)
    rel_u = np.linalg.norm(direct.displacement - schur.displacement) / np.linalg.norm(
        direct.displacement
    )
    assert rel_s < 1e-7 and rel_u < 1e-7


def test_schur_without_block_size_falls_back_to_diagonal():
    _, _, _, system = paper_system(n=2)
    sol = solve_saddle(system.A, system.B, system.F, "schur-cg")
    assert sol.residual_displacement_eq <= 1e-9


def test_minres_mg_agrees_with_direct():
    from elastidg.forms import assemble_a

    prob, stress, disp, system = paper_system(n=4)
    ct = ComplianceTensor(mu=prob.mu, lam=prob.lam, dim=2)
    direct = solve_saddle(system.A, system.B, system.F, "direct")
    mg = solve_saddle(
        system.A, system.B, system.F, "minres-mg",
        stress_block_size=stress.dofs_per_element,
        stress_space=stress,
        schur_mass=assemble_a(stress, ct, eta=0.0),
    )
    rel = np.linalg.norm(direct.stress - mg.stress) / np.linalg.norm(direct.stress)
    assert rel < 1e-7
    assert mg.residual_stress_eq <= 1e-9 and mg.residual_displacement_eq <= 1e-9


def test_minres_mg_requires_space():
    _, _, _, system = paper_system(n=2)
    with pytest.raises(ValueError):
        solve_saddle(system.A, system.B, system.F, "minres-mg")


@pytest.mark.parametrize("method", ["direct", "schur-cg"])
def test_polynomial_exactness_quartic(method):
    # u in P_4 with u = 0 on the boundary and sigma in P_3 c P_5: both lie in
    # the discrete spaces for k = 4, so consistency plus uniqueness force the
    # discrete solution to reproduce them.
    prob = quartic_problem_2d()
    mesh = build_uniform_mesh(2, 2)
    stress = build_space(mesh, "symtensor", 5)
    disp = build_space(mesh, "vector", 4)
    ct = ComplianceTensor(mu=prob.mu, lam=prob.lam, dim=2)
    system = assemble_system(stress, disp, ct, prob.f)
    sol = solve_saddle(system.A, system.B, system.F, method,
                       stress_block_size=stress.dofs_per_element)
    report = compute_errors(
        prob,
        FieldCoefficients(stress, sol.stress),
        FieldCoefficients(disp, sol.displacement),
    )
    assert report.err_u_L2 < 1e-9
    assert report.err_star < 1e-9


def test_dimension_mismatch_rejected():
    A = sp.identity(4, format="csr")
    B = sp.csr_matrix(np.ones((2, 3)))
    with pytest.raises(ValueError):
        solve_saddle(A, B, np.ones(2))


def test_unknown_method_rejected():
    A = sp.identity(2, format="csr")
    B = sp.csr_matrix(np.ones((1, 2)))
    with pytest.raises(ValueError):
        solve_saddle(A, B, np.ones(1), method="gauss-seidel")


def test_singular_system_reported_as_well_posedness_failure():
    # B = 0 leaves the displacement equation unsolvable.
    A = sp.identity(4, format="csr")
    B = sp.csr_matrix((2, 4))
    with pytest.raises(WellPosednessError):
        solve_saddle(A, B, np.ones(2))


def test_schur_iteration_cap_reported():
    _, stress, _, system = paper_system()
    with pytest.raises(SolverError, match="converge"):
        solve_saddle(system.A, system.B, system.F, "schur-cg",
                     stress_block_size=stress.dofs_per_element, maxiter=1)
