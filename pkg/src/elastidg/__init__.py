"""Mixed DG method for linear elasticity with strongly symmetric stress.

Discretizes the stress with discontinuous piecewise P_{k+1} symmetric
tensors and the displacement with discontinuous piecewise P_k vectors on
uniform simplicial meshes of the unit square or cube, couples them through
interior facet jump/average terms with an eta_e/h_e stress-jump penalty,
and solves the resulting symmetric saddle-point system.  A convergence
harness reproduces manufactured-solution error tables.
"""

from .analysis import (
    ConvergenceReport,
    DiagnosticError,
    ErrorReport,
    compute_errors,
    consistency_residuals,
    convergence_orders,
    infsup_constant,
    kellipticity_constant,
    lifting_constant,
)
from .cli import StudyConfig, run_study, solve_level
from .forms import (
    ComplianceTensor,
    SparseSystem,
    assemble_a,
    assemble_b,
    assemble_load,
    assemble_mass,
    assemble_star_gram,
    assemble_system,
    compliance_apply,
    facet_traces,
    lifting_apply,
)
from .mesh import (
    Facet,
    Mesh,
    MeshConstructionError,
    build_uniform_mesh,
    element_affine_map,
    facet_connectivity,
)
from .problems import ManufacturedProblem, problem_2d, problem_3d, stiffness_apply
from .reference import (
    QuadratureRule,
    ScalarBasis,
    facet_quadrature_trace,
    make_basis,
    make_quadrature,
)
from .solver import SaddleSolution, SolverError, WellPosednessError, solve_saddle
from .spaces import (
    DgSpace,
    FieldCoefficients,
    build_space,
    evaluate_field,
    l2_project,
    zero_field,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
