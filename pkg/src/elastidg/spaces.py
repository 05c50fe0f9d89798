"""Discontinuous vector- and symmetric-tensor-valued polynomial spaces.

DOF layout is element-major, component-major within an element, scalar basis
index innermost, so dof = element * dofs_per_element + component * nb + basis.
Symmetric tensors are stored in Voigt order ((xx, yy, xy) in 2D and
(xx, yy, zz, yz, xz, xy) in 3D); inner products weight off-diagonal
components by 2 so they agree with the Frobenius product of full matrices,
and fields reconstructed from coefficients are symmetric by representation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh
from .reference import (
    QuadratureRule,
    ScalarBasis,
    facet_quadrature_trace,
    make_basis,
    make_quadrature,
)

VOIGT_COMPONENTS = {
    2: ((0, 0), (1, 1), (0, 1)),
    3: ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)),
}


def voigt_weights(dim: int) -> np.ndarray:
    """Frobenius weights: 1 on diagonal components, 2 off-diagonal."""
    return np.array([1.0 if i == j else 2.0 for i, j in VOIGT_COMPONENTS[dim]])


def component_matrices(dim: int) -> np.ndarray:
    """Symmetric basis matrices E_c with voigt_to_matrix(e_c) = E_c."""
    comps = VOIGT_COMPONENTS[dim]
    mats = np.zeros((len(comps), dim, dim))
    for c, (i, j) in enumerate(comps):
        mats[c, i, j] = 1.0
        mats[c, j, i] = 1.0
    return mats


def voigt_to_matrix(voigt: np.ndarray, dim: int) -> np.ndarray:
    """Expand (..., ncomp) Voigt values to symmetric (..., dim, dim) matrices."""
    mats = np.zeros(voigt.shape[:-1] + (dim, dim))
    for c, (i, j) in enumerate(VOIGT_COMPONENTS[dim]):
        mats[..., i, j] = voigt[..., c]
        mats[..., j, i] = voigt[..., c]
    return mats


def matrix_to_voigt(mats: np.ndarray, dim: int) -> np.ndarray:
    """Extract Voigt components from symmetric (..., dim, dim) matrices."""
    return np.stack(
        [mats[..., i, j] for (i, j) in VOIGT_COMPONENTS[dim]], axis=-1
    )


@dataclass(frozen=True)
class DgSpace:
    """Fully discontinuous piecewise polynomial space on a simplicial mesh."""

    mesh: Mesh
    value_kind: str  # "vector" | "symtensor"
    degree: int
    basis: ScalarBasis
    components: int
    _volume_cache: dict = field(default_factory=dict, repr=False)
    _trace_cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @property
    def dofs_per_element(self) -> int:
        return self.components * self.basis.size

    @property
    def total_dofs(self) -> int:
        return self.mesh.num_elements * self.dofs_per_element

    def element_offset(self, element_id: int) -> int:
        return element_id * self.dofs_per_element

    def element_coefficients(self, values: np.ndarray) -> np.ndarray:
        """View a flat DOF vector as (ne, components, nb)."""
        return values.reshape(
            self.mesh.num_elements, self.components, self.basis.size
        )

    def volume_tables(self, exactness: int):
        """(rule, values (nq, nb), reference gradients (nq, nb, dim)), cached."""
        tab = self._volume_cache.get(exactness)
        if tab is None:
            rule = make_quadrature(self.dim, exactness)
            tab = (rule, self.basis.values(rule.points), self.basis.gradients(rule.points))
            self._volume_cache[exactness] = tab
        return tab

    def trace_table(self, exactness: int, local_facet: int, permutation: tuple[int, ...]) -> np.ndarray:
        """Basis values (nq, nb) at the canonical facet quadrature points."""
        key = (exactness, local_facet, permutation)
        tab = self._trace_cache.get(key)
        if tab is None:
            pts, _ = facet_quadrature_trace(self.dim, exactness, local_facet, permutation)
            tab = self.basis.values(pts)
            self._trace_cache[key] = tab
        return tab

    def default_volume_exactness(self) -> int:
        return 2 * (self.degree + 2) + 2

    def default_error_exactness(self) -> int:
        return 2 * (self.degree + 2) + 4


@dataclass
class FieldCoefficients:
    """Flat DOF vector representing one discrete field."""

    space: DgSpace
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.space.total_dofs,):
            raise ValueError(
                f"coefficient vector has length {self.values.shape}, "
                f"space has {self.space.total_dofs} dofs"
            )

    def copy(self) -> "FieldCoefficients":
        return FieldCoefficients(self.space, self.values.copy())


def build_space(mesh: Mesh, value_kind: str, degree: int) -> DgSpace:
    if value_kind not in ("vector", "symtensor"):
        raise ValueError(f"unknown value kind {value_kind!r}")
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    components = mesh.dim if value_kind == "vector" else mesh.dim * (mesh.dim + 1) // 2
    return DgSpace(
        mesh=mesh,
        value_kind=value_kind,
        degree=degree,
        basis=make_basis(mesh.dim, degree),
        components=components,
    )


def zero_field(space: DgSpace) -> FieldCoefficients:
    return FieldCoefficients(space, np.zeros(space.total_dofs))


def _sample_components(space: DgSpace, analytic_field, points: np.ndarray) -> np.ndarray:
    """Evaluate an analytic field into component form at (..., dim) points."""
    flat = points.reshape(-1, space.dim)
    raw = np.asarray(analytic_field(flat))
    if space.value_kind == "vector":
        if raw.shape != (flat.shape[0], space.dim):
            raise ValueError(f"vector field returned shape {raw.shape}")
        comp = raw
    else:
        if raw.shape != (flat.shape[0], space.dim, space.dim):
            raise ValueError(f"tensor field returned shape {raw.shape}")
        comp = matrix_to_voigt(raw, space.dim)
    return comp.reshape(points.shape[:-1] + (space.components,))


def l2_project(space: DgSpace, analytic_field, exactness: int | None = None) -> FieldCoefficients:
    """Elementwise L2 projection of an analytic field.

    With the orthonormal reference basis the element mass matrix is
    |det J| I, so projection is a plain weighted sum over quadrature points
    (componentwise; the Voigt off-diagonal weights cancel).
    """
    if exactness is None:
        exactness = space.default_error_exactness()
    rule, values, _ = space.volume_tables(exactness)
    phys = space.mesh.map_points_all(rule.points)  # (ne, nq, dim)
    comp = _sample_components(space, analytic_field, phys)  # (ne, nq, ncomp)
    coeffs = np.einsum("q,qb,eqc->ecb", rule.weights, values, comp)
    return FieldCoefficients(space, coeffs.reshape(-1))


def evaluate_field(
    coeffs: FieldCoefficients,
    element_id: int,
    reference_points: np.ndarray,
    with_divergence: bool = False,
):
    """Evaluate a field inside one element at reference points.

    Vector fields return (npts, dim) values.  Symmetric tensor fields return
    (npts, dim, dim) matrices, plus the row-wise divergence (npts, dim) when
    `with_divergence` is set (the broken divergence, from pulled-back basis
    gradients).
    """
    space = coeffs.space
    C = space.element_coefficients(coeffs.values)[element_id]  # (ncomp, nb)
    vals = space.basis.values(reference_points)  # (nq, nb)
    comp = vals @ C.T  # (nq, ncomp)
    if space.value_kind == "vector":
        if with_divergence:
            raise ValueError("divergence is defined here for symtensor fields")
        return comp
    mats = voigt_to_matrix(comp, space.dim)
    if not with_divergence:
        return mats
    grads_ref = space.basis.gradients(reference_points)  # (nq, nb, dim)
    grads = np.einsum("ij,qbj->qbi", space.mesh.jacobian_inv_t[element_id], grads_ref)
    E = component_matrices(space.dim)
    # (div tau)_i = sum_j d_j tau_ij, assembled from component matrices.
    div = np.einsum("cij,qbj,cb->qi", E, grads, C)
    return mats, div
