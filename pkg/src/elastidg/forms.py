"""Assembly of the mixed DG bilinear forms, load vector, and facet operators.

The stress-stress form combines the compliance volume term with an interior
facet penalty on stress jumps weighted by eta_e / h_e.  The stress-displacement
form pairs the broken divergence with displacement test functions and
subtracts the interior facet coupling of stress jumps against displacement
averages; it has no boundary terms, which is how the homogeneous Dirichlet
condition enters this mixed formulation (the displacement trace is set to
zero on the boundary, so no boundary penalty is needed).

Facet contributions are accumulated into both adjacent elements in a single
facet pass, with symmetric terms generated from one product so the assembled
stress block is exactly symmetric.  Element and facet loops are vectorized
over groups with identical trace tables; results do not depend on chunking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .mesh import Facet, Mesh
from .reference import REFERENCE_MEASURE, facet_quadrature_trace, make_facet_quadrature
from .spaces import (
    DgSpace,
    FieldCoefficients,
    component_matrices,
    voigt_to_matrix,
    voigt_weights,
)


@dataclass(frozen=True)
class ComplianceTensor:
    """Isotropic compliance: maps stress to strain.

    Applying it gives (1/(2 mu)) (sigma - lam/(2 mu + d lam) tr(sigma) I_d),
    the inverse of sigma = 2 mu eps + lam tr(eps) I.
    """

    mu: float
    lam: float
    dim: int

    def __post_init__(self):
        if self.mu == 0.0 or 2.0 * self.mu + self.dim * self.lam == 0.0:
            raise ValueError("compliance tensor is singular for these parameters")

    def voigt_matrix(self) -> np.ndarray:
        """Action on Voigt components (no Frobenius weights)."""
        d = self.dim
        nc = d * (d + 1) // 2
        M = np.zeros((nc, nc))
        coef = self.lam / (2.0 * self.mu + d * self.lam)
        M[:d, :d] = (np.eye(d) - coef) / (2.0 * self.mu)
        for c in range(d, nc):
            M[c, c] = 1.0 / (2.0 * self.mu)
        return M

    def weighted_voigt_matrix(self) -> np.ndarray:
        """W @ voigt_matrix with Frobenius weights; symmetric by construction."""
        W = np.diag(voigt_weights(self.dim))
        M = W @ self.voigt_matrix()
        return 0.5 * (M + M.T)


def compliance_apply(ct: ComplianceTensor, sigma: np.ndarray) -> np.ndarray:
    """Apply the compliance tensor to (..., d, d) symmetric matrices."""
    sigma = np.asarray(sigma, dtype=float)
    d = ct.dim
    trace = np.trace(sigma, axis1=-2, axis2=-1)
    coef = ct.lam / (2.0 * ct.mu + d * ct.lam)
    return (sigma - coef * trace[..., None, None] * np.eye(d)) / (2.0 * ct.mu)


@dataclass
class SparseSystem:
    """Assembled saddle-point blocks [A B^T; B 0] with load F."""

    A: sp.csr_matrix
    B: sp.csr_matrix
    F: np.ndarray
    stress_space: DgSpace
    displacement_space: DgSpace


def pair_exactness(displacement_degree: int) -> tuple[int, int, int]:
    """(volume, facet, error-norm) quadrature exactness for a space pair."""
    k = displacement_degree
    return 2 * (k + 2) + 2, 2 * (k + 2) + 2, 2 * (k + 2) + 4


def _eta_array(mesh: Mesh, eta) -> np.ndarray:
    if np.isscalar(eta):
        return np.full(len(mesh.facets), float(eta))
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (len(mesh.facets),):
        raise ValueError("eta must be scalar or one value per facet")
    return eta


def _reference_mass(space: DgSpace, exactness: int) -> np.ndarray:
    rule, values, _ = space.volume_tables(exactness)
    M = np.einsum("qi,q,qj->ij", values, rule.weights, values)
    return 0.5 * (M + M.T)


def _facet_groups(mesh: Mesh, interior_only: bool = True):
    """Group facets sharing trace tables: key -> list of facet indices."""
    groups: dict[tuple, list[int]] = {}
    for idx, f in enumerate(mesh.facets):
        if interior_only and not f.is_interior:
            continue
        key = (f.plus_local, f.plus_perm, f.minus_local, f.minus_perm)
        groups.setdefault(key, []).append(idx)
    return groups


def _physical_facet_scale(mesh: Mesh, facets: list[Facet]) -> np.ndarray:
    ref = REFERENCE_MEASURE[mesh.dim - 1]
    return np.array([f.measure / ref for f in facets])


class _Triplets:
    """Block scatterer that folds batches into a running CSR matrix.

    Exact zeros (from sparse component coupling at axis-aligned normals) are
    dropped before conversion, and indices are 32-bit: together this keeps
    the peak assembly footprint near the final matrix size, which matters
    for the finest 3D meshes.
    """

    def __init__(self, shape):
        self.shape = shape
        self.batches: list[sp.csr_matrix] = []

    def add_blocks(self, row_offsets, col_offsets, row_local, col_local, blocks):
        """Scatter (nf, nrow, ncol) blocks at per-facet/element offsets."""
        nf, nrow, ncol = blocks.shape
        rows = (row_offsets[:, None, None] + row_local[None, :, None]).astype(np.int32)
        cols = (col_offsets[:, None, None] + col_local[None, None, :]).astype(np.int32)
        rows = np.broadcast_to(rows, (nf, nrow, ncol)).reshape(-1)
        cols = np.broadcast_to(cols, (nf, nrow, ncol)).reshape(-1)
        data = np.ascontiguousarray(blocks).reshape(-1)
        keep = data != 0.0
        if not np.all(keep):
            rows, cols, data = rows[keep], cols[keep], data[keep]
        batch = sp.coo_matrix((data, (rows, cols)), shape=self.shape).tocsr()
        batch.sum_duplicates()
        self.batches.append(batch)

    def build(self) -> sp.csr_matrix:
        if not self.batches:
            return sp.csr_matrix(self.shape)
        # Pairwise tree reduction: mirror entries follow identical addition
        # paths, preserving the bitwise symmetry of the emitted blocks.
        level = self.batches
        self.batches = []
        while len(level) > 1:
            level = [
                level[i] + level[i + 1] if i + 1 < len(level) else level[i]
                for i in range(0, len(level), 2)
            ]
        return level[0]


def _element_chunks(num_elements: int, per_element_cost: int, budget: int = 6_000_000):
    size = max(1, budget // max(per_element_cost, 1))
    for start in range(0, num_elements, size):
        yield start, min(start + size, num_elements)


def _assemble_jump_penalty(space: DgSpace, eta, exactness: int) -> sp.csr_matrix:
    """Interior facet term:  sum_e (eta_e / h_e) int_e [sigma] . [tau] ds."""
    mesh = space.mesh
    nb = space.basis.size
    nc = space.components
    dpe = space.dofs_per_element
    E = component_matrices(mesh.dim)
    wref = make_facet_quadrature(mesh.dim, exactness).weights
    eta_all = _eta_array(mesh, eta)
    if np.any(eta_all[[i for i, f in enumerate(mesh.facets) if f.is_interior]] < 0.0):
        raise ValueError("facet penalties must be nonnegative")

    out = _Triplets((space.total_dofs, space.total_dofs))
    local = np.arange(dpe)
    for (pl, pp, ml, mp), idxs in _facet_groups(mesh).items():
        facets = [mesh.facets[i] for i in idxs]
        Tp = space.trace_table(exactness, pl, pp)
        Tm = space.trace_table(exactness, ml, mp)
        # Bitwise-symmetric factors: the cross mass of the minus side is the
        # exact transpose of the plus side's, so the assembled matrix is
        # symmetric to the last bit.
        Mpp = np.einsum("qi,q,qj->ij", Tp, wref, Tp)
        Mmm = np.einsum("qi,q,qj->ij", Tm, wref, Tm)
        Mpm = np.einsum("qi,q,qj->ij", Tp, wref, Tm)
        masses = {
            ("p", "p"): 0.5 * (Mpp + Mpp.T),
            ("p", "m"): Mpm,
            ("m", "p"): Mpm.T,
            ("m", "m"): 0.5 * (Mmm + Mmm.T),
        }
        normals = np.array([f.normal for f in facets])
        scale = (
            _physical_facet_scale(mesh, facets)
            * eta_all[idxs]
            / np.array([f.diameter for f in facets])
        )
        V = np.einsum("cij,fj->fci", E, normals)  # jump direction of each component
        coef = np.einsum("f,fci,fdi->fcd", scale, V, V)
        coef = 0.5 * (coef + coef.transpose(0, 2, 1))
        offs = {
            "p": np.array([space.element_offset(f.plus_element) for f in facets]),
            "m": np.array([space.element_offset(f.minus_element) for f in facets]),
        }
        for s in ("p", "m"):
            for t in ("p", "m"):
                sign = 1.0 if s == t else -1.0
                blocks = sign * np.einsum("fcd,ij->fcidj", coef, masses[(s, t)])
                out.add_blocks(
                    offs[s], offs[t], local, local, blocks.reshape(len(idxs), dpe, dpe)
                )
    return out.build()


def _assemble_compliance_volume(space: DgSpace, ct: ComplianceTensor, exactness: int) -> sp.csr_matrix:
    mesh = space.mesh
    dpe = space.dofs_per_element
    local_block = np.kron(ct.weighted_voigt_matrix(), _reference_mass(space, exactness))
    out = _Triplets((space.total_dofs, space.total_dofs))
    local = np.arange(dpe)
    offs = np.arange(mesh.num_elements) * dpe
    blocks = mesh.jacobian_dets[:, None, None] * local_block[None, :, :]
    out.add_blocks(offs, offs, local, local, blocks)
    return out.build()


def assemble_a(stress_space: DgSpace, ct: ComplianceTensor, eta=1.0, *,
               volume_exactness: int | None = None,
               facet_exactness: int | None = None) -> sp.csr_matrix:
    """Stress-stress block: compliance mass plus interior jump penalty."""
    if stress_space.value_kind != "symtensor":
        raise ValueError("assemble_a expects the symmetric tensor stress space")
    if ct.dim != stress_space.dim:
        raise ValueError("compliance tensor dimension mismatch")
    k = stress_space.degree - 1
    vol = volume_exactness if volume_exactness is not None else 2 * (k + 2) + 2
    fac = facet_exactness if facet_exactness is not None else 2 * (k + 2) + 2
    A = (_assemble_compliance_volume(stress_space, ct, vol)
         + _assemble_jump_penalty(stress_space, eta, fac)).tocsr()
    # Facet blocks are emitted as exact transposes of each other, but sparse
    # duplicate reduction may still sum mirror entries in different orders;
    # averaging with the transpose restores bitwise symmetry.
    return 0.5 * (A + A.T).tocsr()


def _divergence_tables(space: DgSpace, exactness: int, start: int, stop: int):
    """D[e, q, c, b, i] = i-th component of div of (component c, basis b)."""
    rule, _, grads_ref = space.volume_tables(exactness)
    E = component_matrices(space.dim)
    ginv = space.mesh.jacobian_inv_t[start:stop]
    gphys = np.einsum("eij,qbj->eqbi", ginv, grads_ref)
    return rule, np.einsum("cij,eqbj->eqcbi", E, gphys)


def assemble_b(stress_space: DgSpace, displacement_space: DgSpace, *,
               volume_exactness: int | None = None,
               facet_exactness: int | None = None) -> sp.csr_matrix:
    """Displacement-test by stress-trial block of the mixed form."""
    mesh = stress_space.mesh
    if displacement_space.mesh is not mesh:
        raise ValueError("spaces must share one mesh")
    if stress_space.value_kind != "symtensor" or displacement_space.value_kind != "vector":
        raise ValueError("expected (symtensor stress, vector displacement) spaces")
    k = displacement_space.degree
    vol = volume_exactness if volume_exactness is not None else 2 * (k + 2) + 2
    fac = facet_exactness if facet_exactness is not None else 2 * (k + 2) + 2

    nbs = stress_space.basis.size
    ncs = stress_space.components
    nbu = displacement_space.basis.size
    d = mesh.dim
    dpe_s = stress_space.dofs_per_element
    dpe_u = displacement_space.dofs_per_element
    out = _Triplets((displacement_space.total_dofs, stress_space.total_dofs))
    local_u = np.arange(dpe_u)
    local_s = np.arange(dpe_s)

    rule, values_u, _ = displacement_space.volume_tables(vol)
    nq = rule.num_points
    for start, stop in _element_chunks(mesh.num_elements, nq * ncs * nbs * d):
        _, D = _divergence_tables(stress_space, vol, start, stop)
        dets = mesh.jacobian_dets[start:stop]
        blocks = np.einsum("e,q,qa,eqcbi->eiacb", dets, rule.weights, values_u, D)
        ne = stop - start
        offs = np.arange(start, stop)
        out.add_blocks(
            offs * dpe_u,
            offs * dpe_s,
            local_u,
            local_s,
            blocks.reshape(ne, dpe_u, dpe_s),
        )

    E = component_matrices(d)
    wref = make_facet_quadrature(d, fac).weights
    for (pl, pp, ml, mp), idxs in _facet_groups(mesh).items():
        facets = [mesh.facets[i] for i in idxs]
        Ts = {"p": stress_space.trace_table(fac, pl, pp),
              "m": stress_space.trace_table(fac, ml, mp)}
        Tu = {"p": displacement_space.trace_table(fac, pl, pp),
              "m": displacement_space.trace_table(fac, ml, mp)}
        normals = np.array([f.normal for f in facets])
        scale = _physical_facet_scale(mesh, facets)
        V = np.einsum("cij,fj->fci", E, normals)
        offs = {
            "p": {
                "u": np.array([displacement_space.element_offset(f.plus_element) for f in facets]),
                "s": np.array([stress_space.element_offset(f.plus_element) for f in facets]),
            },
            "m": {
                "u": np.array([displacement_space.element_offset(f.minus_element) for f in facets]),
                "s": np.array([stress_space.element_offset(f.minus_element) for f in facets]),
            },
        }
        for s in ("p", "m"):  # displacement average side
            for t in ("p", "m"):  # stress jump side
                tsign = 1.0 if t == "p" else -1.0
                N = np.einsum("qa,q,qb->ab", Tu[s], wref, Ts[t])
                blocks = (-0.5 * tsign) * np.einsum(
                    "f,fci,ab->fiacb", scale, V, N
                )
                out.add_blocks(
                    offs[s]["u"],
                    offs[t]["s"],
                    local_u,
                    local_s,
                    blocks.reshape(len(idxs), dpe_u, dpe_s),
                )
    return out.build()


def assemble_load(displacement_space: DgSpace, f: Callable[[np.ndarray], np.ndarray], *,
                  exactness: int | None = None) -> np.ndarray:
    """Load vector F_i = int f . phi_i dx against displacement test functions."""
    if displacement_space.value_kind != "vector":
        raise ValueError("load is assembled against the displacement space")
    k = displacement_space.degree
    exc = exactness if exactness is not None else 2 * (k + 2) + 2
    mesh = displacement_space.mesh
    rule, values, _ = displacement_space.volume_tables(exc)
    F = np.empty((mesh.num_elements, displacement_space.components, displacement_space.basis.size))
    nq = rule.num_points
    for start, stop in _element_chunks(mesh.num_elements, nq * mesh.dim):
        phys = mesh.map_points_all(rule.points)[start:stop]
        fv = np.asarray(f(phys.reshape(-1, mesh.dim))).reshape(stop - start, nq, mesh.dim)
        F[start:stop] = np.einsum(
            "e,q,eqc,qb->ecb", mesh.jacobian_dets[start:stop], rule.weights, fv, values
        )
    return F.reshape(-1)


def assemble_mass(space: DgSpace, *, exactness: int | None = None) -> sp.csr_matrix:
    """Block-diagonal L2 mass matrix (Frobenius-weighted for tensor spaces)."""
    exc = exactness if exactness is not None else space.default_volume_exactness()
    weights = (
        np.ones(space.components)
        if space.value_kind == "vector"
        else voigt_weights(space.dim)
    )
    local = np.kron(np.diag(weights), _reference_mass(space, exc))
    out = _Triplets((space.total_dofs, space.total_dofs))
    offs = np.arange(space.mesh.num_elements) * space.dofs_per_element
    blocks = space.mesh.jacobian_dets[:, None, None] * local[None, :, :]
    out.add_blocks(offs, offs, np.arange(space.dofs_per_element), np.arange(space.dofs_per_element), blocks)
    return out.build()


def assemble_star_gram(stress_space: DgSpace, eta=1.0, *,
                       volume_exactness: int | None = None,
                       facet_exactness: int | None = None) -> sp.csr_matrix:
    """Gram matrix of the stress stability norm.

    The squared norm is the L2 norm plus the broken divergence norm plus the
    eta_e / h_e weighted jump seminorm over interior facets.
    """
    k = stress_space.degree - 1
    vol = volume_exactness if volume_exactness is not None else 2 * (k + 2) + 2
    fac = facet_exactness if facet_exactness is not None else 2 * (k + 2) + 2
    mesh = stress_space.mesh
    dpe = stress_space.dofs_per_element
    G = assemble_mass(stress_space, exactness=vol)

    out = _Triplets((stress_space.total_dofs, stress_space.total_dofs))
    rule, _, _ = stress_space.volume_tables(vol)
    nq = rule.num_points
    d = mesh.dim
    nbs = stress_space.basis.size
    local = np.arange(dpe)
    for start, stop in _element_chunks(mesh.num_elements, nq * stress_space.components * nbs * d):
        _, D = _divergence_tables(stress_space, vol, start, stop)
        dets = mesh.jacobian_dets[start:stop]
        blocks = np.einsum("e,q,eqabi,eqcdi->eabcd", dets, rule.weights, D, D)
        blocks = blocks.reshape(stop - start, dpe, dpe)
        blocks = 0.5 * (blocks + blocks.transpose(0, 2, 1))
        offs = np.arange(start, stop) * dpe
        out.add_blocks(offs, offs, local, local, blocks)
    G = (G + out.build() + _assemble_jump_penalty(stress_space, eta, fac)).tocsr()
    return 0.5 * (G + G.T).tocsr()


def assemble_system(stress_space: DgSpace, displacement_space: DgSpace,
                    ct: ComplianceTensor, f, eta=1.0) -> SparseSystem:
    """Assemble the full mixed system for load f with penalty eta."""
    k = displacement_space.degree
    vol, fac, _ = pair_exactness(k)
    A = assemble_a(stress_space, ct, eta, volume_exactness=vol, facet_exactness=fac)
    B = assemble_b(stress_space, displacement_space, volume_exactness=vol, facet_exactness=fac)
    F = assemble_load(displacement_space, f, exactness=vol)
    return SparseSystem(A=A, B=B, F=F, stress_space=stress_space,
                        displacement_space=displacement_space)


@dataclass(frozen=True)
class FacetTraces:
    """Average/jump data of one field at the facet quadrature points.

    For a symtensor field: `average` is {tau} (nq, d, d) and `vector_jump`
    is [tau] (nq, d).  For a vector field: `average` is {v} (nq, d) and
    `tensor_jump` is the symmetric tensor jump (nq, d, d).  On boundary
    facets the single-sided conventions are {tau} = tau, [tau] = tau n,
    {v} = v, and tensor jump v sym-tensor-product n.
    """

    points: np.ndarray
    weights: np.ndarray
    average: np.ndarray
    vector_jump: np.ndarray | None
    tensor_jump: np.ndarray | None
    plus_values: np.ndarray
    minus_values: np.ndarray | None


def _side_components(coeffs: FieldCoefficients, facet: Facet, side: str, exactness: int) -> np.ndarray:
    space = coeffs.space
    if side == "p":
        elem, local, perm = facet.plus_element, facet.plus_local, facet.plus_perm
    else:
        elem, local, perm = facet.minus_element, facet.minus_local, facet.minus_perm
    T = space.trace_table(exactness, local, perm)
    C = space.element_coefficients(coeffs.values)[elem]
    return T @ C.T  # (nq, ncomp)


def facet_traces(coeffs: FieldCoefficients, facet: Facet, *, exactness: int | None = None) -> FacetTraces:
    """Evaluate {.}, [.], and the tensor jump of a discrete field on a facet."""
    space = coeffs.space
    d = space.dim
    if exactness is None:
        exactness = space.default_volume_exactness()
    pts_ref, wref = facet_quadrature_trace(d, exactness, facet.plus_local, facet.plus_perm)
    points = space.mesh.map_points(facet.plus_element, pts_ref)
    weights = wref * facet.measure / REFERENCE_MEASURE[d - 1]
    n = facet.normal

    plus = _side_components(coeffs, facet, "p", exactness)
    minus = _side_components(coeffs, facet, "m", exactness) if facet.is_interior else None

    if space.value_kind == "symtensor":
        plus_m = voigt_to_matrix(plus, d)
        if facet.is_interior:
            minus_m = voigt_to_matrix(minus, d)
            average = 0.5 * (plus_m + minus_m)
            vector_jump = (plus_m - minus_m) @ n
        else:
            minus_m = None
            average = plus_m
            vector_jump = plus_m @ n
        return FacetTraces(points, weights, average, vector_jump, None, plus_m, minus_m)

    outer = lambda v: 0.5 * (v[:, :, None] * n[None, None, :] + n[None, :, None] * v[:, None, :])
    if facet.is_interior:
        average = 0.5 * (plus + minus)
        tensor_jump = outer(plus - minus)
    else:
        average = plus
        tensor_jump = outer(plus)
    return FacetTraces(points, weights, average, None, tensor_jump, plus, minus)


def lifting_apply(displacement_space: DgSpace, facet: Facet, w, *,
                  exactness: int | None = None) -> FieldCoefficients:
    """Local lifting of a facet vector field into the displacement space.

    Defined by  int r_e(w) . v_h dx = - int_e w . {v_h} ds  for all v_h, so
    the result is supported on the facet's adjacent elements.  `w` is either
    a callable of physical points or an array of values (nq, d) matching the
    facet quadrature of the requested exactness.
    """
    space = displacement_space
    d = space.dim
    if exactness is None:
        exactness = space.default_volume_exactness()
    pts_ref, wref = facet_quadrature_trace(d, exactness, facet.plus_local, facet.plus_perm)
    points = space.mesh.map_points(facet.plus_element, pts_ref)
    wq = wref * facet.measure / REFERENCE_MEASURE[d - 1]
    values = np.asarray(w(points) if callable(w) else w, dtype=float)
    if values.shape != (len(wq), d):
        raise ValueError(f"facet field has shape {values.shape}, expected ({len(wq)}, {d})")

    Mref = _reference_mass(space, space.default_volume_exactness())
    out = np.zeros(space.total_dofs)
    sides = [("p", facet.plus_element, facet.plus_local, facet.plus_perm)]
    if facet.is_interior:
        sides.append(("m", facet.minus_element, facet.minus_local, facet.minus_perm))
    factor = 0.5 if facet.is_interior else 1.0
    for _, elem, local, perm in sides:
        T = space.trace_table(exactness, local, perm)
        rhs = -factor * np.einsum("q,qc,qb->cb", wq, values, T)
        coeff = np.linalg.solve(Mref, rhs.T).T / space.mesh.jacobian_dets[elem]
        off = space.element_offset(elem)
        out[off : off + space.dofs_per_element] = coeff.reshape(-1)
    return FieldCoefficients(space, out)
