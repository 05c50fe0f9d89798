"""Error norms, convergence orders, and well-posedness diagnostics.

Error norms are evaluated with a quadrature two degrees beyond the assembly
rule because the manufactured solutions are non-polynomial.  The stability
("star") norm of the stress error is assembled from its three squared pieces,
so err_star**2 == err_sigma_L2**2 + err_div**2 + err_jump**2 holds by
construction.  The inf-sup and kernel-ellipticity constants are dense
eigenvalue diagnostics, deliberately restricted to coarse meshes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .forms import (
    ComplianceTensor,
    _divergence_tables,
    _element_chunks,
    _facet_groups,
    _physical_facet_scale,
    _reference_mass,
    compliance_apply,
    lifting_apply,
    pair_exactness,
)
from .problems import ManufacturedProblem
from .reference import REFERENCE_MEASURE, facet_quadrature_trace, make_facet_quadrature
from .spaces import (
    DgSpace,
    FieldCoefficients,
    component_matrices,
    matrix_to_voigt,
    voigt_to_matrix,
    voigt_weights,
)

NORM_KEYS = ("u_L2", "sigma_L2", "div", "jump", "star", "A", "u_h1")


class DiagnosticError(RuntimeError):
    """A well-posedness diagnostic found a structural defect (rank loss)."""


@dataclass(frozen=True)
class ErrorReport:
    """Error norms of one solve at mesh size h."""

    h: float
    dofs_sigma: int
    dofs_u: int
    err_u_L2: float
    err_sigma_L2: float
    err_div: float
    err_jump: float
    err_star: float
    err_A: float
    err_u_h1: float

    def as_dict(self) -> dict:
        return {k: getattr(self, "err_" + k) for k in NORM_KEYS}


@dataclass(frozen=True)
class ConvergenceReport:
    """Per-level errors plus observed orders between consecutive levels."""

    reports: tuple[ErrorReport, ...]
    orders: dict

    def final_order(self, key: str) -> float:
        return self.orders[key][-1]


def compute_errors(problem: ManufacturedProblem, sigma_h: FieldCoefficients,
                   u_h: FieldCoefficients, *, eta=1.0,
                   exactness: int | None = None, h: float | None = None) -> ErrorReport:
    """All error norms of a discrete solution against the exact fields.

    The broken divergence of the discrete stress comes from basis
    derivatives; the exact divergence is the analytic load.  The jump
    seminorm uses the discrete stress jumps only, since the exact stress is
    single-valued on facets.  `h` defaults to the uniform grid spacing
    (largest element diameter over sqrt(dim)).
    """
    stress_space = sigma_h.space
    disp_space = u_h.space
    mesh = stress_space.mesh
    d = mesh.dim
    if exactness is None:
        exactness = pair_exactness(disp_space.degree)[2]
    if h is None:
        h = float(mesh.element_diameters.max()) / np.sqrt(d)
    ct = ComplianceTensor(mu=problem.mu, lam=problem.lam, dim=d)

    rule, values_s, _ = stress_space.volume_tables(exactness)
    _, values_u, grads_u = disp_space.volume_tables(exactness)
    w = rule.weights
    nq = rule.num_points
    Cs = stress_space.element_coefficients(sigma_h.values)
    Cu = disp_space.element_coefficients(u_h.values)

    sq_u = sq_sigma = sq_div = sq_A = sq_h1 = 0.0
    cost = nq * stress_space.components * stress_space.basis.size * d
    for start, stop in _element_chunks(mesh.num_elements, cost):
        dets = mesh.jacobian_dets[start:stop]
        phys = mesh.map_points_all(rule.points)[start:stop]
        flat = phys.reshape(-1, d)
        ne = stop - start

        u_ex = problem.u(flat).reshape(ne, nq, d)
        grad_ex = problem.grad_u(flat).reshape(ne, nq, d, d)
        sig_ex = problem.sigma(flat).reshape(ne, nq, d, d)
        div_ex = problem.f(flat).reshape(ne, nq, d)

        u_num = np.einsum("qb,ecb->eqc", values_u, Cu[start:stop])
        du = u_ex - u_num
        sq_u += np.einsum("e,q,eqc,eqc->", dets, w, du, du)

        gphys = np.einsum("eij,qbj->eqbi", mesh.jacobian_inv_t[start:stop], grads_u)
        grad_num = np.einsum("ecb,eqbi->eqci", Cu[start:stop], gphys)
        dg = grad_ex - grad_num
        sq_h1 += np.einsum("e,q,eqci,eqci->", dets, w, dg, dg)

        sv = np.einsum("qb,ecb->eqc", values_s, Cs[start:stop])
        ds = sig_ex - voigt_to_matrix(sv, d)
        sq_sigma += np.einsum("e,q,eqij,eqij->", dets, w, ds, ds)
        sq_A += np.einsum("e,q,eqij,eqij->", dets, w, compliance_apply(ct, ds), ds)

        _, D = _divergence_tables(stress_space, exactness, start, stop)
        dd = div_ex - np.einsum("ecb,eqcbi->eqi", Cs[start:stop], D)
        sq_div += np.einsum("e,q,eqi,eqi->", dets, w, dd, dd)

    sq_jump = _stress_jump_seminorm_sq(sigma_h, eta, exactness)
    sq_star = sq_sigma + sq_div + sq_jump
    return ErrorReport(
        h=h,
        dofs_sigma=stress_space.total_dofs,
        dofs_u=disp_space.total_dofs,
        err_u_L2=float(np.sqrt(sq_u)),
        err_sigma_L2=float(np.sqrt(sq_sigma)),
        err_div=float(np.sqrt(sq_div)),
        err_jump=float(np.sqrt(sq_jump)),
        err_star=float(np.sqrt(sq_star)),
        err_A=float(np.sqrt(sq_A)),
        err_u_h1=float(np.sqrt(sq_h1)),
    )


def _stress_jump_seminorm_sq(sigma_h: FieldCoefficients, eta, exactness: int) -> float:
    space = sigma_h.space
    mesh = space.mesh
    E = component_matrices(mesh.dim)
    wref = make_facet_quadrature(mesh.dim, exactness).weights
    eta_all = np.full(len(mesh.facets), eta) if np.isscalar(eta) else np.asarray(eta)
    C = space.element_coefficients(sigma_h.values)
    total = 0.0
    for (pl, pp, ml, mp), idxs in _facet_groups(mesh).items():
        facets = [mesh.facets[i] for i in idxs]
        Tp = space.trace_table(exactness, pl, pp)
        Tm = space.trace_table(exactness, ml, mp)
        plus = np.einsum("qb,fcb->fqc", Tp, C[[f.plus_element for f in facets]])
        minus = np.einsum("qb,fcb->fqc", Tm, C[[f.minus_element for f in facets]])
        normals = np.array([f.normal for f in facets])
        jump = np.einsum("cij,fqc,fj->fqi", E, plus - minus, normals)
        scale = (
            _physical_facet_scale(mesh, facets)
            * eta_all[idxs]
            / np.array([f.diameter for f in facets])
        )
        total += float(np.einsum("f,q,fqi,fqi->", scale, wref, jump, jump))
    return total


def convergence_orders(reports) -> ConvergenceReport:
    """Observed orders log(e_coarse/e_fine)/log(h_coarse/h_fine) per norm."""
    reports = tuple(reports)
    if len(reports) < 2:
        raise ValueError("need at least two refinement levels")
    hs = [r.h for r in reports]
    if any(hc <= hf for hc, hf in zip(hs, hs[1:])):
        raise ValueError(f"mesh sizes must decrease strictly, got {hs}")
    orders: dict = {key: [] for key in NORM_KEYS}
    for coarse, fine in zip(reports, reports[1:]):
        ratio = np.log(coarse.h / fine.h)
        for key in NORM_KEYS:
            ec = getattr(coarse, "err_" + key)
            ef = getattr(fine, "err_" + key)
            if ec == 0.0 or ef == 0.0:
                orders[key].append(float("nan"))
            else:
                orders[key].append(float(np.log(ec / ef) / ratio))
    return ConvergenceReport(reports=reports, orders=orders)


_DENSE_DOF_CAP = 4000


def _require_coarse(n: int, what: str):
    if n > _DENSE_DOF_CAP:
        raise ValueError(
            f"{what} is a dense diagnostic, restricted to <= {_DENSE_DOF_CAP} "
            f"stress dofs (got {n})"
        )


def infsup_constant(star_gram: sp.spmatrix, B: sp.spmatrix, u_mass: sp.spmatrix) -> float:
    """Discrete inf-sup constant of the divergence coupling.

    Smallest generalized eigenvalue of  B G^{-1} B^T w = beta^2 M_u w  with G
    the stress stability Gram and M_u the displacement mass.  Rank loss of B
    on the displacement side is reported as a DiagnosticError.
    """
    _require_coarse(star_gram.shape[0], "infsup_constant")
    G = star_gram.toarray()
    Bd = B.toarray()
    Md = u_mass.toarray()
    X = sla.solve(G, Bd.T, assume_a="pos")
    S = Bd @ X
    eigs = sla.eigh(0.5 * (S + S.T), 0.5 * (Md + Md.T), eigvals_only=True)
    if eigs[0] <= 1e-12 * max(eigs[-1], 1.0):
        raise DiagnosticError(
            f"displacement-side rank deficiency: smallest eigenvalue {eigs[0]:.3e}"
        )
    return float(np.sqrt(eigs[0]))


def kellipticity_constant(A: sp.spmatrix, B: sp.spmatrix, star_gram: sp.spmatrix) -> float:
    """Coercivity constant of the stress form on the discrete kernel of B.

    Minimum of a(tau, tau) / ||tau||_star^2 over a computed basis of
    Z_h = null(B), via a generalized eigenproblem in that basis.
    """
    _require_coarse(star_gram.shape[0], "kellipticity_constant")
    Z = sla.null_space(B.toarray())
    if Z.shape[1] == 0:
        raise DiagnosticError("divergence coupling has an empty kernel basis")
    Az = Z.T @ (A @ Z)
    Gz = Z.T @ (star_gram @ Z)
    eigs = sla.eigh(0.5 * (Az + Az.T), 0.5 * (Gz + Gz.T), eigvals_only=True)
    return float(eigs[0])


def lifting_constant(displacement_space: DgSpace, rng: np.random.Generator, *,
                     trials: int = 3, exactness: int | None = None) -> float:
    """Largest observed ||r_e(w)|| / (h_e^{-1/2} ||w||_e) over random sweeps.

    Measures the boundedness constant of the facet lifting; it should stay
    stable under refinement.
    """
    space = displacement_space
    mesh = space.mesh
    d = mesh.dim
    if exactness is None:
        exactness = space.default_volume_exactness()
    wref = make_facet_quadrature(d, exactness).weights
    Mref = _reference_mass(space, space.default_volume_exactness())
    worst = 0.0
    for facet in mesh.interior_facets:
        wq = wref * facet.measure / REFERENCE_MEASURE[d - 1]
        for _ in range(trials):
            w = rng.standard_normal((len(wq), d))
            r = lifting_apply(space, facet, w, exactness=exactness)
            sq_r = 0.0
            for elem in (facet.plus_element, facet.minus_element):
                C = space.element_coefficients(r.values)[elem]
                sq_r += mesh.jacobian_dets[elem] * float(np.einsum("cb,bd,cd->", C, Mref, C))
            norm_w = float(np.sqrt(np.einsum("q,qi,qi->", wq, w, w)))
            if norm_w == 0.0:
                continue
            worst = max(worst, np.sqrt(sq_r) * np.sqrt(facet.diameter) / norm_w)
    return worst


def consistency_residuals(problem: ManufacturedProblem, stress_space: DgSpace,
                          disp_space: DgSpace, ct: ComplianceTensor, *, eta=1.0,
                          exactness: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Residual vectors of the exact solution against the discrete forms.

    First vector: a(sigma, phi) + b(phi, u) over all stress test functions;
    the stress jump penalty in a(.,.) vanishes because the exact stress is
    continuous.  Second vector: b(sigma, psi) - (f, psi) over displacement
    test functions; its volume part cancels identically (the load is the
    analytic divergence of the exact stress), leaving the interior facet
    jumps of the exact stress, evaluated through both element maps.  Both
    vectors should sit at quadrature roundoff for smooth manufactured data.
    """
    mesh = stress_space.mesh
    d = mesh.dim
    if exactness is None:
        exactness = pair_exactness(disp_space.degree)[2]

    rule, values_s, _ = stress_space.volume_tables(exactness)
    _, values_u, _ = disp_space.volume_tables(exactness)
    w = rule.weights
    nq = rule.num_points
    wv = voigt_weights(d)

    c1 = np.zeros((mesh.num_elements, stress_space.components, stress_space.basis.size))
    c2 = np.zeros((mesh.num_elements, disp_space.components, disp_space.basis.size))
    cost = nq * stress_space.components * stress_space.basis.size * d
    for start, stop in _element_chunks(mesh.num_elements, cost):
        dets = mesh.jacobian_dets[start:stop]
        phys = mesh.map_points_all(rule.points)[start:stop]
        flat = phys.reshape(-1, d)
        ne = stop - start
        u_ex = problem.u(flat).reshape(ne, nq, d)
        Asig = compliance_apply(ct, problem.sigma(flat)).reshape(ne, nq, d, d)
        Asig_v = matrix_to_voigt(Asig, d) * wv
        c1[start:stop] += np.einsum("e,q,eqc,qb->ecb", dets, w, Asig_v, values_s)
        _, D = _divergence_tables(stress_space, exactness, start, stop)
        c1[start:stop] += np.einsum("e,q,eqcbi,eqi->ecb", dets, w, D, u_ex)

    E = component_matrices(d)
    wref = make_facet_quadrature(d, exactness).weights
    for (pl, pp, ml, mp), idxs in _facet_groups(mesh).items():
        facets = [mesh.facets[i] for i in idxs]
        normals = np.array([f.normal for f in facets])
        scale = _physical_facet_scale(mesh, facets)
        elems = {"p": [f.plus_element for f in facets],
                 "m": [f.minus_element for f in facets]}
        pts = {}
        for s, (loc, perm) in (("p", (pl, pp)), ("m", (ml, mp))):
            ref, _ = facet_quadrature_trace(d, exactness, loc, perm)
            origins = mesh.vertices[mesh.elements[elems[s], 0]]
            pts[s] = origins[:, None, :] + np.einsum(
                "eij,qj->eqi", mesh.jacobians[elems[s]], ref
            )
        u_vals = problem.u(pts["p"].reshape(-1, d)).reshape(len(idxs), -1, d)
        sig_jump = np.einsum(
            "fqij,fj->fqi",
            problem.sigma(pts["p"].reshape(-1, d)).reshape(len(idxs), -1, d, d)
            - problem.sigma(pts["m"].reshape(-1, d)).reshape(len(idxs), -1, d, d),
            normals,
        )
        tables_s = {"p": stress_space.trace_table(exactness, pl, pp),
                    "m": stress_space.trace_table(exactness, ml, mp)}
        tables_u = {"p": disp_space.trace_table(exactness, pl, pp),
                    "m": disp_space.trace_table(exactness, ml, mp)}
        for s, sgn in (("p", 1.0), ("m", -1.0)):
            V = sgn * np.einsum("cij,fj->fci", E, normals)
            contrib = -np.einsum("f,q,fci,fqi,qb->fcb", scale, wref, V, u_vals, tables_s[s])
            np.add.at(c1, elems[s], contrib)
            half = -0.5 * np.einsum("f,q,fqi,qb->fib", scale, wref, sig_jump, tables_u[s])
            np.add.at(c2, elems[s], half)
    return c1.reshape(-1), c2.reshape(-1)
