"""Uniform simplicial meshes of the unit square and cube.

Meshes are immutable after construction.  The 2D mesh splits each grid square
along the diagonal from its lower-left to its upper-right corner; the 3D mesh
applies the Kuhn split of each grid cube into six tetrahedra.  Both patterns
are fixed globally so that assembled systems are reproducible bit for bit.
Facet matching uses sorted vertex-index tuples, never coordinate comparison.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, permutations

import numpy as np

from .reference import local_facet_vertices


class MeshConstructionError(RuntimeError):
    """Raised for degenerate elements or non-manifold facet connectivity."""


@dataclass(frozen=True)
class Facet:
    """A (d-1)-subsimplex with its adjacency and orientation data.

    `vertices` is the sorted tuple of global vertex indices (the canonical
    order used for facet quadrature).  The unit normal points outward from
    `plus_element`; on interior facets that is from plus toward minus.
    `plus_perm[i]` gives the position, in the plus element's increasing local
    facet vertex list, of canonical vertex i (likewise `minus_perm`).
    """

    vertices: tuple[int, ...]
    kind: str  # "interior" | "boundary"
    plus_element: int
    plus_local: int
    plus_perm: tuple[int, ...]
    minus_element: int | None
    minus_local: int | None
    minus_perm: tuple[int, ...] | None
    normal: np.ndarray
    diameter: float  # h_e, longest edge of the facet
    measure: float  # length in 2D, area in 3D

    @property
    def is_interior(self) -> bool:
        return self.kind == "interior"


@dataclass(frozen=True)
class Mesh:
    """Simplicial mesh with precomputed affine-map data per element."""

    dim: int
    vertices: np.ndarray  # (nv, dim)
    elements: np.ndarray  # (ne, dim+1) vertex indices, positively oriented
    facets: tuple[Facet, ...]
    element_diameters: np.ndarray  # h_K per element
    jacobians: np.ndarray  # (ne, dim, dim), x = J xhat + b
    jacobian_inv_t: np.ndarray  # (ne, dim, dim)
    jacobian_dets: np.ndarray  # (ne,) absolute determinants

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def interior_facets(self) -> tuple[Facet, ...]:
        return tuple(f for f in self.facets if f.is_interior)

    @property
    def boundary_facets(self) -> tuple[Facet, ...]:
        return tuple(f for f in self.facets if not f.is_interior)

    def element_volumes(self) -> np.ndarray:
        factorial = {2: 2.0, 3: 6.0}[self.dim]
        return self.jacobian_dets / factorial

    def map_points(self, element_id: int, ref_points: np.ndarray) -> np.ndarray:
        """Map reference coordinates into physical coordinates of one element."""
        origin = self.vertices[self.elements[element_id, 0]]
        return origin + ref_points @ self.jacobians[element_id].T

    def map_points_all(self, ref_points: np.ndarray) -> np.ndarray:
        """Map reference coordinates into every element: shape (ne, nq, dim)."""
        origins = self.vertices[self.elements[:, 0]]
        return origins[:, None, :] + np.einsum(
            "eij,qj->eqi", self.jacobians, ref_points
        )


def element_affine_map(mesh: Mesh, element_id: int):
    """Return (J, J^{-T}, |det J|, h_K) for the element's affine map."""
    if not 0 <= element_id < mesh.num_elements:
        raise IndexError(f"element {element_id} out of range")
    return (
        mesh.jacobians[element_id],
        mesh.jacobian_inv_t[element_id],
        mesh.jacobian_dets[element_id],
        mesh.element_diameters[element_id],
    )


def _signed_volume(coords: np.ndarray) -> float:
    edges = coords[1:] - coords[0]
    factorial = {2: 2.0, 3: 6.0}[coords.shape[1]]
    return float(np.linalg.det(edges.T)) / factorial


def _facet_geometry(coords: np.ndarray, opposite: np.ndarray):
    """Outward normal (away from `opposite`), diameter and measure of a facet."""
    if coords.shape[0] == 2:
        t = coords[1] - coords[0]
        measure = float(np.linalg.norm(t))
        diameter = measure
        normal = np.array([t[1], -t[0]])
    else:
        cross = np.cross(coords[1] - coords[0], coords[2] - coords[0])
        measure = 0.5 * float(np.linalg.norm(cross))
        edges = [
            coords[1] - coords[0],
            coords[2] - coords[1],
            coords[0] - coords[2],
        ]
        diameter = max(float(np.linalg.norm(e)) for e in edges)
        normal = cross
    normal = normal / np.linalg.norm(normal)
    if np.dot(normal, coords.mean(axis=0) - opposite) < 0.0:
        normal = -normal
    normal.setflags(write=False)
    return normal, diameter, measure


def facet_connectivity(mesh_or_elements, vertices: np.ndarray | None = None, dim: int | None = None) -> list[Facet]:
    """Enumerate all facets with adjacency, orientation, and trace permutations.

    Accepts either a built Mesh or raw (elements, vertices, dim) data.  Every
    (d-1)-subsimplex of every element appears exactly once; a facet shared by
    more than two elements is a construction error.
    """
    if isinstance(mesh_or_elements, Mesh):
        elements = mesh_or_elements.elements
        vertices = mesh_or_elements.vertices
        dim = mesh_or_elements.dim
    else:
        elements = mesh_or_elements
        if vertices is None or dim is None:
            raise ValueError("raw facet_connectivity needs vertices and dim")

    incidence: dict[tuple[int, ...], list[tuple[int, int]]] = {}
    for eid, elem in enumerate(elements):
        for local in range(dim + 1):
            key = tuple(sorted(int(elem[v]) for v in local_facet_vertices(dim, local)))
            incidence.setdefault(key, []).append((eid, local))

    def trace_permutation(eid: int, local: int, key: tuple[int, ...]) -> tuple[int, ...]:
        locs = local_facet_vertices(dim, local)
        globs = [int(elements[eid][v]) for v in locs]
        return tuple(globs.index(g) for g in key)

    facets = []
    for key in sorted(incidence):
        sides = incidence[key]
        if len(sides) > 2:
            raise MeshConstructionError(f"facet {key} shared by {len(sides)} elements")
        sides.sort()
        plus_eid, plus_local = sides[0]
        coords = vertices[list(key)]
        opposite = vertices[int(elements[plus_eid][plus_local])]
        normal, diameter, measure = _facet_geometry(coords, opposite)
        if len(sides) == 2:
            minus_eid, minus_local = sides[1]
            facets.append(
                Facet(
                    vertices=key,
                    kind="interior",
                    plus_element=plus_eid,
                    plus_local=plus_local,
                    plus_perm=trace_permutation(plus_eid, plus_local, key),
                    minus_element=minus_eid,
                    minus_local=minus_local,
                    minus_perm=trace_permutation(minus_eid, minus_local, key),
                    normal=normal,
                    diameter=diameter,
                    measure=measure,
                )
            )
        else:
            facets.append(
                Facet(
                    vertices=key,
                    kind="boundary",
                    plus_element=plus_eid,
                    plus_local=plus_local,
                    plus_perm=trace_permutation(plus_eid, plus_local, key),
                    minus_element=None,
                    minus_local=None,
                    minus_perm=None,
                    normal=normal,
                    diameter=diameter,
                    measure=measure,
                )
            )
    return facets


def _mesh_from_arrays(dim: int, vertices: np.ndarray, elements: np.ndarray) -> Mesh:
    ne = elements.shape[0]
    corner = vertices[elements]  # (ne, dim+1, dim)
    jac = np.transpose(corner[:, 1:, :] - corner[:, :1, :], (0, 2, 1))
    dets = np.linalg.det(jac)
    scale = float(np.max(np.abs(vertices)))
    if np.any(dets <= 1e-14 * max(scale, 1.0) ** dim):
        raise MeshConstructionError("degenerate or negatively oriented element")
    inv_t = np.transpose(np.linalg.inv(jac), (0, 2, 1))

    diffs = corner[:, :, None, :] - corner[:, None, :, :]
    diameters = np.sqrt((diffs**2).sum(axis=3)).max(axis=(1, 2))

    facets = tuple(facet_connectivity(elements, vertices, dim))
    for arr in (vertices, elements, diameters, jac, inv_t, dets):
        arr.setflags(write=False)
    return Mesh(
        dim=dim,
        vertices=vertices,
        elements=elements,
        facets=facets,
        element_diameters=diameters,
        jacobians=jac,
        jacobian_inv_t=inv_t,
        jacobian_dets=dets,
    )


def build_uniform_mesh(dim: int, n: int) -> Mesh:
    """Uniform mesh of [0,1]^dim with n subdivisions per axis.

    2D: 2*n^2 triangles (diagonal from (i,j)/n to (i+1,j+1)/n).
    3D: 6*n^3 tetrahedra (Kuhn split, one tet per vertex permutation).
    """
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    if n < 1:
        raise ValueError(f"need at least one subdivision per axis, got {n}")

    side = n + 1
    if dim == 2:
        idx = lambda i, j: j * side + i
        vertices = np.array(
            [(i / n, j / n) for j in range(side) for i in range(side)]
        )
        elements = []
        for j in range(n):
            for i in range(n):
                a = idx(i, j)
                b = idx(i + 1, j)
                c = idx(i + 1, j + 1)
                d = idx(i, j + 1)
                elements.append((a, b, c))
                elements.append((a, c, d))
        return _mesh_from_arrays(dim, vertices, np.array(elements, dtype=np.int64))

    idx3 = lambda i, j, k: (k * side + j) * side + i
    vertices = np.array(
        [
            (i / n, j / n, k / n)
            for k in range(side)
            for j in range(side)
            for i in range(side)
        ]
    )
    axis_steps = ((1, 0, 0), (0, 1, 0), (0, 0, 1))
    elements = []
    for k in range(n):
        for j in range(n):
            for i in range(n):
                for perm in permutations(range(3)):
                    path = [(i, j, k)]
                    for axis in perm:
                        last = path[-1]
                        step = axis_steps[axis]
                        path.append(tuple(last[m] + step[m] for m in range(3)))
                    tet = [idx3(*p) for p in path]
                    if _signed_volume(vertices[tet]) < 0.0:
                        tet[2], tet[3] = tet[3], tet[2]
                    elements.append(tuple(tet))
    return _mesh_from_arrays(dim, vertices, np.array(elements, dtype=np.int64))


def mesh_dump_text(mesh: Mesh) -> str:
    """Plain-text listing of vertices, elements, and facets (CLI debug dump)."""
    lines = [f"dim {mesh.dim}", f"vertices {mesh.num_vertices}"]
    for i, v in enumerate(mesh.vertices):
        lines.append(f"v {i} " + " ".join(f"{x:.17g}" for x in v))
    lines.append(f"elements {mesh.num_elements}")
    for i, e in enumerate(mesh.elements):
        lines.append(f"e {i} " + " ".join(str(int(v)) for v in e))
    lines.append(f"facets {len(mesh.facets)}")
    for i, f in enumerate(mesh.facets):
        owners = f"{f.plus_element}"
        if f.is_interior:
            owners += f" {f.minus_element}"
        lines.append(
            f"f {i} {f.kind} verts " + " ".join(str(v) for v in f.vertices)
            + f" elems {owners} normal "
            + " ".join(f"{x:.17g}" for x in f.normal)
            + f" h_e {f.diameter:.17g}"
        )
    return "\n".join(lines) + "\n"
