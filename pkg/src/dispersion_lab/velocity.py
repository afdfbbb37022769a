"""Periodic, divergence-free, non-penetrating cell velocities.

The bulk field is the curl of a P1 stream function, so it is constant on every
triangle, exactly divergence free elementwise, has continuous normal flux across
interior edges and zero normal flux on the obstacle (where the stream function
vanishes).  The surface field is a tangential speed per boundary segment.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import CoefficientError, DriftMismatchError, InputError
from .fem import (FieldOnCell, PeriodicMap, SparseSystem, assemble_bulk, bulk_load,
                  field_gradient, solve)
from .geometry import CellMesh, SurfaceMesh

DRIFT_TOL = 1e-8
RECIPES = ("symmetric", "nonsymmetric", "zero")


@dataclass(frozen=True)
class VelocityRecipe:
    kind: str = "symmetric"   # symmetric | nonsymmetric | custom_M | zero
    surface_speed: float = 0.0
    M: object = None          # callable (points (k, 2)) -> (k, 2) diagonal, for custom_M

    def diagonal(self, points: np.ndarray) -> np.ndarray:
        y1 = points[:, 0]
        if self.kind == "symmetric":
            return np.ones((len(points), 2))
        if self.kind == "nonsymmetric":
            m11 = np.where(y1 < 0.5, 0.01 + 0.5 * y1, 0.26 + (y1 - 0.5))
            return np.column_stack([m11, np.cos(y1)])
        if self.kind == "custom_M":
            if self.M is None:
                raise CoefficientError("custom_M recipe needs a diagonal callable")
            return np.asarray(self.M(points), dtype=float)
        raise CoefficientError(f"recipe '{self.kind}' has no stream-function tensor")


@dataclass(frozen=True, eq=False)
class VelocityField:
    bulk: np.ndarray           # (m, 2), constant per triangle
    surface_speed: np.ndarray  # (L,), b^s = speed * tangent on each segment
    drift: np.ndarray          # common mean b*

    def surface_vectors(self, surface: SurfaceMesh) -> np.ndarray:
        return self.surface_speed[:, None] * surface.tangents

    def biased(self, shift) -> "VelocityField":
        """Copy with a constant added to the bulk field (breaks the drift balance)."""
        return VelocityField(self.bulk + np.asarray(shift, dtype=float), self.surface_speed, self.drift)


def solve_stream_function(mesh: CellMesh, recipe: VelocityRecipe) -> FieldOnCell:
    """Solve  -div(M grad psi) = 1,  psi = 0 on the obstacle,  psi periodic."""
    diag = recipe.diagonal(mesh.centroids())
    if np.any(diag <= 0):
        raise CoefficientError("stream-function tensor must be positive on Y0")
    M = np.zeros((mesh.n_triangles, 2, 2))
    M[:, 0, 0] = diag[:, 0]
    M[:, 1, 1] = diag[:, 1]
    pm = PeriodicMap.from_mesh(mesh)
    K = pm.reduce(assemble_bulk(mesh, D=M))
    f = pm.reduce_vector(bulk_load(mesh, 1.0))
    fixed = np.unique(pm.master[mesh.boundary_segments.ravel()])
    if len(fixed) == 0:
        # pure periodic problem: kernel is the constants and int 1 != 0
        solve(SparseSystem(K, f, kernel=[np.ones(pm.n_dofs)]))
    free = np.setdiff1d(np.arange(pm.n_dofs), fixed)
    x = np.zeros(pm.n_dofs)
    x[free] = solve(SparseSystem(K[free][:, free], f[free]))
    return FieldOnCell(pm.expand(x), "bulk")


def curl_normalize(mesh: CellMesh, psi: FieldOnCell, surface: SurfaceMesh | None = None,
                   surface_speed: float = 0.0) -> VelocityField:
    """b = curl psi / ||curl psi||_{L2(Y0)} with a constant-speed tangential surface field."""
    g = field_gradient(mesh, np.asarray(psi.values))
    bt = np.column_stack([-g[:, 1], g[:, 0]])
    area = mesh.triangle_areas()
    norm = np.sqrt(np.sum(area * np.einsum("td,td->t", bt, bt)))
    if not norm > 0:
        raise CoefficientError("stream function has zero curl")
    return make_field(mesh, bt / norm, surface, surface_speed)


def make_field(mesh: CellMesh, bulk: np.ndarray, surface: SurfaceMesh | None,
               surface_speed=0.0) -> VelocityField:
    L = surface.n_loop if surface is not None else 0
    speed = np.broadcast_to(np.asarray(surface_speed, dtype=float), (L,)).copy()
    field = VelocityField(np.asarray(bulk, dtype=float), speed, np.zeros(2))
    bulk_drift, _ = compute_drift(field, mesh, surface, check=False)
    return VelocityField(field.bulk, speed, bulk_drift)


def zero_field(mesh: CellMesh, surface: SurfaceMesh | None) -> VelocityField:
    return make_field(mesh, np.zeros((mesh.n_triangles, 2)), surface)


def build_velocity(mesh: CellMesh, surface: SurfaceMesh | None, recipe: VelocityRecipe) -> VelocityField:
    if recipe.kind == "zero":
        return make_field(mesh, np.zeros((mesh.n_triangles, 2)), surface, recipe.surface_speed)
    psi = solve_stream_function(mesh, recipe)
    return curl_normalize(mesh, psi, surface, recipe.surface_speed)


def compute_drift(field: VelocityField, mesh: CellMesh, surface: SurfaceMesh | None,
                  check: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Return (bulk mean of b over Y0, mean of b^s over the obstacle boundary).

    With ``check`` set, raises :class:`DriftMismatchError` when they differ by
    more than ``DRIFT_TOL``.
    """
    area = mesh.triangle_areas()
    if field.bulk.shape != (mesh.n_triangles, 2):
        raise InputError("bulk velocity does not match the mesh")
    bulk = (area[:, None] * field.bulk).sum(axis=0) / area.sum()
    if surface is None or surface.n_loop == 0:
        surf = bulk.copy() if not np.any(field.surface_speed) else np.full(2, np.nan)
    else:
        ell = surface.segment_lengths
        surf = (ell[:, None] * field.surface_vectors(surface)).sum(axis=0) / ell.sum()
    if check and not np.all(np.abs(bulk - surf) <= DRIFT_TOL):
        raise DriftMismatchError(
            f"bulk drift {bulk} and surface drift {surf} differ beyond {DRIFT_TOL}")
    return bulk, surf


def boundary_normal_flux(field: VelocityField, mesh: CellMesh, surface: SurfaceMesh) -> np.ndarray:
    """b . n on each obstacle segment, taken from the adjacent triangle."""
    t = mesh.triangles
    edge_owner = {}
    for k in range(3):
        a, b = t[:, k], t[:, (k + 1) % 3]
        for tri, (i, j) in enumerate(zip(a, b)):
            edge_owner[(min(i, j), max(i, j))] = tri
    loop = surface.loop_nodes
    nxt = np.roll(loop, -1)
    owners = np.array([edge_owner[(min(i, j), max(i, j))] for i, j in zip(loop, nxt)])
    return np.einsum("kd,kd->k", field.bulk[owners], surface.outward_normals)


def elementwise_divergence(field: VelocityField, mesh: CellMesh) -> np.ndarray:
    """Net outflow through each triangle's edges divided by its area."""
    p = mesh.nodes[mesh.triangles]
    e = np.roll(p, -1, axis=1) - p           # counter-clockwise edge vectors
    nl = np.stack([e[..., 1], -e[..., 0]], axis=-1)  # outward normal * length
    flux = np.einsum("td,tkd->t", field.bulk, nl)
    return flux / mesh.triangle_areas()


def interior_flux_jump(field: VelocityField, mesh: CellMesh) -> float:
    """Largest jump of b . n across an interior (non-periodic) edge."""
    t = mesh.triangles
    e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    owner = np.tile(np.arange(len(t)), 3)
    key = np.sort(e, axis=1)
    order = np.lexsort((key[:, 1], key[:, 0]))
    key, owner, e = key[order], owner[order], e[order]
    same = np.all(key[1:] == key[:-1], axis=1)
    i = np.flatnonzero(same)
    d = mesh.nodes[e[i, 1]] - mesh.nodes[e[i, 0]]
    n = np.column_stack([d[:, 1], -d[:, 0]])
    jump = np.einsum("kd,kd->k", field.bulk[owner[i]] - field.bulk[owner[i + 1]], n)
    return float(np.max(np.abs(jump), initial=0.0))


def l2_norm(field: VelocityField, mesh: CellMesh) -> float:
    area = mesh.triangle_areas()
    return float(np.sqrt(np.sum(area * np.einsum("td,td->t", field.bulk, field.bulk))))


def write_velocity_csv(field: VelocityField, mesh: CellMesh, path) -> None:
    cent = mesh.centroids()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["triangle", "y1", "y2", "b1", "b2"])
        for i, (c, b) in enumerate(zip(cent, field.bulk)):
            w.writerow([i, repr(c[0]), repr(c[1]), repr(b[0]), repr(b[1])])

