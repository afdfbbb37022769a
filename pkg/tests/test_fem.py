import numpy as np
import pytest
import scipy.linalg as sla

from dispersion_lab.errors import CoefficientError, CompatibilityError, TopologyError
from dispersion_lab.fem import (PeriodicMap, SparseSystem, assemble_bulk, assemble_coupling,
                                assemble_surface, bulk_load, bulk_weights, field_gradient,
                                p1_gradients, solve, surface_mass)
from dispersion_lab.geometry import CellGeometry, build_cell_mesh


@pytest.fixture(scope="module")
def plain_meshes():
    return {n: build_cell_mesh(CellGeometry(obstacle_radius=0.0), 1 / n) for n in (8, 16, 32)}


def test_gradients_sum_to_zero(coarse):
    _, g = p1_gradients(coarse[0])
    assert np.abs(g.sum(axis=1)).max() < 1e-10


def test_periodic_stiffness_annihilates_constants(coarse):
    mesh, _ = coarse
    pm = PeriodicMap.from_mesh(mesh)
    K = pm.reduce(assemble_bulk(mesh, D=np.eye(2)))
    assert np.abs(K @ np.ones(pm.n_dofs)).max() < 1e-12
    assert abs(K - K.T).max() < 1e-14


def test_convection_kills_constants_and_scales_with_diffusion(coarse, velocities):
    mesh, _ = coarse
    C = assemble_bulk(mesh, b=velocities(1 / 16, "symmetric").bulk)
    assert np.abs(C @ np.ones(mesh.n_nodes)).max() < 1e-12
    K1 = assemble_bulk(mesh, D=np.eye(2))
    K2 = assemble_bulk(mesh, D=2 * np.eye(2))
    assert abs(K2 - 2 * K1).max() < 1e-13


def test_bulk_mass_weights_integrate_area(coarse):
    mesh, _ = coarse
    assert bulk_weights(mesh).sum() == pytest.approx(mesh.geometry().fluid_area, abs=1e-14)


def test_nonsymmetric_diffusion_is_rejected(coarse):
    with pytest.raises(CoefficientError):
        assemble_bulk(coarse[0], D=[[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(CoefficientError):
        assemble_bulk(coarse[0], D=[[1.0, 0.0], [0.0, -1.0]])


def test_laplace_beltrami_first_eigenvalue(cell_cache):
    _, surf = cell_cache(1 / 64)
    K = assemble_surface(surf, Ds=1.0).toarray()
    M = surface_mass(surf).toarray()
    ev = sla.eigh(K, M, eigvals_only=True)
    assert abs(ev[0]) < 1e-10
    assert ev[1] == pytest.approx(25.0, rel=0.01)
    assert ev[2] == pytest.approx(25.0, rel=0.01)


def test_surface_convection_is_skew_and_kills_constants(coarse):
    _, surf = coarse
    C = assemble_surface(surf, bs=0.7).toarray()
    assert np.abs(C @ np.ones(surf.n_loop)).max() < 1e-14
    assert np.abs(C + C.T).max() < 1e-14


def test_coupling_is_positive_semidefinite_with_constant_kernel(coarse):
    mesh, surf = coarse
    n = mesh.n_nodes
    B = assemble_coupling(surf, 2.5, n)
    x = np.ones(n + surf.n_loop)
    assert np.abs(B @ x).max() < 1e-13
    rng = np.random.default_rng(0)
    for _ in range(5):
        y = rng.standard_normal(n + surf.n_loop)
        assert y @ (B @ y) >= -1e-12
    # bulk constant 1 against surface 0 gives weight * |boundary|
    u = np.concatenate([np.ones(n), np.zeros(surf.n_loop)])
    assert u @ (B @ u) == pytest.approx(2.5 * surf.length, rel=1e-12)


def test_coupling_rejects_bad_trace(coarse):
    mesh, surf = coarse
    with pytest.raises(TopologyError):
        assemble_coupling(surf, 1.0, mesh.n_nodes, trace_index=np.arange(surf.n_loop - 1))


def _periodic_poisson(mesh, rhs_fn):
    pm = PeriodicMap.from_mesh(mesh)
    K = pm.reduce(assemble_bulk(mesh, D=np.eye(2)))
    cent = mesh.centroids()
    f = pm.reduce_vector(bulk_load(mesh, rhs_fn(cent)))
    w = pm.reduce_vector(bulk_weights(mesh))
    f -= w * f.sum() / w.sum()   # centroid quadrature leaves an O(h^2) mean
    x = solve(SparseSystem(K, f, constraints=[(w, 0.0)], kernel=[np.ones(pm.n_dofs)]))
    return pm.expand(x)


def test_zero_rhs_gives_zero(plain_meshes):
    u = _periodic_poisson(plain_meshes[8], lambda c: np.zeros(len(c)))
    assert np.abs(u).max() < 1e-14


def test_manufactured_periodic_solution_converges(plain_meshes):
    k = 2 * np.pi
    l2, h1 = [], []
    for n, mesh in sorted(plain_meshes.items()):
        u = _periodic_poisson(mesh, lambda c: k * k * np.cos(k * c[:, 0]))
        exact = np.cos(k * mesh.nodes[:, 0])
        area = mesh.triangle_areas()
        e = (u - exact)[mesh.triangles].mean(axis=1)
        l2.append(np.sqrt(np.sum(area * e ** 2)))
        g = field_gradient(mesh, u)
        gx = -k * np.sin(k * mesh.centroids()[:, 0])
        h1.append(np.sqrt(np.sum(area * ((g[:, 0] - gx) ** 2 + g[:, 1] ** 2))))
    hs = np.array([1 / 8, 1 / 16, 1 / 32])
    assert np.polyfit(np.log(hs), np.log(l2), 1)[0] > 1.8
    assert np.polyfit(np.log(hs), np.log(h1), 1)[0] > 0.9


def test_incompatible_rhs_is_reported(plain_meshes):
    mesh = plain_meshes[8]
    pm = PeriodicMap.from_mesh(mesh)
    K = pm.reduce(assemble_bulk(mesh, D=np.eye(2)))
    f = pm.reduce_vector(bulk_load(mesh, 1.0))
    with pytest.raises(CompatibilityError):
        solve(SparseSystem(K, f, kernel=[np.ones(pm.n_dofs)]))


def test_reduction_commutes_with_expansion(coarse):
    mesh, _ = coarse
    pm = PeriodicMap.from_mesh(mesh)
    A = assemble_bulk(mesh, D=np.eye(2), reaction=1.0)
    x = np.random.default_rng(1).standard_normal(pm.n_dofs)
    lhs = pm.reduce(A) @ x
    rhs = pm.reduce_vector(A @ pm.expand(x))
    assert np.allclose(lhs, rhs, atol=1e-13)
    # periodic partners carry equal values after expansion
    v = pm.expand(x)
    s, m = mesh.periodic_pairs.T
    assert np.array_equal(v[s], v[m])
