import numpy as np
import pytest

from dispersion_lab.cell import CellProblem, CoefficientSet, solve_cell
from dispersion_lab.dispersion import assemble_dispersion
from dispersion_lab.errors import CoefficientError, DegenerateCouplingError, InputError
from dispersion_lab.geometry import CellGeometry, build_cell_mesh
from dispersion_lab.velocity import VelocityRecipe, build_velocity, zero_field

from oracles import oracle_tensor


def _A(pb, cells):
    return assemble_dispersion(cells, pb).A


def test_coefficients_are_validated(coarse, velocities):
    v = velocities(1 / 16, "symmetric")
    for bad in (dict(D=[[1, 1], [0, 1]]), dict(D=-np.eye(2)), dict(Ds=0.0), dict(kappa=-1.0),
                dict(alpha=0.0), dict(beta=-1.0)):
        with pytest.raises(CoefficientError):
            CoefficientSet(velocity=v, **bad)


def test_unperforated_cell_is_rejected():
    mesh = build_cell_mesh(CellGeometry(obstacle_radius=0.0), 1 / 8)
    with pytest.raises(InputError):
        CellProblem(mesh, CoefficientSet(velocity=zero_field(mesh, None)))


@pytest.mark.parametrize("kind, speed", [("symmetric", 0.0), ("nonsymmetric", 0.0),
                                         ("nonsymmetric", 0.3)])
@pytest.mark.parametrize("u0", [0.0, 2.5])
def test_package_matches_loop_oracle(coarse, kind, speed, u0):
    mesh, surf = coarse
    v = build_velocity(mesh, surf, VelocityRecipe(kind, surface_speed=speed))
    coeffs = dict(D=np.array([[1.2, 0.1], [0.1, 0.8]]), Ds=0.7, kappa=2.0, alpha=1.5, beta=0.5)
    pb = CellProblem(mesh, CoefficientSet(velocity=v, **coeffs), surf)
    A = _A(pb, pb.solve(u0, with_aux=False))
    ref = oracle_tensor(mesh, v.bulk, u0, surface_speed=speed, **coeffs)
    assert np.abs(A - ref).max() <= 1e-10 * np.abs(ref).max()


def test_compatibility_and_residuals(problem_factory):
    for kind in ("symmetric", "nonsymmetric"):
        pb = problem_factory(kind=kind)
        for u0 in (0.0, 1.0, 50.0):
            assert pb.compatibility_residual(u0) <= 1e-10
            sol = pb.solve(u0, with_aux=False)
            assert sol.residual <= 1e-10
            assert pb.vf_residual(sol) <= 1e-10


def test_normalization_does_not_change_the_tensor(problem_factory):
    pb = problem_factory(kind="nonsymmetric")
    sol = pb.solve(2.5, with_aux=False)
    X = pb.reduce_nodal(sol.chi)
    assert abs(pb.wb @ X[:, 0] + pb.ws @ sol.omega[:, 0]) < 1e-13
    A = _A(pb, sol)
    sol.chi = sol.chi + np.array([0.3, -1.1])
    sol.omega = sol.omega + np.array([0.3, -1.1])
    assert np.allclose(_A(pb, sol), A, atol=1e-12)


def test_unweighted_surface_equation_is_satisfied(problem_factory):
    # dividing the surface rows by f'(u0) gives the unsymmetrized form; same solution
    pb = problem_factory(kind="nonsymmetric")
    u0 = 3.0
    sol = pb.solve(u0, with_aux=False)
    sysm = pb.cell_system(u0)
    x = np.vstack([pb.reduce_nodal(sol.chi), sol.omega])
    fp = pb.fprime(u0)
    scale = np.ones(sysm.dimension)
    scale[pb.n_bulk:] = 1.0 / fp
    r = scale[:, None] * (sysm.matrix @ x - sysm.rhs)
    assert np.abs(r).max() <= 1e-10 * np.abs(scale[:, None] * sysm.rhs).max()


def test_auxiliary_solutions_vanish_without_flow(problem_factory):
    xi, Xi = problem_factory(kind="zero").solve_aux()
    assert not np.any(xi) and not np.any(Xi)


def test_surface_auxiliary_matches_closed_form(coarse):
    # zero bulk flow, surface speed c: -Lap_s Xi = -c t  gives  Xi = -c r^2 t at the nodes
    mesh, surf = coarse
    c, r = 0.4, 0.2
    v = build_velocity(mesh, surf, VelocityRecipe("zero", surface_speed=c))
    _, Xi = CellProblem(mesh, CoefficientSet(velocity=v), surf).solve_aux()
    theta = np.arctan2(surf.points[:, 1] - 0.5, surf.points[:, 0] - 0.5)
    t = np.column_stack([-np.sin(theta), np.cos(theta)])
    exact = -c * r * r * t
    assert np.abs(Xi - exact).max() <= 0.02 * np.abs(exact).max()


def test_auxiliary_solutions_are_linear_in_the_flow(coarse, velocities):
    mesh, surf = coarse
    v = velocities(1 / 16, "nonsymmetric")
    xi1, _ = CellProblem(mesh, CoefficientSet(velocity=v), surf).solve_aux()
    v2 = type(v)(2 * v.bulk, v.surface_speed, 2 * v.drift)
    xi2, _ = CellProblem(mesh, CoefficientSet(velocity=v2), surf).solve_aux()
    assert np.allclose(xi2, 2 * xi1, atol=1e-12)


def test_linear_isotherm_removes_u0_dependence(problem_factory):
    pb = problem_factory(kind="nonsymmetric", beta=0.0, alpha=2.0)
    ref = _A(pb, pb.solve(0.0, with_aux=False))
    for u0 in (0.7, 40.0):
        assert np.allclose(_A(pb, pb.solve(u0, with_aux=False)), ref, atol=1e-12)


def test_coupling_energy_is_nonnegative(problem_factory):
    pb = problem_factory(kind="nonsymmetric")
    sol = pb.solve(1.0, with_aux=False)
    E = pb.T @ pb.reduce_nodal(sol.chi) - sol.omega
    G = E.T @ (pb.Ms @ E)
    assert np.linalg.eigvalsh(0.5 * (G + G.T))[0] >= -1e-14


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.mark.parametrize("kind", ["symmetric", "nonsymmetric"])
def test_large_u0_approaches_limit(problem_factory, kind):
    pb = problem_factory(kind=kind)
    lim = pb.solve_limit_u0_inf(with_aux=False)
    far = pb.solve(1e5, with_aux=False)
    assert _rel(far.chi, lim.chi) <= 0.01
    assert _rel(_A(pb, far), _A(pb, lim)) <= 1e-3


@pytest.mark.parametrize("kind", ["symmetric", "nonsymmetric"])
def test_large_surface_diffusion_approaches_limit(problem_factory, kind):
    lim_pb = problem_factory(kind=kind)
    lim = lim_pb.solve_limit_ds_inf(2.5, with_aux=False)
    pb = problem_factory(kind=kind, Ds=1e5)
    far = pb.solve(2.5, with_aux=False)
    assert _rel(far.chi, lim.chi) <= 0.01
    assert _rel(_A(pb, far), _A(lim_pb, lim)) <= 1e-3
    # omega_i + y_i is constant along the loop in the limit
    s = lim.omega + lim_pb.surface.points
    assert np.ptp(s, axis=0).max() <= 1e-12


@pytest.mark.parametrize("u0", [1.0, 100.0])
def test_large_kappa_approaches_limit(problem_factory, u0):
    lim_pb = problem_factory(kind="nonsymmetric")
    lim = lim_pb.solve_limit_kappa_inf(u0, with_aux=False)
    pb = problem_factory(kind="nonsymmetric", kappa=1e6)
    far = pb.solve(u0, with_aux=False)
    assert _rel(far.chi, lim.chi) <= 0.01
    assert _rel(_A(pb, far), _A(lim_pb, lim)) <= 1e-3
    assert np.allclose(lim.omega, lim_pb.T @ lim_pb.reduce_nodal(lim.chi), atol=1e-14)


def test_degenerate_coupling_dispatch(coarse, velocities):
    mesh, surf = coarse
    coeffs = CoefficientSet(velocity=velocities(1 / 16, "symmetric"))
    with pytest.raises(DegenerateCouplingError):
        solve_cell(mesh, surf, coeffs, 1e7)
    sol = solve_cell(mesh, surf, coeffs, 1e7, dispatch=True)
    assert sol.regime == "u0_inf" and sol.fprime == 0.0


def test_negative_u0_is_rejected(problem_factory):
    with pytest.raises(InputError):
        problem_factory().solve(-1.0)
