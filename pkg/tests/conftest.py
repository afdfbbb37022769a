import pytest

from dispersion_lab.cell import CellProblem, CoefficientSet
from dispersion_lab.geometry import CellGeometry, build_cell_mesh, extract_surface_mesh
from dispersion_lab.velocity import VelocityRecipe, build_velocity, zero_field

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def cell_cache():
    cache = {}

    def get(h):
        if h not in cache:
            mesh = build_cell_mesh(CellGeometry(), h)
            cache[h] = (mesh, extract_surface_mesh(mesh))
        return cache[h]
    return get


@pytest.fixture(scope="session")
def coarse(cell_cache):
    return cell_cache(1 / 16)


@pytest.fixture(scope="session")
def medium_mesh(cell_cache):
    return cell_cache(1 / 32)


@pytest.fixture(scope="session")
def velocities(cell_cache):
    cache = {}

    def get(h, kind):
        if (h, kind) not in cache:
            mesh, surf = cell_cache(h)
            if kind == "zero":
                cache[h, kind] = zero_field(mesh, surf)
            else:
                cache[h, kind] = build_velocity(mesh, surf, VelocityRecipe(kind))
        return cache[h, kind]
    return get


@pytest.fixture(scope="session")
def problem_factory(cell_cache, velocities):
    def make(h=1 / 16, kind="symmetric", **coeffs):
        mesh, surf = cell_cache(h)
        return CellProblem(mesh, CoefficientSet(velocity=velocities(h, kind), **coeffs), surf)
    return make


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: l.split()[1]):
            terminalreporter.write_line(line)
