import numpy as np
import pytest

from robinrec.fem import RobinOperator, solve_mixed_bvp
from robinrec.geometry import DomainKind, DomainSpec, build_rectangle_mesh
from robinrec.inversion import assemble_operator, make_sine_basis


def flux_sine(x, y):
    return np.sin(x)


@pytest.fixture(scope="session")
def rect_small():
    return build_rectangle_mesh(32, 16)


@pytest.fixture(scope="session")
def rect_medium():
    return build_rectangle_mesh(64, 32)


@pytest.fixture(scope="session")
def rect_fine():
    return build_rectangle_mesh(128, 64)


@pytest.fixture(scope="session")
def small_setup(rect_small):
    """Mesh, domain spec, factorized operator, and background solution."""
    spec = DomainSpec(kind=DomainKind.RECTANGLE, gamma=0.999, flux=flux_sine)
    op = RobinOperator(rect_small, spec.gamma)
    u = solve_mixed_bvp(rect_small, spec.gamma, spec.flux, operator=op)
    return rect_small, spec, u, op


@pytest.fixture(scope="session")
def small_system(small_setup):
    mesh, spec, u, op = small_setup
    basis = make_sine_basis(8, mesh.gamma_I.length)
    return assemble_operator(mesh, spec, u, basis, operator=op)


@pytest.fixture(scope="session")
def fine_setup(rect_fine):
    spec = DomainSpec(kind=DomainKind.RECTANGLE, gamma=0.999, flux=flux_sine)
    op = RobinOperator(rect_fine, spec.gamma)
    u = solve_mixed_bvp(rect_fine, spec.gamma, spec.flux, operator=op)
    return rect_fine, spec, u, op


@pytest.fixture(scope="session")
def fine_system(fine_setup):
    mesh, spec, u, op = fine_setup
    basis = make_sine_basis(20, mesh.gamma_I.length)
    return assemble_operator(mesh, spec, u, basis, operator=op)
