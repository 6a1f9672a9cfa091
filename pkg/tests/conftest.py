import numpy as np
import pytest

from kolmodg import Domain, Setup

UNIT = Domain(0.0, 1.0, 0.0, 1.0)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def setup_2x2_p2():
    return Setup.create(UNIT, 2, 2, 2)


@pytest.fixture(scope="session")
def setup_2x2_p2_slab():
    return Setup.create(UNIT, 2, 2, 2, k=0.1, q=1)


@pytest.fixture(scope="session")
def setup_4x4_p1():
    return Setup.create(UNIT, 4, 4, 1)


def project_poly(setup, fn):
    """Exact coefficients of a polynomial that lies in the space."""
    from kolmodg.march import project_initial
    return project_initial(setup.forms, fn, n_extra=6)


def constant_one(setup):
    """Coefficient vector of the constant function 1."""
    u = np.zeros(setup.space.n_dofs)
    for elem in setup.mesh.elements:
        u[setup.space.elem_slice(elem.index)][0] = np.sqrt(elem.area)
    return u
