import numpy as np
import pytest

from rq1stokes.mesh import generate_box_mesh


@pytest.fixture(scope="session")
def box2():
    return generate_box_mesh((1.0, 1.0, 1.0), (2, 2, 2))


@pytest.fixture(scope="session")
def box3():
    return generate_box_mesh((1.0, 1.0, 1.0), (3, 3, 3))


@pytest.fixture(scope="session")
def centered_box3():
    return generate_box_mesh((1.0, 1.0, 1.0), (3, 3, 3), origin=(-0.5, -0.5, -0.5))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
