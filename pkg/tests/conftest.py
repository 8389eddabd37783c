import numpy as np
import pytest

from ebmsurf.shapes import make_box, make_icosphere, make_torus


@pytest.fixture(scope="session")
def sphere_mesh():
    return make_icosphere(radius=0.9, subdivisions=3)


@pytest.fixture(scope="session")
def fine_sphere_mesh():
    return make_icosphere(radius=0.9, subdivisions=4)


@pytest.fixture(scope="session")
def torus_mesh():
    return make_torus()


@pytest.fixture(scope="session")
def box_mesh():
    return make_box()


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)
