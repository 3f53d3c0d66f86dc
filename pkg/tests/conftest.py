import numpy as np
import pytest

from polystress import agglomerate, build_cartesian_mesh, classify_boundary


def right_edge(p):
    return p[0] > 1.0 - 1e-9


@pytest.fixture(scope="session")
def mesh22():
    """2x2 Cartesian unit-square mesh, right edge Neumann."""
    return classify_boundary(build_cartesian_mesh(2, 2), right_edge)


@pytest.fixture(scope="session")
def mesh33():
    return classify_boundary(build_cartesian_mesh(3, 3), right_edge)


@pytest.fixture(scope="session")
def poly_mesh():
    """Small agglomerated polygonal mesh (16 -> 8 elements), right Neumann."""
    base = classify_boundary(build_cartesian_mesh(4, 4), right_edge)
    return agglomerate(base, 8, rng_seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
