import numpy as np
import pytest

from vbocp import HighFidelityModel, ParameterPoint, generate_test1_mesh
from vbocp.mesh import generate_holed_square_mesh
from vbocp.rom import collect_snapshots


@pytest.fixture(scope="session")
def test1_mesh():
    return generate_test1_mesh(0.1)


@pytest.fixture(scope="session")
def holed_mesh():
    return generate_holed_square_mesh(0.1, hole=((0.4, 0.6), (0.4, 0.6)))


@pytest.fixture(scope="session")
def test1_hf(test1_mesh):
    return HighFidelityModel(test1_mesh)


def random_params(n, seed=7, alpha=0.07, mu_u_range=(0.02, 0.98)):
    rng = np.random.default_rng(seed)
    return [
        ParameterPoint(
            mu1=rng.uniform(6.0, 20.0),
            mu2=rng.uniform(0.5, 3.0),
            mu_u=rng.uniform(*mu_u_range),
            alpha=alpha,
        )
        for _ in range(n)
    ]


@pytest.fixture(scope="session")
def test1_snapshots(test1_hf):
    return collect_snapshots(test1_hf, random_params(12, seed=7))
