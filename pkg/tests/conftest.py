import numpy as np
import pytest

from nlplap.grid import Domain, build_grid, build_pairs
from nlplap.kernel import KernelSpec


def make_problem(n=1, p=2.0, delta=0.1, ratio=4, normalization="lattice", length=1.0):
    h = delta / ratio
    dom = Domain(tuple((0.0, length) for _ in range(n)))
    spec = KernelSpec(n, p, delta)
    grid = build_grid(dom, h, delta)
    return spec, grid, build_pairs(grid, spec, normalization)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
