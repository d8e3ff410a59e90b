import numpy as np
import pytest

from prodimm.dataio import Dataset
from prodimm.extract import default_tolerances, extract_all, fixture
from prodimm.fields import ChartGrid
from prodimm.reconstruct import reconstruct_immersion


class FixtureBundle:
    """One fixture extracted once per session, plus its rebuild."""

    def __init__(self, name, grid=None, use_analytic=True, **params):
        self.immersion, self.grid = fixture(name, grid=grid, **params)
        self.data = extract_all(self.immersion, self.grid, use_analytic=use_analytic)
        self.tolerances = default_tolerances(self.data)
        self._recon = None

    @property
    def recon(self):
        if self._recon is None:
            self._recon = reconstruct_immersion(
                self.data.metric, self.data.bundle, self.data.sigma, self.data.psi,
                tolerances=self.tolerances)
        return self._recon

    def dataset(self):
        return Dataset.from_extraction(self.data)


def refine(grid: ChartGrid) -> ChartGrid:
    dims = tuple(2 * (d - 1) + 1 for d in grid.dims)
    spacing = tuple(s / 2 for s in grid.spacing)
    return ChartGrid(dims=dims, spacing=spacing, origin=grid.origin)


@pytest.fixture(scope="session")
def f1():
    return FixtureBundle("F1")


@pytest.fixture(scope="session")
def f2():
    return FixtureBundle("F2")


@pytest.fixture(scope="session")
def f3():
    return FixtureBundle("F3")


@pytest.fixture(scope="session")
def f1_fd():
    return FixtureBundle("F1", use_analytic=False)


@pytest.fixture(scope="session")
def f2_fd():
    return FixtureBundle("F2", use_analytic=False)


@pytest.fixture(scope="session")
def f3_fd():
    return FixtureBundle("F3", use_analytic=False)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
