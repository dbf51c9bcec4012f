import numpy as np
import pytest

from cheegerpack.assembly import assemble
from cheegerpack.eigensolve import smallest_eigenpairs
from cheegerpack.manifold import build_grid

TWO_PI = 2 * np.pi

# Lines collected by tests/test_acceptance.py and echoed after the run.
ACCEPTANCE_LINES = []


class Case:
    """A solved static domain shared between test modules."""

    def __init__(self, kind, resolution, extent, bc, count=10):
        self.grid, self.metric, self.weight = build_grid(kind, resolution, extent)
        self.bc = bc
        self.op = assemble(self.grid, self.metric, self.weight, bc)
        self.basis = smallest_eigenpairs(self.op, count)

    @property
    def fields(self):
        return self.grid, self.metric, self.weight


@pytest.fixture(scope="session")
def interval_case():
    return Case("interval", 513, np.pi, "dirichlet")


@pytest.fixture(scope="session")
def torus_case():
    return Case("torus", (96, 96), (TWO_PI, TWO_PI), "neumann")


@pytest.fixture(scope="session")
def cylinder_case():
    return Case("cylinder", (96, 48), (TWO_PI, np.pi), "neumann")


@pytest.fixture(scope="session")
def small_cylinder():
    return build_grid("cylinder", (48, 24), (TWO_PI, np.pi))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
